#pragma once

#include <stdexcept>
#include <string>

namespace seqground {

// Every error raised by the library derives from Error so callers (the CLI in
// particular) can map categories onto exit codes.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shapes that do not conform for a primitive.
struct DimensionError : Error {
    using Error::Error;
};

// NaN/Inf encountered in a value or gradient.
struct NumericError : Error {
    using Error::Error;
};

// API misuse, e.g. backward on a tensor that is not on the active tape.
struct UsageError : Error {
    using Error::Error;
};

// Bad arguments: empty token lists, degenerate boxes, unsorted stacks.
struct InputError : Error {
    using Error::Error;
};

// Invalid configuration values.
struct ConfigError : Error {
    using Error::Error;
};

// Malformed files. Carries the 1-based line number when known.
struct ParseError : Error {
    ParseError(const std::string& what, std::size_t line = 0)
        : Error(line ? what + " (line " + std::to_string(line) + ")" : what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

  private:
    std::size_t line_;
};

// Missing or unreadable files.
struct IoError : Error {
    using Error::Error;
};

}  // namespace seqground
