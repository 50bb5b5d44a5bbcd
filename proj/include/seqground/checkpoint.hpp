#pragma once

// Checkpoint file layout:
//   line 1   JSON manifest {"format", "version", "params": [{name, shape, offset}], "metadata"}
//   rest     raw little-endian IEEE-754 float64 payloads, in manifest order
// Offsets count doubles from the start of the payload.

#include <bit>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "seqground/nn.hpp"

namespace seqground {

inline constexpr const char* kCheckpointFormat = "seqground-checkpoint";
inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
    nlohmann::json metadata = nlohmann::json::object();
    std::vector<std::pair<std::string, Tensor>> tensors;

    const Tensor* find(const std::string& name) const {
        for (const auto& e : tensors)
            if (e.first == name) return &e.second;
        return nullptr;
    }
};

namespace detail {

inline void write_le_doubles(std::ostream& os, std::span<const double> xs) {
    static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);
    for (double v : xs) {
        auto bits = std::bit_cast<std::uint64_t>(v);
        unsigned char bytes[8];
        for (int b = 0; b < 8; ++b) bytes[b] = static_cast<unsigned char>(bits >> (8 * b));
        os.write(reinterpret_cast<const char*>(bytes), 8);
    }
}

inline bool read_le_doubles(std::istream& is, std::span<double> out) {
    for (auto& v : out) {
        unsigned char bytes[8];
        if (!is.read(reinterpret_cast<char*>(bytes), 8)) return false;
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[b]) << (8 * b);
        v = std::bit_cast<double>(bits);
    }
    return true;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const ParameterSet& params,
                            const nlohmann::json& metadata = nlohmann::json::object()) {
    nlohmann::json manifest;
    manifest["format"] = kCheckpointFormat;
    manifest["version"] = kCheckpointVersion;
    manifest["metadata"] = metadata;
    auto& list = manifest["params"] = nlohmann::json::array();
    std::size_t offset = 0;
    for (const auto& [name, t] : params.entries()) {
        list.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
        offset += t.numel();
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write checkpoint '" + path + "'");
    os << manifest.dump() << '\n';
    for (const auto& [name, t] : params.entries()) detail::write_le_doubles(os, t.data());
    if (!os) throw IoError("failed writing checkpoint '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint '" + path + "'");
    std::string header;
    if (!std::getline(is, header)) throw ParseError("checkpoint '" + path + "' has no manifest", 1);
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(header);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("checkpoint manifest is not valid JSON: " + std::string(e.what()), 1);
    }
    if (manifest.value("format", "") != kCheckpointFormat) throw ParseError("not a seqground checkpoint", 1);
    if (manifest.value("version", 0) != kCheckpointVersion)
        throw ParseError("unsupported checkpoint version " + manifest.value("version", nlohmann::json()).dump(), 1);
    Checkpoint ck;
    ck.metadata = manifest.value("metadata", nlohmann::json::object());
    std::size_t expected_offset = 0;
    for (const auto& p : manifest.at("params")) {
        Shape shape = p.at("shape").get<Shape>();
        if (p.at("offset").get<std::size_t>() != expected_offset) throw ParseError("checkpoint offsets are not contiguous", 1);
        std::vector<double> data(shape_numel(shape));
        if (!detail::read_le_doubles(is, data))
            throw ParseError("checkpoint payload truncated at '" + p.at("name").get<std::string>() + "'");
        expected_offset += data.size();
        ck.tensors.emplace_back(p.at("name").get<std::string>(), Tensor(std::move(shape), std::move(data), true));
    }
    if (is.peek() != std::char_traits<char>::eof()) throw ParseError("trailing bytes after checkpoint payload");
    return ck;
}

/// Copies checkpoint values into params; every parameter must be present
/// with a matching shape.
inline void restore_parameters(ParameterSet& params, const Checkpoint& ck) {
    for (const auto& [name, t] : params.entries()) {
        const Tensor* src = ck.find(name);
        if (!src) throw InputError("checkpoint lacks parameter '" + name + "'");
        if (src->shape() != t.shape())
            throw DimensionError("checkpoint shape " + shape_str(src->shape()) + " for '" + name + "' does not match " +
                                 shape_str(t.shape()));
        Tensor dst = t;
        std::copy(src->data().begin(), src->data().end(), dst.mutable_data().begin());
    }
}

}  // namespace seqground
