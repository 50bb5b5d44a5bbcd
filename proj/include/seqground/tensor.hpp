#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "seqground/errors.hpp"

namespace seqground {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

class Tape;

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> value;
    // Empty until something flows into it during backward.
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;
    const Tape* tape = nullptr;

    std::span<double> grad_buffer() {
        if (grad.empty()) grad.assign(value.size(), 0.0);
        return grad;
    }
};

inline bool all_finite(std::span<const double> xs) {
    return std::all_of(xs.begin(), xs.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace detail

/// Dense row-major real array with an optional gradient slot.
///
/// Tensor is a cheap handle: copies share the same storage, which is what
/// lets a parameter be referenced from the graph and from an optimizer at
/// once. Use clone() for an independent copy.
class Tensor {
  public:
    Tensor() = default;

    Tensor(Shape shape, std::vector<double> data, bool requires_grad = false)
        : node_(std::make_shared<detail::Node>()) {
        for (auto d : shape)
            if (d == 0) throw DimensionError("tensor dimensions must be positive: " + shape_str(shape));
        if (shape.empty()) throw DimensionError("tensor needs at least one dimension");
        if (shape_numel(shape) != data.size())
            throw DimensionError("data length " + std::to_string(data.size()) + " does not match shape " +
                                 shape_str(shape));
        if (!detail::all_finite(data)) throw NumericError("non-finite value in tensor data");
        node_->shape = std::move(shape);
        node_->value = std::move(data);
        node_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        auto n = shape_numel(shape);
        return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
    }

    static Tensor scalar(double v) { return Tensor({1, 1}, {v}); }

    static Tensor row(std::span<const double> xs) {
        return Tensor({1, xs.size()}, std::vector<double>(xs.begin(), xs.end()));
    }

    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
        return Tensor({rows, cols}, std::move(data));
    }

    bool defined() const noexcept { return node_ != nullptr; }

    const Shape& shape() const { return node().shape; }
    std::size_t numel() const { return node().value.size(); }
    std::size_t rank() const { return node().shape.size(); }

    // Rank-1 tensors read as a single row.
    std::size_t rows() const {
        const auto& s = shape();
        if (s.size() == 1) return 1;
        if (s.size() == 2) return s[0];
        throw DimensionError("rows() requires rank <= 2, got " + shape_str(s));
    }
    std::size_t cols() const {
        const auto& s = shape();
        if (s.size() == 1) return s[0];
        if (s.size() == 2) return s[1];
        throw DimensionError("cols() requires rank <= 2, got " + shape_str(s));
    }

    std::span<const double> data() const { return node().value; }
    // Direct write access for initializers and optimizers. Bypasses the tape.
    std::span<double> mutable_data() { return node().value; }

    double operator[](std::size_t i) const { return node().value[i]; }
    double at(std::size_t r, std::size_t c) const { return node().value[r * cols() + c]; }

    double item() const {
        if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
        return node().value[0];
    }

    std::vector<double> to_vector() const { return node().value; }

    bool requires_grad() const { return node().requires_grad; }
    Tensor& set_requires_grad(bool on) {
        node().requires_grad = on;
        return *this;
    }

    bool has_grad() const { return !node().grad.empty(); }

    // Gradient, or zeros when nothing has flowed into this tensor.
    std::vector<double> grad() const {
        const auto& n = node();
        if (n.grad.empty()) return std::vector<double>(n.value.size(), 0.0);
        return n.grad;
    }
    std::span<double> mutable_grad() { return node().grad_buffer(); }

    void zero_grad() { node().grad.clear(); }

    // Same values, no history, no gradient requirement.
    Tensor detach() const { return Tensor(shape(), node().value); }
    Tensor clone() const { return Tensor(shape(), node().value, requires_grad()); }

    bool same_storage(const Tensor& other) const { return node_ == other.node_; }

    const std::shared_ptr<detail::Node>& handle() const { return node_; }
    explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}

  private:
    detail::Node& node() const {
        if (!node_) throw UsageError("use of an undefined tensor");
        return *node_;
    }

    std::shared_ptr<detail::Node> node_;
};

/// Ordered record of the primitive operations executed while the tape is
/// active on the current thread. Constructing a Tape activates it; the
/// previous tape (if any) is restored on destruction.
class Tape {
  public:
    Tape() : previous_(current()) { current() = this; }
    ~Tape() { current() = previous_; }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active() { return current(); }

    std::size_t size() const { return nodes_.size(); }

    void record(const std::shared_ptr<detail::Node>& node) {
        node->tape = this;
        nodes_.push_back(node);
    }

    /// Fills grad slots of every tensor reachable from loss. Each recorded
    /// node is visited once, in reverse recording order.
    void backward(const Tensor& loss) {
        if (!loss.defined()) throw UsageError("backward on an undefined tensor");
        auto& root = *loss.handle();
        if (root.tape != this) throw UsageError("backward on a tensor that is not on this tape");
        if (root.value.size() != 1) throw UsageError("backward requires a scalar loss, got " + shape_str(root.shape));
        if (consumed_) throw UsageError("backward already ran on this tape");
        consumed_ = true;
        root.grad_buffer()[0] += 1.0;
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            auto& node = **it;
            if (node.grad.empty() || !node.backward) continue;
            node.backward(node);
            if (!detail::all_finite(node.grad)) throw NumericError("non-finite gradient during backward");
        }
    }

  private:
    static Tape*& current() {
        thread_local Tape* tape = nullptr;
        return tape;
    }

    std::vector<std::shared_ptr<detail::Node>> nodes_;
    Tape* previous_;
    bool consumed_ = false;
};

inline void backward(const Tensor& loss) {
    auto* tape = Tape::active();
    if (!tape) throw UsageError("backward called with no active tape");
    tape->backward(loss);
}

}  // namespace seqground
