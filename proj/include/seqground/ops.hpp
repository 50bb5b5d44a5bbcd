#pragma once

// Differentiable primitives. Every op works on rank-1/rank-2 tensors (rank-1
// reads as a single row) and returns a rank-2 result. While a Tape is active
// on the calling thread each result is recorded; results depending on a
// tensor that requires grad carry a backward closure.

#include <Eigen/Core>

#include <cmath>
#include <initializer_list>
#include <random>
#include <vector>

#include "seqground/tensor.hpp"

namespace seqground {

namespace detail {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMajor>;
using Map = Eigen::Map<RowMajor>;

inline MapC view(const Node& n, std::size_t rows, std::size_t cols) {
    return MapC(n.value.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

struct Dims {
    std::size_t rows, cols;
};

inline Dims dims(const Tensor& t) { return {t.rows(), t.cols()}; }

inline void require_finite(const Tensor& t, const char* op) {
    if (!all_finite(t.data())) throw NumericError(std::string("non-finite input to ") + op);
}

inline bool wants_grad(std::initializer_list<const Tensor*> inputs) {
    for (auto* t : inputs)
        if (t->requires_grad()) return true;
    return false;
}

// Builds the result node; records it when a tape is active and wires the
// backward closure when any input needs a gradient.
template <class Backward>
Tensor make_result(std::size_t rows, std::size_t cols, std::vector<double> value, std::vector<Tensor> inputs,
                   Backward&& backward_fn) {
    auto node = std::make_shared<Node>();
    node->shape = {rows, cols};
    node->value = std::move(value);
    if (!all_finite(node->value)) throw NumericError("primitive produced a non-finite value");
    auto* tape = Tape::active();
    if (tape) {
        bool needs = false;
        for (auto& t : inputs) needs = needs || t.requires_grad();
        if (needs) {
            node->requires_grad = true;
            for (auto& t : inputs) node->inputs.push_back(t.handle());
            node->backward = std::forward<Backward>(backward_fn);
        }
        tape->record(node);
    }
    return Tensor(std::move(node));
}

// Gradient slot of input k, or an empty span if it does not need one.
inline std::span<double> input_grad(Node& self, std::size_t k) {
    auto& in = *self.inputs[k];
    if (!in.requires_grad) return {};
    return in.grad_buffer();
}

inline Dims broadcast_dims(Dims a, Dims b, const char* op) {
    auto pick = [&](std::size_t x, std::size_t y) -> std::size_t {
        if (x == y || y == 1) return x;
        if (x == 1) return y;
        throw DimensionError(std::string(op) + ": cannot broadcast " + std::to_string(a.rows) + "x" +
                             std::to_string(a.cols) + " with " + std::to_string(b.rows) + "x" +
                             std::to_string(b.cols));
    };
    return {pick(a.rows, b.rows), pick(a.cols, b.cols)};
}

inline std::size_t bidx(Dims d, std::size_t r, std::size_t c) {
    return (d.rows == 1 ? 0 : r) * d.cols + (d.cols == 1 ? 0 : c);
}

// Elementwise binary op with row/column/scalar broadcasting on either side.
// f(a, b) gives the value, da/db the local partials.
template <class F, class DA, class DB>
Tensor broadcast_binary(const Tensor& a, const Tensor& b, const char* op, F f, DA da, DB db) {
    require_finite(a, op);
    require_finite(b, op);
    Dims ad = dims(a), bd = dims(b);
    Dims out = broadcast_dims(ad, bd, op);
    std::vector<double> value(out.rows * out.cols);
    auto av = a.data(), bv = b.data();
    for (std::size_t r = 0; r < out.rows; ++r)
        for (std::size_t c = 0; c < out.cols; ++c)
            value[r * out.cols + c] = f(av[bidx(ad, r, c)], bv[bidx(bd, r, c)]);
    return make_result(out.rows, out.cols, std::move(value), {a, b}, [=](Node& self) {
        auto ga = input_grad(self, 0), gb = input_grad(self, 1);
        const auto& x = self.inputs[0]->value;
        const auto& y = self.inputs[1]->value;
        for (std::size_t r = 0; r < out.rows; ++r)
            for (std::size_t c = 0; c < out.cols; ++c) {
                double g = self.grad[r * out.cols + c];
                double xv = x[bidx(ad, r, c)], yv = y[bidx(bd, r, c)];
                if (!ga.empty()) ga[bidx(ad, r, c)] += g * da(xv, yv);
                if (!gb.empty()) gb[bidx(bd, r, c)] += g * db(xv, yv);
            }
    });
}

// Elementwise unary op; dfdx receives (input, output).
template <class F, class DF>
Tensor unary(const Tensor& a, const char* op, F f, DF dfdx) {
    require_finite(a, op);
    Dims d = dims(a);
    auto av = a.data();
    std::vector<double> value(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) value[i] = f(av[i]);
    return make_result(d.rows, d.cols, std::move(value), {a}, [=](Node& self) {
        auto ga = input_grad(self, 0);
        const auto& x = self.inputs[0]->value;
        for (std::size_t i = 0; i < x.size(); ++i) ga[i] += self.grad[i] * dfdx(x[i], self.value[i]);
    });
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::require_finite(a, "matmul");
    detail::require_finite(b, "matmul");
    auto ad = detail::dims(a), bd = detail::dims(b);
    if (ad.cols != bd.rows)
        throw DimensionError("matmul: " + std::to_string(ad.rows) + "x" + std::to_string(ad.cols) + " times " +
                             std::to_string(bd.rows) + "x" + std::to_string(bd.cols));
    std::vector<double> value(ad.rows * bd.cols);
    detail::Map(value.data(), ad.rows, bd.cols).noalias() =
        detail::MapC(a.data().data(), ad.rows, ad.cols) * detail::MapC(b.data().data(), bd.rows, bd.cols);
    return detail::make_result(ad.rows, bd.cols, std::move(value), {a, b}, [=](detail::Node& self) {
        detail::MapC g(self.grad.data(), ad.rows, bd.cols);
        auto ga = detail::input_grad(self, 0);
        auto gb = detail::input_grad(self, 1);
        if (!ga.empty())
            detail::Map(ga.data(), ad.rows, ad.cols).noalias() += g * detail::view(*self.inputs[1], bd.rows, bd.cols).transpose();
        if (!gb.empty())
            detail::Map(gb.data(), bd.rows, bd.cols).noalias() += detail::view(*self.inputs[0], ad.rows, ad.cols).transpose() * g;
    });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    return detail::broadcast_binary(
        a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
        [](double, double) { return 1.0; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    return detail::broadcast_binary(
        a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
        [](double, double) { return -1.0; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    return detail::broadcast_binary(
        a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
        [](double x, double) { return x; });
}

// Elementwise max; at ties the gradient goes to the first argument.
inline Tensor maximum(const Tensor& a, const Tensor& b) {
    return detail::broadcast_binary(
        a, b, "maximum", [](double x, double y) { return x >= y ? x : y; },
        [](double x, double y) { return x >= y ? 1.0 : 0.0; }, [](double x, double y) { return x >= y ? 0.0 : 1.0; });
}

inline Tensor scale(const Tensor& a, double s) {
    return detail::unary(a, "scale", [s](double x) { return s * x; }, [s](double, double) { return s; });
}

inline Tensor add_scalar(const Tensor& a, double s) {
    return detail::unary(a, "add_scalar", [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

inline Tensor neg(const Tensor& a) { return scale(a, -1.0); }

inline Tensor relu(const Tensor& a) {
    return detail::unary(a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
                         [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline double sigmoid_value(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

inline Tensor sigmoid(const Tensor& a) {
    return detail::unary(a, "sigmoid", [](double x) { return sigmoid_value(x); },
                         [](double, double y) { return y * (1.0 - y); });
}

inline Tensor tanh(const Tensor& a) {
    return detail::unary(a, "tanh", [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline Tensor square(const Tensor& a) {
    return detail::unary(a, "square", [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

inline Tensor log(const Tensor& a) {
    for (double v : a.data())
        if (!(v > 0.0)) throw NumericError("log of non-positive value");
    return detail::unary(a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

/// Sum of all entries, as a 1x1 tensor.
inline Tensor sum(const Tensor& a) {
    detail::require_finite(a, "sum");
    double s = 0.0;
    for (double v : a.data()) s += v;
    return detail::make_result(1, 1, {s}, {a}, [](detail::Node& self) {
        auto ga = detail::input_grad(self, 0);
        for (auto& g : ga) g += self.grad[0];
    });
}

/// Per-row sums: r x c -> r x 1.
inline Tensor row_sum(const Tensor& a) {
    detail::require_finite(a, "row_sum");
    auto d = detail::dims(a);
    std::vector<double> value(d.rows, 0.0);
    for (std::size_t r = 0; r < d.rows; ++r)
        for (std::size_t c = 0; c < d.cols; ++c) value[r] += a.data()[r * d.cols + c];
    return detail::make_result(d.rows, 1, std::move(value), {a}, [d](detail::Node& self) {
        auto ga = detail::input_grad(self, 0);
        for (std::size_t r = 0; r < d.rows; ++r)
            for (std::size_t c = 0; c < d.cols; ++c) ga[r * d.cols + c] += self.grad[r];
    });
}

/// Column-wise mean over rows: r x c -> 1 x c.
inline Tensor mean_rows(const Tensor& a) {
    detail::require_finite(a, "mean_rows");
    auto d = detail::dims(a);
    std::vector<double> value(d.cols, 0.0);
    for (std::size_t r = 0; r < d.rows; ++r)
        for (std::size_t c = 0; c < d.cols; ++c) value[c] += a.data()[r * d.cols + c];
    for (auto& v : value) v /= static_cast<double>(d.rows);
    return detail::make_result(1, d.cols, std::move(value), {a}, [d](detail::Node& self) {
        auto ga = detail::input_grad(self, 0);
        double inv = 1.0 / static_cast<double>(d.rows);
        for (std::size_t r = 0; r < d.rows; ++r)
            for (std::size_t c = 0; c < d.cols; ++c) ga[r * d.cols + c] += self.grad[c] * inv;
    });
}

inline Tensor squared_l2(const Tensor& a) { return sum(square(a)); }

/// Scales every row to unit L2 norm. Rows whose norm is zero pass through
/// unchanged (identity gradient).
inline Tensor l2_normalize_rows(const Tensor& a) {
    detail::require_finite(a, "l2_normalize_rows");
    auto d = detail::dims(a);
    std::vector<double> norms(d.rows, 0.0);
    std::vector<double> value(a.data().begin(), a.data().end());
    for (std::size_t r = 0; r < d.rows; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < d.cols; ++c) s += value[r * d.cols + c] * value[r * d.cols + c];
        norms[r] = std::sqrt(s);
        if (norms[r] > 0.0)
            for (std::size_t c = 0; c < d.cols; ++c) value[r * d.cols + c] /= norms[r];
    }
    return detail::make_result(d.rows, d.cols, std::move(value), {a}, [d, norms](detail::Node& self) {
        auto ga = detail::input_grad(self, 0);
        for (std::size_t r = 0; r < d.rows; ++r) {
            const double* y = self.value.data() + r * d.cols;
            const double* g = self.grad.data() + r * d.cols;
            double* out = ga.data() + r * d.cols;
            if (norms[r] == 0.0) {
                for (std::size_t c = 0; c < d.cols; ++c) out[c] += g[c];
                continue;
            }
            double dot = 0.0;
            for (std::size_t c = 0; c < d.cols; ++c) dot += g[c] * y[c];
            for (std::size_t c = 0; c < d.cols; ++c) out[c] += (g[c] - y[c] * dot) / norms[r];
        }
    });
}

inline Tensor transpose(const Tensor& a) {
    detail::require_finite(a, "transpose");
    auto d = detail::dims(a);
    std::vector<double> value(d.rows * d.cols);
    for (std::size_t r = 0; r < d.rows; ++r)
        for (std::size_t c = 0; c < d.cols; ++c) value[c * d.rows + r] = a.data()[r * d.cols + c];
    return detail::make_result(d.cols, d.rows, std::move(value), {a}, [d](detail::Node& self) {
        auto ga = detail::input_grad(self, 0);
        for (std::size_t r = 0; r < d.rows; ++r)
            for (std::size_t c = 0; c < d.cols; ++c) ga[r * d.cols + c] += self.grad[c * d.rows + r];
    });
}

/// Main diagonal of a square matrix as a column.
inline Tensor diag(const Tensor& a) {
    auto d = detail::dims(a);
    if (d.rows != d.cols) throw DimensionError("diag requires a square matrix");
    std::vector<double> value(d.rows);
    for (std::size_t i = 0; i < d.rows; ++i) value[i] = a.data()[i * d.cols + i];
    return detail::make_result(d.rows, 1, std::move(value), {a}, [d](detail::Node& self) {
        auto ga = detail::input_grad(self, 0);
        for (std::size_t i = 0; i < d.rows; ++i) ga[i * d.cols + i] += self.grad[i];
    });
}

/// Horizontal concatenation; all parts share the row count.
inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw DimensionError("concat_cols of nothing");
    std::size_t rows = parts.front().rows(), cols = 0;
    std::vector<std::size_t> offsets;
    for (const auto& p : parts) {
        if (p.rows() != rows) throw DimensionError("concat_cols: row counts differ");
        detail::require_finite(p, "concat_cols");
        offsets.push_back(cols);
        cols += p.cols();
    }
    std::vector<double> value(rows * cols);
    for (std::size_t k = 0; k < parts.size(); ++k) {
        std::size_t pc = parts[k].cols();
        auto src = parts[k].data();
        for (std::size_t r = 0; r < rows; ++r)
            std::copy_n(src.begin() + r * pc, pc, value.begin() + r * cols + offsets[k]);
    }
    return detail::make_result(rows, cols, std::move(value), parts, [rows, cols, offsets](detail::Node& self) {
        for (std::size_t k = 0; k < self.inputs.size(); ++k) {
            auto gk = detail::input_grad(self, k);
            if (gk.empty()) continue;
            std::size_t pc = gk.size() / rows;
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < pc; ++c) gk[r * pc + c] += self.grad[r * cols + offsets[k] + c];
        }
    });
}

/// Vertical concatenation; all parts share the column count.
inline Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw DimensionError("concat_rows of nothing");
    std::size_t cols = parts.front().cols(), rows = 0;
    std::vector<double> value;
    for (const auto& p : parts) {
        if (p.cols() != cols) throw DimensionError("concat_rows: column counts differ");
        detail::require_finite(p, "concat_rows");
        rows += p.rows();
        value.insert(value.end(), p.data().begin(), p.data().end());
    }
    return detail::make_result(rows, cols, std::move(value), parts, [](detail::Node& self) {
        std::size_t offset = 0;
        for (std::size_t k = 0; k < self.inputs.size(); ++k) {
            std::size_t n = self.inputs[k]->value.size();
            auto gk = detail::input_grad(self, k);
            for (std::size_t i = 0; i < gk.size(); ++i) gk[i] += self.grad[offset + i];
            offset += n;
        }
    });
}

inline Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count) {
    auto d = detail::dims(a);
    if (count == 0 || begin + count > d.cols) throw DimensionError("slice_cols out of range");
    std::vector<double> value(d.rows * count);
    for (std::size_t r = 0; r < d.rows; ++r)
        std::copy_n(a.data().begin() + r * d.cols + begin, count, value.begin() + r * count);
    return detail::make_result(d.rows, count, std::move(value), {a}, [d, begin, count](detail::Node& self) {
        auto ga = detail::input_grad(self, 0);
        for (std::size_t r = 0; r < d.rows; ++r)
            for (std::size_t c = 0; c < count; ++c) ga[r * d.cols + begin + c] += self.grad[r * count + c];
    });
}

/// Selects rows by index (repeats allowed); gradients scatter-add back.
inline Tensor gather_rows(const Tensor& a, std::vector<std::size_t> index) {
    auto d = detail::dims(a);
    if (index.empty()) throw DimensionError("gather_rows with no indices");
    std::vector<double> value(index.size() * d.cols);
    for (std::size_t k = 0; k < index.size(); ++k) {
        if (index[k] >= d.rows) throw DimensionError("gather_rows index out of range");
        std::copy_n(a.data().begin() + index[k] * d.cols, d.cols, value.begin() + k * d.cols);
    }
    return detail::make_result(index.size(), d.cols, std::move(value), {a}, [d, index](detail::Node& self) {
        auto ga = detail::input_grad(self, 0);
        for (std::size_t k = 0; k < index.size(); ++k)
            for (std::size_t c = 0; c < d.cols; ++c) ga[index[k] * d.cols + c] += self.grad[k * d.cols + c];
    });
}

inline Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count) {
    if (count == 0 || begin + count > a.rows()) throw DimensionError("slice_rows out of range");
    std::vector<std::size_t> index(count);
    std::iota(index.begin(), index.end(), begin);
    return gather_rows(a, std::move(index));
}

/// Repeats a single row n times.
inline Tensor repeat_rows(const Tensor& row, std::size_t n) {
    if (row.rows() != 1) throw DimensionError("repeat_rows expects a single row");
    return gather_rows(row, std::vector<std::size_t>(n, 0));
}

/// Multiplies by a constant mask (no gradient into the mask).
inline Tensor apply_mask(const Tensor& a, const Tensor& mask) {
    if (mask.requires_grad()) throw UsageError("dropout mask must be a constant");
    if (mask.rows() != a.rows() || mask.cols() != a.cols()) throw DimensionError("mask shape does not match input");
    return mul(a, mask);
}

/// Inverted dropout: at train time zeroes entries with probability `rate` and
/// scales survivors by 1/(1-rate); identity otherwise.
inline Tensor dropout(const Tensor& a, double rate, bool training, std::mt19937_64* rng) {
    if (!training || rate <= 0.0) return a;
    if (rate >= 1.0) throw ConfigError("dropout rate must be < 1");
    if (!rng) throw UsageError("dropout in training mode needs an RNG");
    std::bernoulli_distribution keep(1.0 - rate);
    std::vector<double> m(a.numel());
    double s = 1.0 / (1.0 - rate);
    for (auto& v : m) v = keep(*rng) ? s : 0.0;
    return apply_mask(a, Tensor({a.rows(), a.cols()}, std::move(m)));
}

/// Pairwise order-violation penalties: out[k][j] = ||max(0, boxes_j - phrases_k)||^2.
/// The order-embedding similarity is the negation of this.
inline Tensor order_violation(const Tensor& phrases, const Tensor& boxes) {
    detail::require_finite(phrases, "order_violation");
    detail::require_finite(boxes, "order_violation");
    auto pd = detail::dims(phrases), bd = detail::dims(boxes);
    if (pd.cols != bd.cols) throw DimensionError("order_violation: embedding sizes differ");
    std::size_t n = pd.rows, m = bd.rows, d = pd.cols;
    std::vector<double> value(n * m, 0.0);
    auto p = phrases.data(), b = boxes.data();
    for (std::size_t k = 0; k < n; ++k)
        for (std::size_t j = 0; j < m; ++j) {
            double s = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                double v = b[j * d + c] - p[k * d + c];
                if (v > 0.0) s += v * v;
            }
            value[k * m + j] = s;
        }
    return detail::make_result(n, m, std::move(value), {phrases, boxes}, [n, m, d](detail::Node& self) {
        auto gp = detail::input_grad(self, 0), gb = detail::input_grad(self, 1);
        const auto& p = self.inputs[0]->value;
        const auto& b = self.inputs[1]->value;
        for (std::size_t k = 0; k < n; ++k)
            for (std::size_t j = 0; j < m; ++j) {
                double g = self.grad[k * m + j];
                if (g == 0.0) continue;
                for (std::size_t c = 0; c < d; ++c) {
                    double v = b[j * d + c] - p[k * d + c];
                    if (v <= 0.0) continue;
                    if (!gb.empty()) gb[j * d + c] += 2.0 * v * g;
                    if (!gp.empty()) gp[k * d + c] -= 2.0 * v * g;
                }
            }
    });
}

/// Weighted binary cross-entropy summed over entries:
///   -sum_i w_i [y_i log p_i + (1 - y_i) log(1 - p_i)]
/// Probabilities are clamped to [1e-12, 1 - 1e-12]; clamped entries pass no
/// gradient. Entries with zero weight are skipped entirely.
inline Tensor binary_cross_entropy(const Tensor& probs, std::span<const double> labels,
                                   std::span<const double> weights) {
    constexpr double kEps = 1e-12;
    if (labels.size() != probs.numel() || weights.size() != probs.numel())
        throw DimensionError("binary_cross_entropy: label/weight count does not match predictions");
    auto p = probs.data();
    double loss = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (weights[i] == 0.0) continue;
        if (!std::isfinite(p[i])) throw NumericError("non-finite probability");
        double q = std::clamp(p[i], kEps, 1.0 - kEps);
        loss -= weights[i] * (labels[i] * std::log(q) + (1.0 - labels[i]) * std::log(1.0 - q));
    }
    std::vector<double> y(labels.begin(), labels.end()), w(weights.begin(), weights.end());
    return detail::make_result(1, 1, {loss}, {probs}, [y, w](detail::Node& self) {
        auto gp = detail::input_grad(self, 0);
        const auto& p = self.inputs[0]->value;
        for (std::size_t i = 0; i < p.size(); ++i) {
            if (w[i] == 0.0) continue;
            if (p[i] < kEps || p[i] > 1.0 - kEps) continue;
            gp[i] += self.grad[0] * w[i] * (-(y[i] / p[i]) + (1.0 - y[i]) / (1.0 - p[i]));
        }
    });
}

}  // namespace seqground
