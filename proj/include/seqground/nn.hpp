#pragma once

#include <cmath>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "seqground/ops.hpp"

namespace seqground {

/// Forward-pass mode. Dropout is active only when training, and then draws
/// its masks from rng.
struct Mode {
    bool training = false;
    std::mt19937_64* rng = nullptr;

    static Mode eval() { return {}; }
    static Mode train(std::mt19937_64& rng) { return {true, &rng}; }
};

/// Ordered, named collection of trainable tensors (shared handles).
class ParameterSet {
  public:
    void add(std::string name, Tensor t) {
        t.set_requires_grad(true);
        entries_.emplace_back(std::move(name), std::move(t));
    }

    void extend(const std::string& prefix, const ParameterSet& other) {
        for (const auto& [name, t] : other.entries_) entries_.emplace_back(prefix + name, t);
    }

    const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }

    std::vector<Tensor> tensors() const {
        std::vector<Tensor> out;
        for (const auto& e : entries_) out.push_back(e.second);
        return out;
    }

    const Tensor* find(const std::string& name) const {
        for (const auto& e : entries_)
            if (e.first == name) return &e.second;
        return nullptr;
    }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& e : entries_) n += e.second.numel();
        return n;
    }

    void zero_grad() {
        for (auto& e : entries_) e.second.zero_grad();
    }

    // Copies values (not handles) from another set with identical names/shapes.
    void copy_values_from(const ParameterSet& other) {
        for (auto& [name, t] : entries_) {
            const Tensor* src = other.find(name);
            if (!src) throw InputError("missing parameter '" + name + "'");
            if (src->shape() != t.shape()) throw DimensionError("shape mismatch for parameter '" + name + "'");
            std::copy(src->data().begin(), src->data().end(), t.mutable_data().begin());
        }
    }

  private:
    std::vector<std::pair<std::string, Tensor>> entries_;
};

/// Uniform in [-s, s], s = sqrt(6 / (fan_in + fan_out)).
inline Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
    double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> u(-s, s);
    std::vector<double> w(fan_in * fan_out);
    for (auto& v : w) v = u(rng);
    return Tensor({fan_in, fan_out}, std::move(w), true);
}

struct Dense {
    Tensor weight;  // in x out
    Tensor bias;    // 1 x out

    Dense() = default;
    Dense(std::size_t in, std::size_t out, std::mt19937_64& rng)
        : weight(glorot_uniform(in, out, rng)), bias(Tensor::zeros({1, out}, true)) {}

    std::size_t in_dim() const { return weight.rows(); }
    std::size_t out_dim() const { return weight.cols(); }

    Tensor forward(const Tensor& x) const { return add(matmul(x, weight), bias); }

    ParameterSet parameters() const {
        ParameterSet ps;
        ps.add("weight", weight);
        ps.add("bias", bias);
        return ps;
    }
};

/// Stack of dense layers. ReLU follows every hidden layer; the last layer's
/// activation is chosen by the caller.
struct Mlp {
    std::vector<Dense> layers;
    bool relu_on_output = false;

    Mlp() = default;
    Mlp(std::size_t in, const std::vector<std::size_t>& widths, bool relu_out, std::mt19937_64& rng)
        : relu_on_output(relu_out) {
        for (auto w : widths) {
            layers.emplace_back(in, w, rng);
            in = w;
        }
    }

    std::size_t out_dim() const { return layers.back().out_dim(); }

    Tensor forward(Tensor x) const {
        for (std::size_t k = 0; k < layers.size(); ++k) {
            x = layers[k].forward(x);
            if (k + 1 < layers.size() || relu_on_output) x = relu(x);
        }
        return x;
    }

    ParameterSet parameters() const {
        ParameterSet ps;
        for (std::size_t k = 0; k < layers.size(); ++k) ps.extend(std::to_string(k) + ".", layers[k].parameters());
        return ps;
    }
};

struct LstmState {
    Tensor h;
    Tensor c;

    static LstmState zeros(std::size_t rows, std::size_t hidden) {
        return {Tensor::zeros({rows, hidden}), Tensor::zeros({rows, hidden})};
    }
};

/// Standard LSTM cell with gates ordered (input, forget, candidate, output).
struct LstmCell {
    Tensor weight;  // (in + hidden) x 4*hidden
    Tensor bias;    // 1 x 4*hidden
    std::size_t input = 0;
    std::size_t hidden = 0;

    LstmCell() = default;
    LstmCell(std::size_t in, std::size_t hid, std::mt19937_64& rng)
        : weight(glorot_uniform(in + hid, 4 * hid, rng)), bias(Tensor::zeros({1, 4 * hid}, true)), input(in),
          hidden(hid) {}

    LstmState step(const Tensor& x, const LstmState& prev) const {
        if (x.cols() != input) throw InputError("lstm input has width " + std::to_string(x.cols()) + ", expected " +
                                                std::to_string(input));
        if (prev.h.cols() != hidden || prev.c.cols() != hidden) throw InputError("lstm state width mismatch");
        auto z = add(matmul(concat_cols({x, prev.h}), weight), bias);
        auto i = sigmoid(slice_cols(z, 0, hidden));
        auto f = sigmoid(slice_cols(z, hidden, hidden));
        auto g = tanh(slice_cols(z, 2 * hidden, hidden));
        auto o = sigmoid(slice_cols(z, 3 * hidden, hidden));
        auto c = add(mul(f, prev.c), mul(i, g));
        auto h = mul(o, tanh(c));
        return {h, c};
    }

    ParameterSet parameters() const {
        ParameterSet ps;
        ps.add("weight", weight);
        ps.add("bias", bias);
        return ps;
    }
};

/// Two stacked LSTM layers; the first layer's hidden state (after dropout at
/// train time) is the second layer's input.
struct TwoLayerLstm {
    LstmCell first;
    LstmCell second;
    double dropout_rate = 0.0;

    struct State {
        LstmState first;
        LstmState second;
    };

    TwoLayerLstm() = default;
    TwoLayerLstm(std::size_t in, std::size_t hid, double rate, std::mt19937_64& rng)
        : first(in, hid, rng), second(hid, hid, rng), dropout_rate(rate) {}

    std::size_t hidden() const { return second.hidden; }

    State zero_state() const { return {LstmState::zeros(1, first.hidden), LstmState::zeros(1, second.hidden)}; }

    State step(const Tensor& x, const State& prev, const Mode& mode) const {
        auto s1 = first.step(x, prev.first);
        auto s2 = second.step(dropout(s1.h, dropout_rate, mode.training, mode.rng), prev.second);
        return {s1, s2};
    }

    ParameterSet parameters() const {
        ParameterSet ps;
        ps.extend("l1.", first.parameters());
        ps.extend("l2.", second.parameters());
        return ps;
    }
};

}  // namespace seqground
