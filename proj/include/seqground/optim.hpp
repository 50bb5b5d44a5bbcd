#pragma once

#include <cmath>
#include <vector>

#include "seqground/nn.hpp"

namespace seqground {

/// Rescales all gradients so their joint L2 norm is at most max_norm.
/// Returns the norm before clipping.
inline double clip_global_norm(ParameterSet& params, double max_norm) {
    double total = 0.0;
    for (const auto& [name, t] : params.entries())
        if (t.has_grad())
            for (double g : t.grad()) total += g * g;
    double norm = std::sqrt(total);
    if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm");
    if (max_norm > 0.0 && norm > max_norm) {
        double s = max_norm / norm;
        for (auto& [name, t] : params.entries()) {
            Tensor h = t;
            if (!h.has_grad()) continue;
            for (auto& g : h.mutable_grad()) g *= s;
        }
    }
    return norm;
}

class Adam {
  public:
    Adam(ParameterSet params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
        for (const auto& [name, t] : params_.entries()) {
            m_.emplace_back(t.numel(), 0.0);
            v_.emplace_back(t.numel(), 0.0);
        }
    }

    double learning_rate() const { return lr_; }
    void set_learning_rate(double lr) { lr_ = lr; }
    ParameterSet& parameters() { return params_; }

    void zero_grad() { params_.zero_grad(); }

    /// Applies one update from the current grad slots. Parameters without a
    /// gradient are treated as having zero gradient.
    void step() {
        ++t_;
        double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        std::size_t k = 0;
        for (const auto& entry : params_.entries()) {
            Tensor p = entry.second;
            auto w = p.mutable_data();
            auto g = p.grad();
            auto& m = m_[k];
            auto& v = v_[k];
            for (std::size_t i = 0; i < w.size(); ++i) {
                m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
                v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
                w[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
            }
            if (!detail::all_finite(w)) throw NumericError("parameter '" + entry.first + "' became non-finite");
            ++k;
        }
    }

  private:
    ParameterSet params_;
    double lr_, beta1_, beta2_, eps_;
    std::vector<std::vector<double>> m_, v_;
    long t_ = 0;
};

}  // namespace seqground
