#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "seqground/tensor.hpp"

namespace seqground {

struct GradCheckReport {
    double max_rel_error = 0.0;
    double tol = 0.0;
    std::size_t checked = 0;
    // Parameter/entry where the worst error was seen.
    std::size_t worst_param = 0;
    std::size_t worst_index = 0;
    // False when f is not deterministic; such a check can never pass.
    bool valid = true;
    bool passed = false;
};

inline double relative_error(double analytic, double numeric) {
    double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    return std::abs(analytic - numeric) / denom;
}

/// Compares supplied gradients (one vector per parameter) against central
/// finite differences of f. f must not use a tape itself; it is evaluated
/// with parameter values perturbed in place.
inline GradCheckReport compare_gradients(const std::function<Tensor()>& f, std::vector<Tensor> params,
                                         const std::vector<std::vector<double>>& analytic, double eps, double tol) {
    GradCheckReport report;
    report.tol = tol;
    if (analytic.size() != params.size()) throw UsageError("one analytic gradient per parameter is required");
    double base = f().item();
    if (f().item() != base) {
        report.valid = false;
        return report;
    }
    for (std::size_t p = 0; p < params.size(); ++p) {
        auto values = params[p].mutable_data();
        if (analytic[p].size() != values.size()) throw UsageError("analytic gradient has the wrong length");
        for (std::size_t i = 0; i < values.size(); ++i) {
            double saved = values[i];
            values[i] = saved + eps;
            double up = f().item();
            values[i] = saved - eps;
            double down = f().item();
            values[i] = saved;
            double numeric = (up - down) / (2.0 * eps);
            double err = relative_error(analytic[p][i], numeric);
            if (err > report.max_rel_error) {
                report.max_rel_error = err;
                report.worst_param = p;
                report.worst_index = i;
            }
            ++report.checked;
        }
    }
    report.passed = report.max_rel_error <= tol;
    return report;
}

/// Tape gradients of f with respect to params.
inline std::vector<std::vector<double>> tape_gradients(const std::function<Tensor()>& f, std::vector<Tensor> params) {
    for (auto& p : params) p.zero_grad();
    {
        Tape tape;
        auto loss = f();
        tape.backward(loss);
    }
    std::vector<std::vector<double>> grads;
    for (auto& p : params) grads.push_back(p.grad());
    return grads;
}

/// Max relative error between tape gradients and central differences
/// (f(θ+eps) - f(θ-eps)) / 2eps; passes iff it is within tol.
/// f must be deterministic (dropout off).
inline GradCheckReport grad_check(const std::function<Tensor()>& f, std::vector<Tensor> params, double eps = 1e-5,
                                  double tol = 1e-4) {
    auto analytic = tape_gradients(f, params);
    return compare_gradients(f, std::move(params), analytic, eps, tol);
}

}  // namespace seqground
