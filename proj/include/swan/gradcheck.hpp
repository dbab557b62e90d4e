#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "swan/tensor.hpp"

namespace swan {

struct GradCheckOptions {
    double eps = 1e-6;
    double tolerance = 1e-4;
    /// Coordinates probed per input; 0 probes all of them.
    std::size_t max_coords = 0;
    std::uint64_t seed = 7;
};

struct GradCheckResult {
    std::string name;
    double rel_error = 0;
    std::size_t probed = 0;
    bool passed = false;
};

struct NamedTensor {
    std::string name;
    Tensor<double> tensor;
};

/// Relative error ||a - b|| / max(||a||, ||b||, floor). The floor keeps gradients that vanish
/// analytically (e.g. a conv bias feeding batch norm) from comparing finite-difference noise to zero.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-5) {
    double diff = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

/// Compares reverse-mode gradients of `loss_fn` against central differences.
///
/// `loss_fn` must rebuild the scalar loss from the current contents of
/// `inputs` on every call. Inputs are flagged requires_grad here.
inline std::vector<GradCheckResult> gradcheck(const std::function<Tensor<double>()>& loss_fn,
                                              std::vector<NamedTensor> inputs, const GradCheckOptions& opts = {}) {
    Tape<double>::current().clear();
    for (auto& in : inputs) {
        in.tensor.set_requires_grad(true);
        in.tensor.drop_grad();
    }
    backprop(loss_fn());

    std::mt19937_64 rng(opts.seed);
    std::vector<GradCheckResult> results;
    for (auto& in : inputs) {
        const std::size_t count = in.tensor.numel();
        std::vector<std::size_t> coords(count);
        for (std::size_t i = 0; i < count; ++i) coords[i] = i;
        if (opts.max_coords != 0 && opts.max_coords < count) {
            std::shuffle(coords.begin(), coords.end(), rng);
            coords.resize(opts.max_coords);
        }
        std::vector<double> analytic, numeric;
        const auto grad = in.tensor.grad();
        auto values = in.tensor.mutable_data();
        NoGradGuard no_grad;
        for (std::size_t idx : coords) {
            analytic.push_back(grad.empty() ? 0.0 : grad[idx]);
            const double saved = values[idx];
            values[idx] = saved + opts.eps;
            const double up = loss_fn().item();
            values[idx] = saved - opts.eps;
            const double down = loss_fn().item();
            values[idx] = saved;
            numeric.push_back((up - down) / (2 * opts.eps));
        }
        GradCheckResult r;
        r.name = in.name;
        r.probed = coords.size();
        r.rel_error = relative_error(analytic, numeric);
        r.passed = std::isfinite(r.rel_error) && r.rel_error < opts.tolerance;
        results.push_back(r);
    }
    return results;
}

inline bool all_passed(const std::vector<GradCheckResult>& results) {
    return std::all_of(results.begin(), results.end(), [](const auto& r) { return r.passed; });
}

}  // namespace swan
