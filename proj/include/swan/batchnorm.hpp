#pragma once

#include "swan/ops.hpp"

namespace swan {

/// Running statistics carried between batchnorm calls.
template <typename T>
struct BatchNormState {
    Tensor<T> running_mean;
    Tensor<T> running_var;
    T momentum = T(0.1);
    T eps = T(1e-5);

    explicit BatchNormState(std::size_t channels = 1)
        : running_mean(Tensor<T>::zeros({channels})), running_var(Tensor<T>::full({channels}, T(1))) {}
};

/// Per-channel batch normalization over N, H, W.
///
/// Training mode normalizes with biased batch statistics and folds the
/// unbiased variance into the running estimate; eval mode uses the running
/// estimate and never touches it.
template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, BatchNormState<T>& state,
                      bool training) {
    detail::require_rank(x.shape(), 4, "batchnorm2d");
    const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
    if (gamma.numel() != c || beta.numel() != c || state.running_mean.numel() != c) {
        throw ShapeError("batchnorm2d: parameters do not match " + std::to_string(c) + " channels");
    }
    const std::size_t count = n * plane;
    if (training && count < 2) {
        throw ShapeError("batchnorm2d: training mode needs at least 2 values per channel, got " + to_string(x.shape()));
    }
    std::vector<T> mu(c), inv_std(c);
    if (training) {
        auto rm = state.running_mean.mutable_data();
        auto rv = state.running_var.mutable_data();
        for (std::size_t ch = 0; ch < c; ++ch) {
            T acc = 0;
            for (std::size_t s = 0; s < n; ++s)
                for (std::size_t p = 0; p < plane; ++p) acc += x[(s * c + ch) * plane + p];
            const T m = acc / static_cast<T>(count);
            T var = 0;
            for (std::size_t s = 0; s < n; ++s)
                for (std::size_t p = 0; p < plane; ++p) {
                    const T d = x[(s * c + ch) * plane + p] - m;
                    var += d * d;
                }
            const T unbiased = var / static_cast<T>(count - 1);
            var /= static_cast<T>(count);
            mu[ch] = m;
            inv_std[ch] = T(1) / std::sqrt(var + state.eps);
            rm[ch] = (T(1) - state.momentum) * rm[ch] + state.momentum * m;
            rv[ch] = (T(1) - state.momentum) * rv[ch] + state.momentum * unbiased;
        }
    } else {
        for (std::size_t ch = 0; ch < c; ++ch) {
            mu[ch] = state.running_mean[ch];
            inv_std[ch] = T(1) / std::sqrt(state.running_var[ch] + state.eps);
        }
    }
    std::vector<T> xhat(x.numel()), out(x.numel());
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t p = 0; p < plane; ++p) {
                const std::size_t i = (s * c + ch) * plane + p;
                xhat[i] = (x[i] - mu[ch]) * inv_std[ch];
                out[i] = xhat[i] * gamma[ch] + beta[ch];
            }
    Tensor<T> y(x.shape(), std::move(out));
    if (detail::tracks(x, gamma, beta)) {
        detail::record(y, [xn = x.node(), gn = gamma.node(), bn = beta.node(), yn = y.node(), xhat = std::move(xhat),
                           inv_std = std::move(inv_std), n, c, plane, count, training] {
            if (yn->grad.empty()) return;
            const auto& gy = yn->grad;
            std::vector<T> sum_g(c, T(0)), sum_gh(c, T(0));
            for (std::size_t s = 0; s < n; ++s)
                for (std::size_t ch = 0; ch < c; ++ch)
                    for (std::size_t p = 0; p < plane; ++p) {
                        const std::size_t i = (s * c + ch) * plane + p;
                        sum_g[ch] += gy[i];
                        sum_gh[ch] += gy[i] * xhat[i];
                    }
            if (gn->requires_grad) {
                auto& gg = detail::ensure_grad(*gn);
                for (std::size_t ch = 0; ch < c; ++ch) gg[ch] += sum_gh[ch];
            }
            if (bn->requires_grad) {
                auto& gb = detail::ensure_grad(*bn);
                for (std::size_t ch = 0; ch < c; ++ch) gb[ch] += sum_g[ch];
            }
            if (!xn->requires_grad) return;
            auto& gx = detail::ensure_grad(*xn);
            const T inv_count = T(1) / static_cast<T>(count);
            for (std::size_t s = 0; s < n; ++s)
                for (std::size_t ch = 0; ch < c; ++ch) {
                    const T scale = gn->data[ch] * inv_std[ch];
                    for (std::size_t p = 0; p < plane; ++p) {
                        const std::size_t i = (s * c + ch) * plane + p;
                        if (training) {
                            gx[i] += scale * (gy[i] - sum_g[ch] * inv_count - xhat[i] * sum_gh[ch] * inv_count);
                        } else {
                            gx[i] += scale * gy[i];
                        }
                    }
                }
        });
    }
    return y;
}

}  // namespace swan
