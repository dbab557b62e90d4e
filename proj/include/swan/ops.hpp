#pragma once

// Differentiable tensor operators. Every function here records its backward
// rule on the thread's tape when any input requires grad.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <type_traits>
#include <utility>
#include <vector>

#include "swan/tensor.hpp"

namespace swan {

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

inline void require_same_shape(const Shape& a, const Shape& b, const char* what) {
    if (a != b) {
        throw ShapeError(std::string(what) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
    }
}

/// out[i] = x[index[i]], or 0 where index[i] < 0. Backward scatters.
template <typename T>
Tensor<T> gather(const Tensor<T>& x, Shape out_shape, std::vector<std::ptrdiff_t> index) {
    const auto& src = x.data();
    std::vector<T> out(index.size());
    for (std::size_t i = 0; i < index.size(); ++i) out[i] = index[i] < 0 ? T(0) : src[index[i]];
    Tensor<T> y(std::move(out_shape), std::move(out));
    if (tracks(x)) {
        record(y, [xn = x.node(), yn = y.node(), idx = std::move(index)] {
            if (yn->grad.empty()) return;
            auto& gx = ensure_grad(*xn);
            for (std::size_t i = 0; i < idx.size(); ++i) {
                if (idx[i] >= 0) gx[idx[i]] += yn->grad[i];
            }
        });
    }
    return y;
}

template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary(const Tensor<T>& x, Fwd fwd, Deriv deriv_from_output) {
    const auto& src = x.data();
    std::vector<T> out(src.size());
    std::transform(src.begin(), src.end(), out.begin(), fwd);
    Tensor<T> y(x.shape(), std::move(out));
    if (tracks(x)) {
        record(y, [xn = x.node(), yn = y.node(), deriv_from_output] {
            if (yn->grad.empty()) return;
            auto& gx = ensure_grad(*xn);
            for (std::size_t i = 0; i < gx.size(); ++i) {
                gx[i] += yn->grad[i] * deriv_from_output(xn->data[i], yn->data[i]);
            }
        });
    }
    return y;
}

}  // namespace detail

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    if (numel(shape) != x.numel()) {
        throw ShapeError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
    }
    Tensor<T> y(std::move(shape), std::vector<T>(x.data().begin(), x.data().end()));
    if (detail::tracks(x)) {
        detail::record(y, [xn = x.node(), yn = y.node()] {
            if (yn->grad.empty()) return;
            auto& gx = detail::ensure_grad(*xn);
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += yn->grad[i];
        });
    }
    return y;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a.shape(), b.shape(), "add");
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    Tensor<T> y(a.shape(), std::move(out));
    if (detail::tracks(a, b)) {
        detail::record(y, [an = a.node(), bn = b.node(), yn = y.node()] {
            if (yn->grad.empty()) return;
            for (auto* n : {an.get(), bn.get()}) {
                if (!n->requires_grad) continue;
                auto& g = detail::ensure_grad(*n);
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += yn->grad[i];
            }
        });
    }
    return y;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a.shape(), b.shape(), "sub");
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
    Tensor<T> y(a.shape(), std::move(out));
    if (detail::tracks(a, b)) {
        detail::record(y, [an = a.node(), bn = b.node(), yn = y.node()] {
            if (yn->grad.empty()) return;
            if (an->requires_grad) {
                auto& g = detail::ensure_grad(*an);
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += yn->grad[i];
            }
            if (bn->requires_grad) {
                auto& g = detail::ensure_grad(*bn);
                for (std::size_t i = 0; i < g.size(); ++i) g[i] -= yn->grad[i];
            }
        });
    }
    return y;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a.shape(), b.shape(), "mul");
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    Tensor<T> y(a.shape(), std::move(out));
    if (detail::tracks(a, b)) {
        detail::record(y, [an = a.node(), bn = b.node(), yn = y.node()] {
            if (yn->grad.empty()) return;
            if (an->requires_grad) {
                auto& g = detail::ensure_grad(*an);
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += yn->grad[i] * bn->data[i];
            }
            if (bn->requires_grad) {
                auto& g = detail::ensure_grad(*bn);
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += yn->grad[i] * an->data[i];
            }
        });
    }
    return y;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T s) {
    return detail::unary(
        x, [s](T v) { return v * s; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    return detail::unary(
        x, [](T v) { return v > T(0) ? v : T(0); }, [](T in, T) { return in > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    return detail::unary(
        x,
        [](T v) {
            // Split by sign so exp never overflows.
            if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
            const T e = std::exp(v);
            return e / (T(1) + e);
        },
        [](T, T out) { return out * (T(1) - out); });
}

enum class Pointwise { relu, sigmoid };

template <typename T>
Tensor<T> pointwise(const Tensor<T>& x, Pointwise kind) {
    return kind == Pointwise::relu ? relu(x) : sigmoid(x);
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    T acc = 0;
    for (T v : x.data()) acc += v;
    Tensor<T> y = Tensor<T>::scalar(acc);
    if (detail::tracks(x)) {
        detail::record(y, [xn = x.node(), yn = y.node()] {
            if (yn->grad.empty()) return;
            auto& gx = detail::ensure_grad(*xn);
            for (auto& g : gx) g += yn->grad[0];
        });
    }
    return y;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
    return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

/// sum(x * weights) where `weights` is a constant of the same shape.
template <typename T>
Tensor<T> weighted_sum(const Tensor<T>& x, std::span<const T> weights) {
    if (weights.size() != x.numel()) throw ShapeError("weighted_sum: weight count mismatch");
    T acc = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) acc += x[i] * weights[i];
    Tensor<T> y = Tensor<T>::scalar(acc);
    if (detail::tracks(x)) {
        detail::record(y, [xn = x.node(), yn = y.node(), w = std::vector<T>(weights.begin(), weights.end())] {
            if (yn->grad.empty()) return;
            auto& gx = detail::ensure_grad(*xn);
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += yn->grad[0] * w[i];
        });
    }
    return y;
}

/// Softmax over the last axis, max-subtracted.
template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x) {
    const std::size_t len = x.shape().back();
    const std::size_t rows = x.numel() / len;
    std::vector<T> out(x.numel());
    const auto src = x.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const T* in = src.data() + r * len;
        T* o = out.data() + r * len;
        const T peak = *std::max_element(in, in + len);
        T total = 0;
        for (std::size_t i = 0; i < len; ++i) {
            o[i] = std::exp(in[i] - peak);
            total += o[i];
        }
        const T inv = T(1) / total;
        for (std::size_t i = 0; i < len; ++i) o[i] *= inv;
    }
    Tensor<T> y(x.shape(), std::move(out));
    if (detail::tracks(x)) {
        detail::record(y, [xn = x.node(), yn = y.node(), len, rows] {
            if (yn->grad.empty()) return;
            auto& gx = detail::ensure_grad(*xn);
            for (std::size_t r = 0; r < rows; ++r) {
                const T* p = yn->data.data() + r * len;
                const T* g = yn->grad.data() + r * len;
                T dot = 0;
                for (std::size_t i = 0; i < len; ++i) dot += p[i] * g[i];
                for (std::size_t i = 0; i < len; ++i) gx[r * len + i] += p[i] * (g[i] - dot);
            }
        });
    }
    return y;
}

/// Normalizes each last-axis slice to zero mean / unit variance, then applies
/// the per-feature affine (gamma, beta).
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5)) {
    const std::size_t len = x.shape().back();
    if (gamma.numel() != len || beta.numel() != len) throw ShapeError("layer_norm: affine size mismatch");
    const std::size_t rows = x.numel() / len;
    std::vector<T> xhat(x.numel());
    std::vector<T> inv_std(rows);
    std::vector<T> out(x.numel());
    const auto src = x.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const T* in = src.data() + r * len;
        T mu = 0;
        for (std::size_t i = 0; i < len; ++i) mu += in[i];
        mu /= static_cast<T>(len);
        T var = 0;
        for (std::size_t i = 0; i < len; ++i) var += (in[i] - mu) * (in[i] - mu);
        var /= static_cast<T>(len);
        inv_std[r] = T(1) / std::sqrt(var + eps);
        for (std::size_t i = 0; i < len; ++i) {
            const T h = (in[i] - mu) * inv_std[r];
            xhat[r * len + i] = h;
            out[r * len + i] = h * gamma[i] + beta[i];
        }
    }
    Tensor<T> y(x.shape(), std::move(out));
    if (detail::tracks(x, gamma, beta)) {
        detail::record(y, [xn = x.node(), gn = gamma.node(), bn = beta.node(), yn = y.node(),
                           xhat = std::move(xhat), inv_std = std::move(inv_std), len, rows] {
            if (yn->grad.empty()) return;
            const auto& gy = yn->grad;
            if (gn->requires_grad || bn->requires_grad) {
                auto& gg = detail::ensure_grad(*gn);
                auto& gb = detail::ensure_grad(*bn);
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t i = 0; i < len; ++i) {
                        gg[i] += gy[r * len + i] * xhat[r * len + i];
                        gb[i] += gy[r * len + i];
                    }
                }
            }
            if (!xn->requires_grad) return;
            auto& gx = detail::ensure_grad(*xn);
            const T inv_len = T(1) / static_cast<T>(len);
            for (std::size_t r = 0; r < rows; ++r) {
                T mean_g = 0, mean_gh = 0;
                for (std::size_t i = 0; i < len; ++i) {
                    const T gh = gy[r * len + i] * gn->data[i];
                    mean_g += gh;
                    mean_gh += gh * xhat[r * len + i];
                }
                mean_g *= inv_len;
                mean_gh *= inv_len;
                for (std::size_t i = 0; i < len; ++i) {
                    const T gh = gy[r * len + i] * gn->data[i];
                    gx[r * len + i] += inv_std[r] * (gh - mean_g - xhat[r * len + i] * mean_gh);
                }
            }
        });
    }
    return y;
}

/// Affine map over the last axis: out = x * w^T + b, with w of shape [Dout, Din].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const std::optional<std::type_identity_t<Tensor<T>>>& b = std::nullopt) {
    detail::require_rank(w.shape(), 2, "linear weight");
    const std::size_t din = x.shape().back();
    const std::size_t dout = w.dim(0);
    if (w.dim(1) != din) {
        throw ShapeError("linear: input features " + std::to_string(din) + " vs weight " + to_string(w.shape()));
    }
    if (b && b->numel() != dout) throw ShapeError("linear: bias length mismatch");
    const std::size_t rows = x.numel() / din;
    Shape out_shape = x.shape();
    out_shape.back() = dout;
    std::vector<T> out(rows * dout);
    {
        detail::ConstMatMap<T> X(x.data().data(), rows, din);
        detail::ConstMatMap<T> W(w.data().data(), dout, din);
        detail::MatMap<T> Y(out.data(), rows, dout);
        Y.noalias() = X * W.transpose();
        if (b) {
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < dout; ++j) out[r * dout + j] += (*b)[j];
        }
    }
    Tensor<T> y(std::move(out_shape), std::move(out));
    const bool with_bias = b.has_value();
    const bool track = with_bias ? detail::tracks(x, w, *b) : detail::tracks(x, w);
    if (track) {
        auto bn = with_bias ? b->node() : nullptr;
        detail::record(y, [xn = x.node(), wn = w.node(), bn, yn = y.node(), rows, din, dout] {
            if (yn->grad.empty()) return;
            detail::ConstMatMap<T> G(yn->grad.data(), rows, dout);
            if (xn->requires_grad) {
                auto& gx = detail::ensure_grad(*xn);
                detail::MatMap<T> GX(gx.data(), rows, din);
                GX.noalias() += G * detail::ConstMatMap<T>(wn->data.data(), dout, din);
            }
            if (wn->requires_grad) {
                auto& gw = detail::ensure_grad(*wn);
                detail::MatMap<T> GW(gw.data(), dout, din);
                GW.noalias() += G.transpose() * detail::ConstMatMap<T>(xn->data.data(), rows, din);
            }
            if (bn && bn->requires_grad) {
                auto& gb = detail::ensure_grad(*bn);
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < dout; ++j) gb[j] += yn->grad[r * dout + j];
            }
        });
    }
    return y;
}

/// Batched product of [B, M, K] with [B, K, N] (or [B, N, K] when transpose_b).
template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b = false) {
    detail::require_rank(a.shape(), 3, "bmm lhs");
    detail::require_rank(b.shape(), 3, "bmm rhs");
    const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2);
    const std::size_t n = transpose_b ? b.dim(1) : b.dim(2);
    const std::size_t kb = transpose_b ? b.dim(2) : b.dim(1);
    if (b.dim(0) != batch || kb != k) {
        throw ShapeError("bmm: incompatible " + to_string(a.shape()) + " x " + to_string(b.shape()));
    }
    std::vector<T> out(batch * m * n);
    for (std::size_t i = 0; i < batch; ++i) {
        detail::ConstMatMap<T> A(a.data().data() + i * m * k, m, k);
        detail::MatMap<T> Y(out.data() + i * m * n, m, n);
        if (transpose_b)
            Y.noalias() = A * detail::ConstMatMap<T>(b.data().data() + i * n * k, n, k).transpose();
        else
            Y.noalias() = A * detail::ConstMatMap<T>(b.data().data() + i * k * n, k, n);
    }
    Tensor<T> y(Shape{batch, m, n}, std::move(out));
    if (detail::tracks(a, b)) {
        detail::record(y, [an = a.node(), bn = b.node(), yn = y.node(), batch, m, n, k, transpose_b] {
            if (yn->grad.empty()) return;
            for (std::size_t i = 0; i < batch; ++i) {
                detail::ConstMatMap<T> G(yn->grad.data() + i * m * n, m, n);
                if (an->requires_grad) {
                    auto& ga = detail::ensure_grad(*an);
                    detail::MatMap<T> GA(ga.data() + i * m * k, m, k);
                    if (transpose_b)
                        GA.noalias() += G * detail::ConstMatMap<T>(bn->data.data() + i * n * k, n, k);
                    else
                        GA.noalias() += G * detail::ConstMatMap<T>(bn->data.data() + i * k * n, k, n).transpose();
                }
                if (bn->requires_grad) {
                    auto& gb = detail::ensure_grad(*bn);
                    detail::ConstMatMap<T> A(an->data.data() + i * m * k, m, k);
                    if (transpose_b) {
                        detail::MatMap<T> GB(gb.data() + i * n * k, n, k);
                        GB.noalias() += G.transpose() * A;
                    } else {
                        detail::MatMap<T> GB(gb.data() + i * k * n, k, n);
                        GB.noalias() += A.transpose() * G;
                    }
                }
            }
        });
    }
    return y;
}

/// out[i] = x[i] + y[i mod |y|]; |y| must divide |x|.
template <typename T>
Tensor<T> add_periodic(const Tensor<T>& x, const Tensor<T>& y) {
    const std::size_t period = y.numel();
    if (x.numel() % period != 0) {
        throw ShapeError("add_periodic: " + to_string(y.shape()) + " does not tile " + to_string(x.shape()));
    }
    std::vector<T> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i % period];
    Tensor<T> z(x.shape(), std::move(out));
    if (detail::tracks(x, y)) {
        detail::record(z, [xn = x.node(), yn = y.node(), zn = z.node(), period] {
            if (zn->grad.empty()) return;
            if (xn->requires_grad) {
                auto& g = detail::ensure_grad(*xn);
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += zn->grad[i];
            }
            if (yn->requires_grad) {
                auto& g = detail::ensure_grad(*yn);
                for (std::size_t i = 0; i < zn->grad.size(); ++i) g[i % period] += zn->grad[i];
            }
        });
    }
    return z;
}

// ---------------------------------------------------------------------------
// Channel-axis utilities (N x C x H x W)

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw ShapeError("concat_channels: no inputs");
    const Shape& s0 = parts.front().shape();
    detail::require_rank(s0, 4, "concat_channels");
    std::size_t channels = 0;
    for (const auto& p : parts) {
        detail::require_rank(p.shape(), 4, "concat_channels");
        if (p.dim(0) != s0[0] || p.dim(2) != s0[2] || p.dim(3) != s0[3]) {
            throw ShapeError("concat_channels: " + to_string(p.shape()) + " does not align with " + to_string(s0));
        }
        channels += p.dim(1);
    }
    const std::size_t n = s0[0], plane = s0[2] * s0[3];
    std::vector<T> out(n * channels * plane);
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const std::size_t c = p.dim(1);
        for (std::size_t b = 0; b < n; ++b) {
            std::copy_n(p.data().data() + b * c * plane, c * plane, out.data() + (b * channels + offset) * plane);
        }
        offset += c;
    }
    Tensor<T> y(Shape{n, channels, s0[2], s0[3]}, std::move(out));
    if (detail::tracks_any(parts)) {
        std::vector<std::shared_ptr<TensorNode<T>>> nodes;
        for (const auto& p : parts) nodes.push_back(p.node());
        detail::record(y, [nodes = std::move(nodes), yn = y.node(), n, channels, plane] {
            if (yn->grad.empty()) return;
            std::size_t offset = 0;
            for (const auto& pn : nodes) {
                const std::size_t c = pn->shape[1];
                if (pn->requires_grad) {
                    auto& g = detail::ensure_grad(*pn);
                    for (std::size_t b = 0; b < n; ++b) {
                        const T* src = yn->grad.data() + (b * channels + offset) * plane;
                        T* dst = g.data() + b * c * plane;
                        for (std::size_t i = 0; i < c * plane; ++i) dst[i] += src[i];
                    }
                }
                offset += c;
            }
        });
    }
    return y;
}

/// Channels [begin, end) of an N x C x H x W tensor.
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, std::size_t begin, std::size_t end) {
    detail::require_rank(x.shape(), 4, "slice_channels");
    if (begin >= end || end > x.dim(1)) throw ShapeError("slice_channels: bad channel range");
    const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3), k = end - begin;
    std::vector<T> out(n * k * plane);
    for (std::size_t b = 0; b < n; ++b) {
        std::copy_n(x.data().data() + (b * c + begin) * plane, k * plane, out.data() + b * k * plane);
    }
    Tensor<T> y(Shape{n, k, x.dim(2), x.dim(3)}, std::move(out));
    if (detail::tracks(x)) {
        detail::record(y, [xn = x.node(), yn = y.node(), n, c, plane, k, begin] {
            if (yn->grad.empty()) return;
            auto& g = detail::ensure_grad(*xn);
            for (std::size_t b = 0; b < n; ++b) {
                const T* src = yn->grad.data() + b * k * plane;
                T* dst = g.data() + (b * c + begin) * plane;
                for (std::size_t i = 0; i < k * plane; ++i) dst[i] += src[i];
            }
        });
    }
    return y;
}

/// Splits the channel axis into two equal halves.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> chunk_channels(const Tensor<T>& x) {
    detail::require_rank(x.shape(), 4, "chunk_channels");
    const std::size_t c = x.dim(1);
    if (c % 2 != 0) throw ShapeError("chunk_channels: odd channel count " + std::to_string(c));
    return {slice_channels(x, 0, c / 2), slice_channels(x, c / 2, c)};
}

/// x[N,C,H,W] * w[N,C] broadcast over the spatial plane. `w` may also be N x C x 1 x 1.
template <typename T>
Tensor<T> scale_channels(const Tensor<T>& x, const Tensor<T>& w) {
    detail::require_rank(x.shape(), 4, "scale_channels");
    const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
    if (w.numel() != n * c) {
        throw ShapeError("scale_channels: weights " + to_string(w.shape()) + " vs input " + to_string(x.shape()));
    }
    std::vector<T> out(x.numel());
    for (std::size_t i = 0; i < n * c; ++i)
        for (std::size_t p = 0; p < plane; ++p) out[i * plane + p] = x[i * plane + p] * w[i];
    Tensor<T> y(x.shape(), std::move(out));
    if (detail::tracks(x, w)) {
        detail::record(y, [xn = x.node(), wn = w.node(), yn = y.node(), nc = n * c, plane] {
            if (yn->grad.empty()) return;
            const auto& gy = yn->grad;
            if (xn->requires_grad) {
                auto& gx = detail::ensure_grad(*xn);
                for (std::size_t i = 0; i < nc; ++i)
                    for (std::size_t p = 0; p < plane; ++p) gx[i * plane + p] += gy[i * plane + p] * wn->data[i];
            }
            if (wn->requires_grad) {
                auto& gw = detail::ensure_grad(*wn);
                for (std::size_t i = 0; i < nc; ++i) {
                    T acc = 0;
                    for (std::size_t p = 0; p < plane; ++p) acc += gy[i * plane + p] * xn->data[i * plane + p];
                    gw[i] += acc;
                }
            }
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// Spatial resampling

template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x) {
    detail::require_rank(x.shape(), 4, "maxpool2d");
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (h % 2 != 0 || w % 2 != 0) {
        throw ShapeError("maxpool2d: odd spatial extent " + to_string(x.shape()));
    }
    const std::size_t ho = h / 2, wo = w / 2;
    std::vector<T> out(n * c * ho * wo);
    std::vector<std::size_t> arg(out.size());
    const auto src = x.data();
    for (std::size_t p = 0; p < n * c; ++p) {
        for (std::size_t i = 0; i < ho; ++i) {
            for (std::size_t j = 0; j < wo; ++j) {
                std::size_t best = (p * h + 2 * i) * w + 2 * j;
                for (std::size_t di = 0; di < 2; ++di)
                    for (std::size_t dj = 0; dj < 2; ++dj) {
                        const std::size_t idx = (p * h + 2 * i + di) * w + 2 * j + dj;
                        if (src[idx] > src[best]) best = idx;
                    }
                const std::size_t o = (p * ho + i) * wo + j;
                out[o] = src[best];
                arg[o] = best;
            }
        }
    }
    Tensor<T> y(Shape{n, c, ho, wo}, std::move(out));
    if (detail::tracks(x)) {
        detail::record(y, [xn = x.node(), yn = y.node(), arg = std::move(arg)] {
            if (yn->grad.empty()) return;
            auto& gx = detail::ensure_grad(*xn);
            for (std::size_t o = 0; o < arg.size(); ++o) gx[arg[o]] += yn->grad[o];
        });
    }
    return y;
}

template <typename T>
Tensor<T> global_avgpool(const Tensor<T>& x) {
    detail::require_rank(x.shape(), 4, "global_avgpool");
    const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
    std::vector<T> out(n * c);
    for (std::size_t i = 0; i < n * c; ++i) {
        T acc = 0;
        for (std::size_t p = 0; p < plane; ++p) acc += x[i * plane + p];
        out[i] = acc / static_cast<T>(plane);
    }
    Tensor<T> y(Shape{n, c, 1, 1}, std::move(out));
    if (detail::tracks(x)) {
        detail::record(y, [xn = x.node(), yn = y.node(), plane] {
            if (yn->grad.empty()) return;
            auto& gx = detail::ensure_grad(*xn);
            const T inv = T(1) / static_cast<T>(plane);
            for (std::size_t i = 0; i < yn->grad.size(); ++i)
                for (std::size_t p = 0; p < plane; ++p) gx[i * plane + p] += yn->grad[i] * inv;
        });
    }
    return y;
}

namespace detail {
struct LerpTap {
    std::size_t lo, hi;
    double frac;
};

// Half-pixel-centre sampling (align_corners = false), clamped at the borders.
inline std::vector<LerpTap> bilinear_taps(std::size_t in, std::size_t factor) {
    std::vector<LerpTap> taps(in * factor);
    for (std::size_t o = 0; o < taps.size(); ++o) {
        double src = (static_cast<double>(o) + 0.5) / static_cast<double>(factor) - 0.5;
        if (src < 0) src = 0;
        auto lo = static_cast<std::size_t>(std::floor(src));
        if (lo > in - 1) lo = in - 1;
        const std::size_t hi = std::min(lo + 1, in - 1);
        taps[o] = {lo, hi, src - static_cast<double>(lo)};
    }
    return taps;
}
}  // namespace detail

/// Bilinear upsampling by an integer factor with align_corners = false.
template <typename T>
Tensor<T> upsample_bilinear(const Tensor<T>& x, std::size_t factor) {
    detail::require_rank(x.shape(), 4, "upsample_bilinear");
    if (factor == 0) throw ShapeError("upsample_bilinear: factor must be >= 1");
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t ho = h * factor, wo = w * factor;
    auto rows = detail::bilinear_taps(h, factor);
    auto cols = detail::bilinear_taps(w, factor);
    std::vector<T> out(n * c * ho * wo);
    std::vector<T> tmp(h * wo);
    const auto src = x.data();
    for (std::size_t p = 0; p < n * c; ++p) {
        const T* in = src.data() + p * h * w;
        for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < wo; ++j) {
                const T a = in[i * w + cols[j].lo], b = in[i * w + cols[j].hi];
                tmp[i * wo + j] = a + static_cast<T>(cols[j].frac) * (b - a);
            }
        T* o = out.data() + p * ho * wo;
        for (std::size_t i = 0; i < ho; ++i)
            for (std::size_t j = 0; j < wo; ++j) {
                const T a = tmp[rows[i].lo * wo + j], b = tmp[rows[i].hi * wo + j];
                o[i * wo + j] = a + static_cast<T>(rows[i].frac) * (b - a);
            }
    }
    Tensor<T> y(Shape{n, c, ho, wo}, std::move(out));
    if (detail::tracks(x)) {
        detail::record(y, [xn = x.node(), yn = y.node(), rows = std::move(rows), cols = std::move(cols), n, c, h, w,
                           ho, wo] {
            if (yn->grad.empty()) return;
            auto& gx = detail::ensure_grad(*xn);
            std::vector<T> gtmp(h * wo);
            for (std::size_t p = 0; p < n * c; ++p) {
                std::fill(gtmp.begin(), gtmp.end(), T(0));
                const T* g = yn->grad.data() + p * ho * wo;
                for (std::size_t i = 0; i < ho; ++i) {
                    const T f = static_cast<T>(rows[i].frac);
                    for (std::size_t j = 0; j < wo; ++j) {
                        gtmp[rows[i].lo * wo + j] += (T(1) - f) * g[i * wo + j];
                        gtmp[rows[i].hi * wo + j] += f * g[i * wo + j];
                    }
                }
                T* gi = gx.data() + p * h * w;
                for (std::size_t i = 0; i < h; ++i)
                    for (std::size_t j = 0; j < wo; ++j) {
                        const T f = static_cast<T>(cols[j].frac);
                        gi[i * w + cols[j].lo] += (T(1) - f) * gtmp[i * wo + j];
                        gi[i * w + cols[j].hi] += f * gtmp[i * wo + j];
                    }
            }
        });
    }
    return y;
}

template <typename T>
Tensor<T> bilinear_upsample2x(const Tensor<T>& x) {
    return upsample_bilinear(x, 2);
}

/// Zero padding on the bottom/right edges.
template <typename T>
Tensor<T> pad_bottom_right(const Tensor<T>& x, std::size_t pad_h, std::size_t pad_w) {
    detail::require_rank(x.shape(), 4, "pad_bottom_right");
    if (pad_h == 0 && pad_w == 0) return x;
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t hp = h + pad_h, wp = w + pad_w;
    std::vector<std::ptrdiff_t> index(n * c * hp * wp, -1);
    for (std::size_t p = 0; p < n * c; ++p)
        for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < w; ++j)
                index[(p * hp + i) * wp + j] = static_cast<std::ptrdiff_t>((p * h + i) * w + j);
    return detail::gather(x, Shape{n, c, hp, wp}, std::move(index));
}

/// Half-sample symmetric extension on the bottom/right edges (edge pixel repeated).
template <typename T>
Tensor<T> pad_symmetric(const Tensor<T>& x, std::size_t pad_h, std::size_t pad_w) {
    detail::require_rank(x.shape(), 4, "pad_symmetric");
    if (pad_h == 0 && pad_w == 0) return x;
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (pad_h > h || pad_w > w) throw ShapeError("pad_symmetric: pad exceeds extent");
    const std::size_t hp = h + pad_h, wp = w + pad_w;
    std::vector<std::ptrdiff_t> index(n * c * hp * wp);
    for (std::size_t p = 0; p < n * c; ++p)
        for (std::size_t i = 0; i < hp; ++i)
            for (std::size_t j = 0; j < wp; ++j) {
                const std::size_t si = i < h ? i : 2 * h - 1 - i;
                const std::size_t sj = j < w ? j : 2 * w - 1 - j;
                index[(p * hp + i) * wp + j] = static_cast<std::ptrdiff_t>((p * h + si) * w + sj);
            }
    return detail::gather(x, Shape{n, c, hp, wp}, std::move(index));
}

/// Top-left aligned crop to h x w.
template <typename T>
Tensor<T> crop(const Tensor<T>& x, std::size_t h, std::size_t w) {
    detail::require_rank(x.shape(), 4, "crop");
    if (h == x.dim(2) && w == x.dim(3)) return x;
    if (h > x.dim(2) || w > x.dim(3)) throw ShapeError("crop: target larger than input");
    const std::size_t n = x.dim(0), c = x.dim(1), hi = x.dim(2), wi = x.dim(3);
    std::vector<std::ptrdiff_t> index(n * c * h * w);
    for (std::size_t p = 0; p < n * c; ++p)
        for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < w; ++j)
                index[(p * h + i) * w + j] = static_cast<std::ptrdiff_t>((p * hi + i) * wi + j);
    return detail::gather(x, Shape{n, c, h, w}, std::move(index));
}

}  // namespace swan
