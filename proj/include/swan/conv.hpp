#pragma once

#include <optional>
#include <type_traits>
#include <vector>

#include "swan/ops.hpp"

namespace swan {

struct Conv2dGeometry {
    std::size_t cin, h, w, k, stride, pad, ho, wo;

    static Conv2dGeometry make(std::size_t cin, std::size_t h, std::size_t w, std::size_t k, std::size_t stride,
                               std::size_t pad) {
        if (k % 2 == 0) throw ShapeError("conv2d: kernel size must be odd, got " + std::to_string(k));
        if (stride == 0) throw ShapeError("conv2d: stride must be >= 1");
        if (h + 2 * pad < k || w + 2 * pad < k) throw ShapeError("conv2d: kernel larger than padded input");
        return {cin, h, w, k, stride, pad, (h + 2 * pad - k) / stride + 1, (w + 2 * pad - k) / stride + 1};
    }

    bool is_pointwise() const { return k == 1 && stride == 1 && pad == 0; }
};

namespace detail {

// cols is (cin*k*k) x (ho*wo), row-major.
template <typename T>
void im2col(const T* img, const Conv2dGeometry& g, T* cols) {
    const std::size_t plane = g.ho * g.wo;
    for (std::size_t c = 0; c < g.cin; ++c)
        for (std::size_t ki = 0; ki < g.k; ++ki)
            for (std::size_t kj = 0; kj < g.k; ++kj) {
                T* row = cols + ((c * g.k + ki) * g.k + kj) * plane;
                for (std::size_t oi = 0; oi < g.ho; ++oi) {
                    const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(oi * g.stride + ki) - static_cast<std::ptrdiff_t>(g.pad);
                    T* dst = row + oi * g.wo;
                    if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(g.h)) {
                        std::fill_n(dst, g.wo, T(0));
                        continue;
                    }
                    const T* src = img + (c * g.h + static_cast<std::size_t>(ii)) * g.w;
                    for (std::size_t oj = 0; oj < g.wo; ++oj) {
                        const std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(oj * g.stride + kj) - static_cast<std::ptrdiff_t>(g.pad);
                        dst[oj] = (jj < 0 || jj >= static_cast<std::ptrdiff_t>(g.w)) ? T(0) : src[jj];
                    }
                }
            }
}

template <typename T>
void col2im_add(const T* cols, const Conv2dGeometry& g, T* img) {
    const std::size_t plane = g.ho * g.wo;
    for (std::size_t c = 0; c < g.cin; ++c)
        for (std::size_t ki = 0; ki < g.k; ++ki)
            for (std::size_t kj = 0; kj < g.k; ++kj) {
                const T* row = cols + ((c * g.k + ki) * g.k + kj) * plane;
                for (std::size_t oi = 0; oi < g.ho; ++oi) {
                    const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(oi * g.stride + ki) - static_cast<std::ptrdiff_t>(g.pad);
                    if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(g.h)) continue;
                    T* dst = img + (c * g.h + static_cast<std::size_t>(ii)) * g.w;
                    for (std::size_t oj = 0; oj < g.wo; ++oj) {
                        const std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(oj * g.stride + kj) - static_cast<std::ptrdiff_t>(g.pad);
                        if (jj >= 0 && jj < static_cast<std::ptrdiff_t>(g.w)) dst[jj] += row[oi * g.wo + oj];
                    }
                }
            }
}

}  // namespace detail

/// 2-D cross-correlation with zero padding. x: [N,Cin,H,W], w: [Cout,Cin,K,K], b: [Cout].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const std::optional<std::type_identity_t<Tensor<T>>>& b, std::size_t stride = 1,
                 std::size_t pad = 0) {
    detail::require_rank(x.shape(), 4, "conv2d input");
    detail::require_rank(w.shape(), 4, "conv2d weight");
    if (w.dim(1) != x.dim(1)) {
        throw ShapeError("conv2d: input has " + std::to_string(x.dim(1)) + " channels, weight expects " +
                         std::to_string(w.dim(1)));
    }
    if (w.dim(2) != w.dim(3)) throw ShapeError("conv2d: kernel must be square");
    const std::size_t n = x.dim(0), cout = w.dim(0);
    if (b && b->numel() != cout) throw ShapeError("conv2d: bias length mismatch");
    const auto g = Conv2dGeometry::make(x.dim(1), x.dim(2), x.dim(3), w.dim(2), stride, pad);
    const std::size_t kdim = g.cin * g.k * g.k, plane = g.ho * g.wo, in_plane = g.cin * g.h * g.w;

    std::vector<T> out(n * cout * plane);
    std::vector<T> cols(g.is_pointwise() ? 0 : kdim * plane);
    detail::ConstMatMap<T> W(w.data().data(), cout, kdim);
    for (std::size_t s = 0; s < n; ++s) {
        const T* img = x.data().data() + s * in_plane;
        if (!g.is_pointwise()) detail::im2col(img, g, cols.data());
        detail::ConstMatMap<T> C(g.is_pointwise() ? img : cols.data(), kdim, plane);
        detail::MatMap<T> Y(out.data() + s * cout * plane, cout, plane);
        Y.noalias() = W * C;
        if (b) {
            for (std::size_t o = 0; o < cout; ++o) Y.row(o).array() += (*b)[o];
        }
    }
    Tensor<T> y(Shape{n, cout, g.ho, g.wo}, std::move(out));
    const bool track = b ? detail::tracks(x, w, *b) : detail::tracks(x, w);
    if (track) {
        auto bn = b ? b->node() : nullptr;
        detail::record(y, [xn = x.node(), wn = w.node(), bn, yn = y.node(), g, n, cout, kdim, plane, in_plane] {
            if (yn->grad.empty()) return;
            std::vector<T> cols(g.is_pointwise() ? 0 : kdim * plane);
            std::vector<T> gcols(kdim * plane);
            detail::ConstMatMap<T> W(wn->data.data(), cout, kdim);
            for (std::size_t s = 0; s < n; ++s) {
                detail::ConstMatMap<T> G(yn->grad.data() + s * cout * plane, cout, plane);
                if (wn->requires_grad) {
                    const T* img = xn->data.data() + s * in_plane;
                    if (!g.is_pointwise()) detail::im2col(img, g, cols.data());
                    detail::ConstMatMap<T> C(g.is_pointwise() ? img : cols.data(), kdim, plane);
                    detail::MatMap<T> GW(detail::ensure_grad(*wn).data(), cout, kdim);
                    GW.noalias() += G * C.transpose();
                }
                if (bn && bn->requires_grad) {
                    auto& gb = detail::ensure_grad(*bn);
                    for (std::size_t o = 0; o < cout; ++o) {
                        const T* row = yn->grad.data() + (s * cout + o) * plane;
                        T acc = 0;
                        for (std::size_t i = 0; i < plane; ++i) acc += row[i];
                        gb[o] += acc;
                    }
                }
                if (xn->requires_grad) {
                    T* gx = detail::ensure_grad(*xn).data() + s * in_plane;
                    if (g.is_pointwise()) {
                        detail::MatMap<T> GX(gx, kdim, plane);
                        GX.noalias() += W.transpose() * G;
                    } else {
                        detail::MatMap<T> GC(gcols.data(), kdim, plane);
                        GC.noalias() = W.transpose() * G;
                        detail::col2im_add(gcols.data(), g, gx);
                    }
                }
            }
        });
    }
    return y;
}

/// Per-channel convolution, spatial size preserved. w: [C,1,K,K] with K odd.
template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& w, const std::optional<std::type_identity_t<Tensor<T>>>& b = std::nullopt) {
    detail::require_rank(x.shape(), 4, "depthwise_conv2d input");
    detail::require_rank(w.shape(), 4, "depthwise_conv2d weight");
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3), k = w.dim(2);
    if (w.dim(0) != c || w.dim(1) != 1 || w.dim(3) != k) {
        throw ShapeError("depthwise_conv2d: weight " + to_string(w.shape()) + " vs input " + to_string(x.shape()));
    }
    if (k % 2 == 0) throw ShapeError("depthwise_conv2d: kernel size must be odd, got " + std::to_string(k));
    if (b && b->numel() != c) throw ShapeError("depthwise_conv2d: bias length mismatch");
    const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(k / 2);
    const auto H = static_cast<std::ptrdiff_t>(h), Wd = static_cast<std::ptrdiff_t>(wd);
    std::vector<T> out(x.numel());
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t ch = 0; ch < c; ++ch) {
            const T* in = x.data().data() + (s * c + ch) * h * wd;
            const T* ker = w.data().data() + ch * k * k;
            T* o = out.data() + (s * c + ch) * h * wd;
            const T bias = b ? (*b)[ch] : T(0);
            for (std::ptrdiff_t i = 0; i < H; ++i)
                for (std::ptrdiff_t j = 0; j < Wd; ++j) {
                    T acc = bias;
                    for (std::ptrdiff_t di = -r; di <= r; ++di) {
                        const std::ptrdiff_t ii = i + di;
                        if (ii < 0 || ii >= H) continue;
                        for (std::ptrdiff_t dj = -r; dj <= r; ++dj) {
                            const std::ptrdiff_t jj = j + dj;
                            if (jj < 0 || jj >= Wd) continue;
                            acc += ker[(di + r) * static_cast<std::ptrdiff_t>(k) + dj + r] * in[ii * Wd + jj];
                        }
                    }
                    o[i * Wd + j] = acc;
                }
        }
    Tensor<T> y(x.shape(), std::move(out));
    const bool track = b ? detail::tracks(x, w, *b) : detail::tracks(x, w);
    if (track) {
        auto bn = b ? b->node() : nullptr;
        detail::record(y, [xn = x.node(), wn = w.node(), bn, yn = y.node(), n, c, h, wd, k, r, H, Wd] {
            if (yn->grad.empty()) return;
            T* gx = xn->requires_grad ? detail::ensure_grad(*xn).data() : nullptr;
            T* gw = wn->requires_grad ? detail::ensure_grad(*wn).data() : nullptr;
            T* gb = (bn && bn->requires_grad) ? detail::ensure_grad(*bn).data() : nullptr;
            for (std::size_t s = 0; s < n; ++s)
                for (std::size_t ch = 0; ch < c; ++ch) {
                    const std::size_t base = (s * c + ch) * h * wd;
                    const T* in = xn->data.data() + base;
                    const T* ker = wn->data.data() + ch * k * k;
                    const T* g = yn->grad.data() + base;
                    for (std::ptrdiff_t i = 0; i < H; ++i)
                        for (std::ptrdiff_t j = 0; j < Wd; ++j) {
                            const T go = g[i * Wd + j];
                            if (gb) gb[ch] += go;
                            for (std::ptrdiff_t di = -r; di <= r; ++di) {
                                const std::ptrdiff_t ii = i + di;
                                if (ii < 0 || ii >= H) continue;
                                for (std::ptrdiff_t dj = -r; dj <= r; ++dj) {
                                    const std::ptrdiff_t jj = j + dj;
                                    if (jj < 0 || jj >= Wd) continue;
                                    const std::ptrdiff_t kidx = (di + r) * static_cast<std::ptrdiff_t>(k) + dj + r;
                                    if (gw) gw[ch * k * k + kidx] += go * in[ii * Wd + jj];
                                    if (gx) gx[base + ii * Wd + jj] += go * ker[kidx];
                                }
                            }
                        }
                }
        });
    }
    return y;
}

}  // namespace swan
