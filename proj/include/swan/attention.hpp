#pragma once

// Window self-attention (WSA), shifted window attention with a learnable
// relative-position bias (SSA), and the full SSA block.

#include <cmath>
#include <optional>
#include <vector>

#include "swan/layers.hpp"

namespace swan {

/// Layout of an image tiled into m x m windows (after zero padding to hp x wp).
struct WindowGrid {
    std::size_t n = 0, c = 0, h = 0, w = 0;
    std::size_t m = 0, hp = 0, wp = 0;
    std::size_t rows() const { return hp / m; }
    std::size_t cols() const { return wp / m; }
    std::size_t windows() const { return rows() * cols(); }
    std::size_t pad_h() const { return hp - h; }
    std::size_t pad_w() const { return wp - w; }

    static WindowGrid make(const Shape& s, std::size_t m) {
        if (m == 0) throw ValueError("window size must be positive");
        detail::require_rank(s, 4, "window grid");
        const std::size_t hp = (s[2] + m - 1) / m * m, wp = (s[3] + m - 1) / m * m;
        return {s[0], s[1], s[2], s[3], m, hp, wp};
    }
};

/// [N,C,H,W] -> [N*nW, m*m, C]; windows in row-major grid order, tokens row-major
/// inside each window. Pixels beyond H x W are zeros.
template <typename T>
Tensor<T> window_partition(const Tensor<T>& x, const WindowGrid& g) {
    if (x.shape() != Shape{g.n, g.c, g.h, g.w}) throw ShapeError("window_partition: input does not match grid");
    const std::size_t L = g.m * g.m, nw = g.windows();
    std::vector<std::ptrdiff_t> index(g.n * nw * L * g.c);
    std::size_t o = 0;
    for (std::size_t s = 0; s < g.n; ++s)
        for (std::size_t wi = 0; wi < g.rows(); ++wi)
            for (std::size_t wj = 0; wj < g.cols(); ++wj)
                for (std::size_t ti = 0; ti < g.m; ++ti)
                    for (std::size_t tj = 0; tj < g.m; ++tj) {
                        const std::size_t i = wi * g.m + ti, j = wj * g.m + tj;
                        for (std::size_t ch = 0; ch < g.c; ++ch, ++o) {
                            index[o] = (i < g.h && j < g.w)
                                           ? static_cast<std::ptrdiff_t>(((s * g.c + ch) * g.h + i) * g.w + j)
                                           : -1;
                        }
                    }
    return detail::gather(x, Shape{g.n * nw, L, g.c}, std::move(index));
}

template <typename T>
std::pair<Tensor<T>, WindowGrid> window_partition(const Tensor<T>& x, std::size_t m) {
    const auto g = WindowGrid::make(x.shape(), m);
    return {window_partition(x, g), g};
}

/// Inverse of window_partition; padding is cropped away.
template <typename T>
Tensor<T> window_reverse(const Tensor<T>& windows, const WindowGrid& g) {
    const std::size_t L = g.m * g.m, nw = g.windows();
    if (windows.shape() != Shape{g.n * nw, L, g.c}) {
        throw ShapeError("window_reverse: " + to_string(windows.shape()) + " does not match grid");
    }
    std::vector<std::ptrdiff_t> index(g.n * g.c * g.h * g.w);
    for (std::size_t s = 0; s < g.n; ++s)
        for (std::size_t ch = 0; ch < g.c; ++ch)
            for (std::size_t i = 0; i < g.h; ++i)
                for (std::size_t j = 0; j < g.w; ++j) {
                    const std::size_t b = (s * g.rows() + i / g.m) * g.cols() + j / g.m;
                    const std::size_t t = (i % g.m) * g.m + j % g.m;
                    index[((s * g.c + ch) * g.h + i) * g.w + j] = static_cast<std::ptrdiff_t>((b * L + t) * g.c + ch);
                }
    return detail::gather(windows, Shape{g.n, g.c, g.h, g.w}, std::move(index));
}

/// Toroidal roll of the spatial axes: out[i][j] = x[(i - dy) mod H][(j - dx) mod W].
template <typename T>
Tensor<T> cyclic_shift(const Tensor<T>& x, std::ptrdiff_t dy, std::ptrdiff_t dx) {
    detail::require_rank(x.shape(), 4, "cyclic_shift");
    if (dy == 0 && dx == 0) return x;
    const auto h = static_cast<std::ptrdiff_t>(x.dim(2)), w = static_cast<std::ptrdiff_t>(x.dim(3));
    const std::size_t planes = x.dim(0) * x.dim(1);
    std::vector<std::ptrdiff_t> index(x.numel());
    for (std::size_t p = 0; p < planes; ++p)
        for (std::ptrdiff_t i = 0; i < h; ++i)
            for (std::ptrdiff_t j = 0; j < w; ++j) {
                const std::ptrdiff_t si = ((i - dy) % h + h) % h, sj = ((j - dx) % w + w) % w;
                index[(p * h + i) * w + j] = static_cast<std::ptrdiff_t>(p) * h * w + si * w + sj;
            }
    return detail::gather(x, x.shape(), std::move(index));
}

/// Flat index into a [(2M-1) x (2M-1)] table for displacement (dx, dy) = (xj - xi, yj - yi).
inline std::size_t relative_bias_index(std::ptrdiff_t dx, std::ptrdiff_t dy, std::size_t table_m) {
    const auto M = static_cast<std::ptrdiff_t>(table_m);
    return static_cast<std::size_t>((dx + M - 1) * (2 * M - 1) + (dy + M - 1));
}

/// Expands a [heads, 2M-1, 2M-1] bias table into [heads, m^2, m^2] logits
/// offsets for an m x m window (m <= M).
template <typename T>
Tensor<T> relative_position_bias(const Tensor<T>& table, std::size_t m) {
    detail::require_rank(table.shape(), 3, "relative_position_bias");
    const std::size_t span = table.dim(1);
    if (span % 2 == 0 || table.dim(2) != span) throw ShapeError("relative_position_bias: table must be (2M-1)^2");
    const std::size_t table_m = (span + 1) / 2;
    if (m > table_m) throw ShapeError("relative_position_bias: window exceeds table");
    const std::size_t heads = table.dim(0), L = m * m;
    std::vector<std::ptrdiff_t> index(heads * L * L);
    for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t i = 0; i < L; ++i)
            for (std::size_t j = 0; j < L; ++j) {
                const auto dx = static_cast<std::ptrdiff_t>(j % m) - static_cast<std::ptrdiff_t>(i % m);
                const auto dy = static_cast<std::ptrdiff_t>(j / m) - static_cast<std::ptrdiff_t>(i / m);
                index[(h * L + i) * L + j] =
                    static_cast<std::ptrdiff_t>(h * span * span + relative_bias_index(dx, dy, table_m));
            }
    return detail::gather(table, Shape{heads, L, L}, std::move(index));
}

/// Additive mask [nW, m^2, m^2] for attention on a map rolled by (-shift, -shift):
/// tokens attend only to tokens from the same contiguous source region.
template <typename T>
Tensor<T> shifted_window_mask(const WindowGrid& g, std::size_t shift) {
    auto label = [shift](std::size_t i, std::size_t extent) -> std::size_t {
        if (i < extent - shift) return 0;
        return i < extent ? 1 : 2;
    };
    const std::size_t L = g.m * g.m, nw = g.windows();
    std::vector<std::size_t> region(nw * L);
    for (std::size_t wi = 0; wi < g.rows(); ++wi)
        for (std::size_t wj = 0; wj < g.cols(); ++wj)
            for (std::size_t t = 0; t < L; ++t) {
                const std::size_t i = wi * g.m + t / g.m, j = wj * g.m + t % g.m;
                region[(wi * g.cols() + wj) * L + t] = 3 * label(i, g.h) + label(j, g.w);
            }
    std::vector<T> mask(nw * L * L, T(0));
    for (std::size_t b = 0; b < nw; ++b)
        for (std::size_t i = 0; i < L; ++i)
            for (std::size_t j = 0; j < L; ++j)
                if (region[b * L + i] != region[b * L + j]) mask[(b * L + i) * L + j] = T(-1e9);
    return Tensor<T>(Shape{nw, L, L}, std::move(mask));
}

template <typename T>
struct AttentionParams {
    Linear<T> wq, wk, wv;
    Tensor<T> bias_table;  // [heads, 2M-1, 2M-1]
    std::size_t heads = 1;
    std::size_t window = 1;

    AttentionParams() = default;
    AttentionParams(std::size_t channels, std::size_t window_, std::size_t heads_, Rng& rng)
        : wq(channels, channels, rng),
          wk(channels, channels, rng),
          wv(channels, channels, rng),
          bias_table(Tensor<T>::zeros({heads_, 2 * window_ - 1, 2 * window_ - 1})),
          heads(heads_),
          window(window_) {
        if (heads == 0 || channels % heads) throw ValueError("attention: channels must divide into heads");
    }

    void visit(const Visitor<T>& f, const std::string& prefix, bool with_bias) {
        wq.visit(f, prefix + ".q");
        wk.visit(f, prefix + ".k");
        wv.visit(f, prefix + ".v");
        if (with_bias) f(prefix + ".bias_table", bias_table, Slot::parameter);
    }
};

namespace detail {
// [B, L, H*d] <-> [B*H, L, d]
template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, std::size_t heads) {
    if (heads == 1) return x;
    const std::size_t B = x.dim(0), L = x.dim(1), C = x.dim(2), d = C / heads;
    std::vector<std::ptrdiff_t> index(x.numel());
    std::size_t o = 0;
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t t = 0; t < L; ++t)
                for (std::size_t k = 0; k < d; ++k) index[o++] = static_cast<std::ptrdiff_t>((b * L + t) * C + h * d + k);
    return gather(x, Shape{B * heads, L, d}, std::move(index));
}

template <typename T>
Tensor<T> merge_heads(const Tensor<T>& x, std::size_t heads) {
    if (heads == 1) return x;
    const std::size_t B = x.dim(0) / heads, L = x.dim(1), d = x.dim(2), C = d * heads;
    std::vector<std::ptrdiff_t> index(x.numel());
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t t = 0; t < L; ++t)
            for (std::size_t h = 0; h < heads; ++h)
                for (std::size_t k = 0; k < d; ++k)
                    index[(b * L + t) * C + h * d + k] = static_cast<std::ptrdiff_t>(((b * heads + h) * L + t) * d + k);
    return gather(x, Shape{B, L, C}, std::move(index));
}

/// softmax(scale * q k^T + bias + mask) over [B*heads, L, d] heads in one
/// tape node. `bias` is [heads, L, L]; `mask` is a constant [nW, L, L] that
/// repeats over the batch.
template <typename T>
Tensor<T> attention_softmax(const Tensor<T>& q, const Tensor<T>& k, T scale, const std::optional<std::type_identity_t<Tensor<T>>>& bias,
                            const std::optional<std::type_identity_t<Tensor<T>>>& mask, std::size_t heads) {
    const std::size_t BH = q.dim(0), L = q.dim(1), d = q.dim(2);
    const std::size_t nw = mask ? mask->dim(0) : 1;
    std::vector<T> out(BH * L * L);
    for (std::size_t b = 0; b < BH; ++b) {
        MatMap<T> S(out.data() + b * L * L, L, L);
        S.noalias() = ConstMatMap<T>(q.data().data() + b * L * d, L, d) *
                      ConstMatMap<T>(k.data().data() + b * L * d, L, d).transpose();
        S *= scale;
        if (bias) S += ConstMatMap<T>(bias->data().data() + (b % heads) * L * L, L, L);
        if (mask) S += ConstMatMap<T>(mask->data().data() + ((b / heads) % nw) * L * L, L, L);
        // Scalar row loops: Eigen's vectorized reductions depend on the buffer's
        // alignment, which would make results vary between allocations.
        for (std::size_t i = 0; i < L; ++i) {
            T* row = out.data() + (b * L + i) * L;
            const T mx = *std::max_element(row, row + L);
            T sum = 0;
            for (std::size_t j = 0; j < L; ++j) sum += (row[j] = std::exp(row[j] - mx));
            for (std::size_t j = 0; j < L; ++j) row[j] /= sum;
        }
    }
    Tensor<T> y(Shape{BH, L, L}, std::move(out));
    const bool bias_tracked = bias && bias->requires_grad();
    if (grad_enabled() && (q.requires_grad() || k.requires_grad() || bias_tracked)) {
        std::shared_ptr<TensorNode<T>> bn = bias ? bias->node() : nullptr;
        record(y, [qn = q.node(), kn = k.node(), bn, yn = y.node(), BH, L, d, heads, scale] {
            if (yn->grad.empty()) return;
            RowMat<T> dS(L, L);
            for (std::size_t b = 0; b < BH; ++b) {
                ConstMatMap<T> P(yn->data.data() + b * L * L, L, L);
                ConstMatMap<T> G(yn->grad.data() + b * L * L, L, L);
                for (std::size_t i = 0; i < L; ++i) {
                    T dot = 0;
                    for (std::size_t j = 0; j < L; ++j) dot += P(i, j) * G(i, j);
                    for (std::size_t j = 0; j < L; ++j) dS(i, j) = P(i, j) * (G(i, j) - dot);
                }
                if (bn && bn->requires_grad) {
                    auto& gb = ensure_grad(*bn);
                    MatMap<T>(gb.data() + (b % heads) * L * L, L, L) += dS;
                }
                if (qn->requires_grad) {
                    auto& gq = ensure_grad(*qn);
                    MatMap<T>(gq.data() + b * L * d, L, d).noalias() +=
                        scale * dS * ConstMatMap<T>(kn->data.data() + b * L * d, L, d);
                }
                if (kn->requires_grad) {
                    auto& gk = ensure_grad(*kn);
                    MatMap<T>(gk.data() + b * L * d, L, d).noalias() +=
                        scale * dS.transpose() * ConstMatMap<T>(qn->data.data() + b * L * d, L, d);
                }
            }
        });
    }
    return y;
}
}  // namespace detail

/// Attention weights softmax(QK^T / sqrt(d_k) (+ D) (+ mask)) for tokens [B, m^2, C],
/// returned as [B*heads, m^2, m^2] along with V in head layout.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> attention_weights(const Tensor<T>& tokens, const AttentionParams<T>& p, bool use_bias,
                                                  const std::optional<std::type_identity_t<Tensor<T>>>& mask) {
    detail::require_rank(tokens.shape(), 3, "window_attention");
    const std::size_t B = tokens.dim(0), L = tokens.dim(1), C = tokens.dim(2);
    const auto m = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(L))));
    if (m * m != L) throw ShapeError("window_attention: token count is not a square");
    if (C % p.heads) throw ShapeError("window_attention: channels not divisible by heads");
    if (mask) {
        const auto& ms = mask->shape();
        if (ms.size() != 3 || ms[1] != L || ms[2] != L || B % ms[0] != 0) {
            throw ShapeError("window_attention: mask " + to_string(ms) + " incompatible with tokens " +
                             to_string(tokens.shape()));
        }
    }
    const auto q = detail::split_heads(p.wq(tokens), p.heads);
    const auto k = detail::split_heads(p.wk(tokens), p.heads);
    const auto v = detail::split_heads(p.wv(tokens), p.heads);
    const T inv_sqrt_dk = T(1) / std::sqrt(static_cast<T>(C / p.heads));
    std::optional<Tensor<T>> bias;
    if (use_bias) bias = relative_position_bias(p.bias_table, m);
    return {detail::attention_softmax(q, k, inv_sqrt_dk, bias, mask, p.heads), v};
}

template <typename T>
Tensor<T> window_attention(const Tensor<T>& tokens, const AttentionParams<T>& p, bool use_bias,
                           const std::optional<std::type_identity_t<Tensor<T>>>& mask = std::nullopt) {
    auto [weights, v] = attention_weights(tokens, p, use_bias, mask);
    return detail::merge_heads(bmm(weights, v), p.heads);
}

template <typename T>
struct Mlp {
    Linear<T> fc1, fc2;

    Mlp() = default;
    Mlp(std::size_t channels, std::size_t ratio, Rng& rng)
        : fc1(channels, channels * ratio, rng), fc2(channels * ratio, channels, rng) {}

    Tensor<T> operator()(const Tensor<T>& x) const { return fc2(relu(fc1(x))); }

    void visit(const Visitor<T>& f, const std::string& prefix) {
        fc1.visit(f, prefix + ".fc1");
        fc2.visit(f, prefix + ".fc2");
    }
};

template <typename T>
struct SsaParts {
    Tensor<T> attended;  // after WSA -> MLP -> SSA -> MLP
    Tensor<T> fused;     // after 1x1 -> chunk -> DW3/DW5 -> concat -> 1x1
    Tensor<T> gate;      // [N, C, 1, 1] sigmoid weights
    Tensor<T> out;
};

/// Shifted spatial attention block: pre-norm WSA and shifted, masked, biased
/// attention with MLPs and residuals, then the depthwise mixing stage and a
/// global-pool sigmoid gate. Output shape equals input shape.
template <typename T>
struct SsaBlock {
    std::size_t channels = 0, window = 1, shift = 0;
    LayerNorm<T> norm1, norm2, norm3, norm4;
    AttentionParams<T> wsa, ssa;
    Mlp<T> mlp1, mlp2;
    Conv2d<T> proj_in, proj_out, gate;
    DepthwiseConv<T> dw3, dw5;

    SsaBlock() = default;
    /// `shift` defaults to window / 2.
    SsaBlock(std::size_t channels_, std::size_t window_, Rng& rng, std::size_t heads = 1, std::size_t mlp_ratio = 2,
             std::optional<std::size_t> shift_ = std::nullopt)
        : channels(channels_),
          window(window_),
          shift(shift_.value_or(window_ / 2)),
          norm1(channels_),
          norm2(channels_),
          norm3(channels_),
          norm4(channels_),
          wsa(channels_, window_, heads, rng),
          ssa(channels_, window_, heads, rng),
          mlp1(channels_, mlp_ratio, rng),
          mlp2(channels_, mlp_ratio, rng),
          proj_in(channels_, channels_, 1, rng),
          proj_out(channels_, channels_, 1, rng),
          gate(channels_, channels_, 1, rng),
          dw3(channels_ / 2, 3, rng),
          dw5(channels_ - channels_ / 2, 5, rng) {
        if (channels % 2) throw ValueError("SsaBlock: channel count must be even");
        if (window == 0) throw ValueError("SsaBlock: window must be positive");
        if (shift >= window) throw ValueError("SsaBlock: shift must lie in [0, window)");
    }

    /// Window and shift actually used for an h x w map: the window shrinks to
    /// the map when the map is smaller, and shifting is then disabled.
    std::pair<std::size_t, std::size_t> effective_window(std::size_t h, std::size_t w) const {
        const std::size_t side = std::min(h, w);
        if (side <= window) return {std::min(window, side), side < window ? 0 : shift};
        return {window, shift};
    }

    SsaParts<T> forward_parts(const Tensor<T>& x) const {
        detail::require_rank(x.shape(), 4, "ssa_block");
        if (x.dim(1) != channels) throw ShapeError("ssa_block: channel mismatch");
        const auto [m, s] = effective_window(x.dim(2), x.dim(3));

        auto [t0, grid] = window_partition(x, m);
        auto t1 = add(t0, window_attention(norm1(t0), wsa, false));
        auto t2 = add(t1, mlp1(norm2(t1)));
        auto x2 = window_reverse(t2, grid);

        const auto sh = static_cast<std::ptrdiff_t>(s);
        auto shifted = cyclic_shift(x2, -sh, -sh);
        auto t3in = window_partition(shifted, grid);
        std::optional<Tensor<T>> mask;
        if (s > 0) mask = shifted_window_mask<T>(grid, s);
        auto t3 = add(t3in, window_attention(norm3(t3in), ssa, true, mask));
        auto t4 = add(t3, mlp2(norm4(t3)));
        auto attended = cyclic_shift(window_reverse(t4, grid), sh, sh);

        auto [lo, hi] = chunk_channels(proj_in(attended));
        auto fused = proj_out(concat_channels<T>({dw3(lo), dw5(hi)}));
        auto weights = sigmoid(gate(global_avgpool(fused)));
        auto out = scale_channels(fused, weights);
        return {attended, fused, weights, out};
    }

    Tensor<T> operator()(const Tensor<T>& x) const { return forward_parts(x).out; }

    void visit(const Visitor<T>& f, const std::string& prefix) {
        norm1.visit(f, prefix + ".norm1");
        wsa.visit(f, prefix + ".wsa", false);
        norm2.visit(f, prefix + ".norm2");
        mlp1.visit(f, prefix + ".mlp1");
        norm3.visit(f, prefix + ".norm3");
        ssa.visit(f, prefix + ".ssa", true);
        norm4.visit(f, prefix + ".norm4");
        mlp2.visit(f, prefix + ".mlp2");
        proj_in.visit(f, prefix + ".proj_in");
        dw3.visit(f, prefix + ".dw3");
        dw5.visit(f, prefix + ".dw5");
        proj_out.visit(f, prefix + ".proj_out");
        gate.visit(f, prefix + ".gate");
    }
};

}  // namespace swan
