#pragma once

// Orthonormal 2-D Haar analysis/synthesis, separable filter banks for the
// other families, and the nested Haar wavelet convolution (HWConv).
//
// Subbands are packed along the channel axis in the order LL, LH, HL, HH:
// channel b*C + c of an [N, 4C, H/2, W/2] tensor is band b of input channel c.
// LH is low-pass vertically and high-pass horizontally; HL is the converse.

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "swan/layers.hpp"

namespace swan {

enum class WaveletTag { haar, symlet, coiflet, biorthogonal, reverse_biorthogonal };

/// Analysis filters are applied as y[k] = sum_j f[j] x[(2k + j) mod N];
/// synthesis scatters x[(2k + j) mod N] += f[j] y[k]. Periodic extension.
struct WaveletFamily {
    WaveletTag tag = WaveletTag::haar;
    std::string name;
    std::vector<double> analysis_lo, analysis_hi, synthesis_lo, synthesis_hi;

    static WaveletFamily make(WaveletTag tag) {
        WaveletFamily f;
        f.tag = tag;
        const double r = 1.0 / std::sqrt(2.0);
        switch (tag) {
            case WaveletTag::haar:
                f.name = "haar";
                f.analysis_lo = {r, r};
                f.analysis_hi = {r, -r};
                break;
            case WaveletTag::symlet: {
                // sym2
                f.name = "symlet";
                const std::vector<double> dec_lo = {-0.12940952255092145, 0.22414386804185735, 0.836516303737469,
                                                    0.48296291314469025};
                f.set_orthogonal(dec_lo);
                return f;
            }
            case WaveletTag::coiflet: {
                // coif1
                f.name = "coiflet";
                const std::vector<double> dec_lo = {-0.015655728135791993, -0.07273261951252645, 0.3848648468648578,
                                                    0.8525720202116004,    0.3378976624574818,   -0.07273261951252645};
                f.set_orthogonal(dec_lo);
                return f;
            }
            case WaveletTag::biorthogonal:
            case WaveletTag::reverse_biorthogonal: {
                // bior2.2; the reverse family swaps the analysis and synthesis pairs.
                const double a = 0.1767766952966369, b = 0.3535533905932738, c = 1.0606601717798212,
                             d = 0.7071067811865476;
                std::vector<double> dec_lo = {0.0, -a, b, c, b, -a};
                std::vector<double> dec_hi = {0.0, b, -d, b, 0.0, 0.0};
                std::vector<double> rec_lo = {0.0, b, d, b, 0.0, 0.0};
                std::vector<double> rec_hi = {0.0, a, b, -c, b, a};
                if (tag == WaveletTag::reverse_biorthogonal) {
                    f.name = "reverse_biorthogonal";
                    // rbio2.2 decomposition = reversed bior2.2 reconstruction and vice versa.
                    std::vector<double> rdec_lo(rec_lo.rbegin(), rec_lo.rend());
                    std::vector<double> rdec_hi(rec_hi.rbegin(), rec_hi.rend());
                    std::vector<double> rrec_lo(dec_lo.rbegin(), dec_lo.rend());
                    std::vector<double> rrec_hi(dec_hi.rbegin(), dec_hi.rend());
                    dec_lo = rdec_lo;
                    dec_hi = rdec_hi;
                    rec_lo = rrec_lo;
                    rec_hi = rrec_hi;
                } else {
                    f.name = "biorthogonal";
                }
                f.analysis_lo.assign(dec_lo.rbegin(), dec_lo.rend());
                f.analysis_hi.assign(dec_hi.rbegin(), dec_hi.rend());
                f.synthesis_lo = rec_lo;
                f.synthesis_hi = rec_hi;
                return f;
            }
        }
        f.synthesis_lo = f.analysis_lo;
        f.synthesis_hi = f.analysis_hi;
        return f;
    }

    static WaveletFamily from_name(std::string_view name) {
        for (auto tag : {WaveletTag::haar, WaveletTag::symlet, WaveletTag::coiflet, WaveletTag::biorthogonal,
                         WaveletTag::reverse_biorthogonal}) {
            auto f = make(tag);
            if (f.name == name) return f;
        }
        throw ValueError("unknown wavelet family '" + std::string(name) + "'");
    }

   private:
    void set_orthogonal(const std::vector<double>& dec_lo) {
        const std::size_t len = dec_lo.size();
        // dec_hi[n] = (-1)^(n+1) dec_lo[len-1-n]; orthogonal synthesis reuses the analysis taps.
        std::vector<double> dec_hi(len);
        for (std::size_t n = 0; n < len; ++n) dec_hi[n] = ((n % 2) ? 1.0 : -1.0) * dec_lo[len - 1 - n];
        analysis_lo.assign(dec_lo.rbegin(), dec_lo.rend());
        analysis_hi.assign(dec_hi.rbegin(), dec_hi.rend());
        synthesis_lo = analysis_lo;
        synthesis_hi = analysis_hi;
    }
};

namespace detail {

// Raw kernels on packed [N, 4C, H/2, W/2] layouts, no tape.

template <typename T>
std::vector<T> haar_analysis_raw(std::span<const T> x, std::size_t nc, std::size_t c, std::size_t h, std::size_t w) {
    const std::size_t n = nc / c, hh = h / 2, wh = w / 2, sub = hh * wh;
    std::vector<T> out(x.size());
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t ch = 0; ch < c; ++ch) {
            const T* in = x.data() + (s * c + ch) * h * w;
            T* ll = out.data() + ((s * 4 + 0) * c + ch) * sub;
            T* lh = out.data() + ((s * 4 + 1) * c + ch) * sub;
            T* hl = out.data() + ((s * 4 + 2) * c + ch) * sub;
            T* hh_ = out.data() + ((s * 4 + 3) * c + ch) * sub;
            for (std::size_t i = 0; i < hh; ++i)
                for (std::size_t j = 0; j < wh; ++j) {
                    const T a = in[(2 * i) * w + 2 * j], b = in[(2 * i) * w + 2 * j + 1];
                    const T cc = in[(2 * i + 1) * w + 2 * j], d = in[(2 * i + 1) * w + 2 * j + 1];
                    const std::size_t o = i * wh + j;
                    ll[o] = (a + b + cc + d) / T(2);
                    lh[o] = (a - b + cc - d) / T(2);
                    hl[o] = (a + b - cc - d) / T(2);
                    hh_[o] = (a - b - cc + d) / T(2);
                }
        }
    return out;
}

template <typename T>
std::vector<T> haar_synthesis_raw(std::span<const T> y, std::size_t n, std::size_t c, std::size_t hh,
                                  std::size_t wh) {
    const std::size_t h = 2 * hh, w = 2 * wh, sub = hh * wh;
    std::vector<T> out(y.size());
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t ch = 0; ch < c; ++ch) {
            T* o = out.data() + (s * c + ch) * h * w;
            const T* ll = y.data() + ((s * 4 + 0) * c + ch) * sub;
            const T* lh = y.data() + ((s * 4 + 1) * c + ch) * sub;
            const T* hl = y.data() + ((s * 4 + 2) * c + ch) * sub;
            const T* hh_ = y.data() + ((s * 4 + 3) * c + ch) * sub;
            for (std::size_t i = 0; i < hh; ++i)
                for (std::size_t j = 0; j < wh; ++j) {
                    const std::size_t k = i * wh + j;
                    o[(2 * i) * w + 2 * j] = (ll[k] + lh[k] + hl[k] + hh_[k]) / T(2);
                    o[(2 * i) * w + 2 * j + 1] = (ll[k] - lh[k] + hl[k] - hh_[k]) / T(2);
                    o[(2 * i + 1) * w + 2 * j] = (ll[k] + lh[k] - hl[k] - hh_[k]) / T(2);
                    o[(2 * i + 1) * w + 2 * j + 1] = (ll[k] - lh[k] - hl[k] + hh_[k]) / T(2);
                }
        }
    return out;
}

// One-dimensional periodic filter bank along a strided line.
template <typename T>
void analyze_line(const T* x, std::size_t len, std::size_t stride, const std::vector<double>& lo,
                  const std::vector<double>& hi, T* out_lo, T* out_hi, std::size_t out_stride) {
    for (std::size_t k = 0; k < len / 2; ++k) {
        double a = 0, d = 0;
        for (std::size_t j = 0; j < lo.size(); ++j) {
            const T v = x[((2 * k + j) % len) * stride];
            a += lo[j] * v;
            d += hi[j] * v;
        }
        out_lo[k * out_stride] = static_cast<T>(a);
        out_hi[k * out_stride] = static_cast<T>(d);
    }
}

template <typename T>
void synthesize_line(const T* in_lo, const T* in_hi, std::size_t in_stride, std::size_t len,
                     const std::vector<double>& lo, const std::vector<double>& hi, T* x, std::size_t stride) {
    std::vector<double> acc(len, 0.0);
    for (std::size_t k = 0; k < len / 2; ++k) {
        const double a = in_lo[k * in_stride], d = in_hi[k * in_stride];
        for (std::size_t j = 0; j < lo.size(); ++j) acc[(2 * k + j) % len] += lo[j] * a + hi[j] * d;
    }
    for (std::size_t i = 0; i < len; ++i) x[i * stride] = static_cast<T>(acc[i]);
}

template <typename T>
std::vector<T> filterbank_analysis_raw(std::span<const T> x, std::size_t n, std::size_t c, std::size_t h,
                                       std::size_t w, const std::vector<double>& lo, const std::vector<double>& hi) {
    const std::size_t hh = h / 2, wh = w / 2, sub = hh * wh;
    std::vector<T> out(x.size());
    std::vector<T> rows_lo(h * wh), rows_hi(h * wh);
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t ch = 0; ch < c; ++ch) {
            const T* in = x.data() + (s * c + ch) * h * w;
            for (std::size_t i = 0; i < h; ++i)
                analyze_line(in + i * w, w, 1, lo, hi, rows_lo.data() + i * wh, rows_hi.data() + i * wh, 1);
            T* ll = out.data() + ((s * 4 + 0) * c + ch) * sub;
            T* lh = out.data() + ((s * 4 + 1) * c + ch) * sub;
            T* hl = out.data() + ((s * 4 + 2) * c + ch) * sub;
            T* hh_ = out.data() + ((s * 4 + 3) * c + ch) * sub;
            for (std::size_t j = 0; j < wh; ++j) {
                analyze_line(rows_lo.data() + j, h, wh, lo, hi, ll + j, hl + j, wh);
                analyze_line(rows_hi.data() + j, h, wh, lo, hi, lh + j, hh_ + j, wh);
            }
        }
    return out;
}

template <typename T>
std::vector<T> filterbank_synthesis_raw(std::span<const T> y, std::size_t n, std::size_t c, std::size_t hh,
                                        std::size_t wh, const std::vector<double>& lo,
                                        const std::vector<double>& hi) {
    const std::size_t h = 2 * hh, w = 2 * wh, sub = hh * wh;
    std::vector<T> out(y.size());
    std::vector<T> rows_lo(h * wh), rows_hi(h * wh);
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t ch = 0; ch < c; ++ch) {
            const T* ll = y.data() + ((s * 4 + 0) * c + ch) * sub;
            const T* lh = y.data() + ((s * 4 + 1) * c + ch) * sub;
            const T* hl = y.data() + ((s * 4 + 2) * c + ch) * sub;
            const T* hh_ = y.data() + ((s * 4 + 3) * c + ch) * sub;
            for (std::size_t j = 0; j < wh; ++j) {
                synthesize_line(ll + j, hl + j, wh, h, lo, hi, rows_lo.data() + j, wh);
                synthesize_line(lh + j, hh_ + j, wh, h, lo, hi, rows_hi.data() + j, wh);
            }
            T* o = out.data() + (s * c + ch) * h * w;
            for (std::size_t i = 0; i < h; ++i)
                synthesize_line(rows_lo.data() + i * wh, rows_hi.data() + i * wh, 1, w, lo, hi, o + i * w, 1);
        }
    return out;
}

template <typename T>
std::vector<T> analysis_raw(std::span<const T> x, std::size_t n, std::size_t c, std::size_t h, std::size_t w,
                            const std::vector<double>& lo, const std::vector<double>& hi, bool haar) {
    if (haar) return haar_analysis_raw(x, n * c, c, h, w);
    return filterbank_analysis_raw(x, n, c, h, w, lo, hi);
}

template <typename T>
std::vector<T> synthesis_raw(std::span<const T> y, std::size_t n, std::size_t c, std::size_t hh, std::size_t wh,
                             const std::vector<double>& lo, const std::vector<double>& hi, bool haar) {
    if (haar) return haar_synthesis_raw(y, n, c, hh, wh);
    return filterbank_synthesis_raw(y, n, c, hh, wh, lo, hi);
}

}  // namespace detail

/// Single-level 2-D analysis: [N,C,H,W] -> packed [N,4C,H/2,W/2]. H and W must be even.
template <typename T>
Tensor<T> wavelet_analysis(const Tensor<T>& x, const WaveletFamily& family = WaveletFamily::make(WaveletTag::haar)) {
    detail::require_rank(x.shape(), 4, "wavelet_analysis");
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (h % 2 || w % 2) throw ShapeError("wavelet_analysis: spatial extent must be even, got " + to_string(x.shape()));
    const bool haar = family.tag == WaveletTag::haar;
    Tensor<T> y(Shape{n, 4 * c, h / 2, w / 2},
                detail::analysis_raw(x.data(), n, c, h, w, family.analysis_lo, family.analysis_hi, haar));
    if (detail::tracks(x)) {
        // Adjoint of analysis: synthesis with the analysis taps.
        detail::record(y, [xn = x.node(), yn = y.node(), n, c, h, w, haar, lo = family.analysis_lo,
                           hi = family.analysis_hi] {
            if (yn->grad.empty()) return;
            auto g = detail::synthesis_raw(std::span<const T>(yn->grad), n, c, h / 2, w / 2, lo, hi, haar);
            auto& gx = detail::ensure_grad(*xn);
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        });
    }
    return y;
}

/// Single-level 2-D synthesis: packed [N,4C,h,w] -> [N,C,2h,2w].
template <typename T>
Tensor<T> wavelet_synthesis(const Tensor<T>& y, const WaveletFamily& family = WaveletFamily::make(WaveletTag::haar)) {
    detail::require_rank(y.shape(), 4, "wavelet_synthesis");
    if (y.dim(1) % 4) throw ShapeError("wavelet_synthesis: channel count must be a multiple of 4");
    const std::size_t n = y.dim(0), c = y.dim(1) / 4, hh = y.dim(2), wh = y.dim(3);
    const bool haar = family.tag == WaveletTag::haar;
    Tensor<T> x(Shape{n, c, 2 * hh, 2 * wh},
                detail::synthesis_raw(y.data(), n, c, hh, wh, family.synthesis_lo, family.synthesis_hi, haar));
    if (detail::tracks(y)) {
        // Adjoint of synthesis: analysis with the synthesis taps.
        detail::record(x, [yn = y.node(), xn = x.node(), n, c, hh, wh, haar, lo = family.synthesis_lo,
                           hi = family.synthesis_hi] {
            if (xn->grad.empty()) return;
            auto g = detail::analysis_raw(std::span<const T>(xn->grad), n, c, 2 * hh, 2 * wh, lo, hi, haar);
            auto& gy = detail::ensure_grad(*yn);
            for (std::size_t i = 0; i < g.size(); ++i) gy[i] += g[i];
        });
    }
    return x;
}

template <typename T>
struct Subbands {
    Tensor<T> ll, lh, hl, hh;
    /// Extent of the decomposed input before any symmetric padding.
    std::size_t height = 0, width = 0;
};

/// One level of orthonormal Haar decomposition. Odd extents are extended
/// symmetrically by one sample; the original extent is kept for inversion.
template <typename T>
Subbands<T> haar_dwt2(const Tensor<T>& x) {
    detail::require_rank(x.shape(), 4, "haar_dwt2");
    const std::size_t h = x.dim(2), w = x.dim(3);
    const auto padded = pad_symmetric(x, h % 2, w % 2);
    const auto packed = wavelet_analysis(padded);
    const std::size_t c = x.dim(1);
    return {slice_channels(packed, 0, c), slice_channels(packed, c, 2 * c), slice_channels(packed, 2 * c, 3 * c),
            slice_channels(packed, 3 * c, 4 * c), h, w};
}

template <typename T>
Tensor<T> haar_iwt2(const Subbands<T>& bands) {
    const auto& s = bands.ll.shape();
    for (const auto* b : {&bands.lh, &bands.hl, &bands.hh}) {
        if (b->shape() != s) {
            throw ShapeError("haar_iwt2: subband shapes differ: " + to_string(s) + " vs " + to_string(b->shape()));
        }
    }
    auto x = wavelet_synthesis(concat_channels<T>({bands.ll, bands.lh, bands.hl, bands.hh}));
    const std::size_t h = bands.height ? bands.height : x.dim(2);
    const std::size_t w = bands.width ? bands.width : x.dim(3);
    return crop(x, h, w);
}

template <typename T>
struct WaveletPyramid {
    std::vector<Subbands<T>> levels;
    WaveletFamily family;
};

/// Nested decomposition: level l+1 decomposes level l's LL.
template <typename T>
WaveletPyramid<T> haar_pyramid(const Tensor<T>& x, std::size_t levels) {
    WaveletPyramid<T> p;
    p.family = WaveletFamily::make(WaveletTag::haar);
    Tensor<T> cur = x;
    for (std::size_t l = 0; l < levels; ++l) {
        p.levels.push_back(haar_dwt2(cur));
        cur = p.levels.back().ll;
    }
    return p;
}

template <typename T>
T energy(const Tensor<T>& x) {
    T acc = 0;
    for (T v : x.data()) acc += v * v;
    return acc;
}

// ---------------------------------------------------------------------------
// Complexity calculators

/// Multiply-accumulate count of a standard convolution: Cin * Cout * K^2 * H * W.
inline std::uint64_t flops_standard_conv(std::uint64_t cin, std::uint64_t cout, std::uint64_t k, std::uint64_t h,
                                         std::uint64_t w) {
    if (!cin || !cout || !k || !h || !w) throw ValueError("flops_standard_conv: arguments must be >= 1");
    return cin * cout * k * k * h * w;
}

/// HWConv parameter count as stated for the nested transform:
/// 4C * sum_{l=0..levels} (H/2^l) * (W/2^l).
inline std::uint64_t params_hwconv(std::uint64_t c, std::uint64_t levels, std::uint64_t h, std::uint64_t w) {
    if (levels >= 63) throw ValueError("params_hwconv: nesting level out of range");
    const std::uint64_t div = std::uint64_t{1} << levels;
    if (h % div || w % div) throw ValueError("params_hwconv: extent not divisible by 2^levels");
    std::uint64_t acc = 0;
    for (std::uint64_t l = 0; l <= levels; ++l) acc += (h >> l) * (w >> l);
    return 4 * c * acc;
}

// ---------------------------------------------------------------------------
// HWConv

/// Deepest nesting supported by an h x w map: floor(log2(min(h, w))).
inline std::size_t max_wavelet_levels(std::size_t h, std::size_t w) {
    std::size_t side = std::min(h, w), levels = 0;
    while (side >= 2) {
        side /= 2;
        ++levels;
    }
    return levels;
}

/// Nested wavelet convolution with a parallel spatial branch.
///
/// Each level decomposes the previous level's LL and convolves its four
/// subbands jointly (4*Cin -> 4*Cout, 3x3). Reconstruction runs bottom-up:
/// the synthesized output of level l+1 is added to the LL part of level l
/// before level l is synthesized. A 3x3 spatial conv on the input is added to
/// the top-level reconstruction.
template <typename T>
struct HwConv {
    std::size_t levels = 1;
    WaveletFamily family = WaveletFamily::make(WaveletTag::haar);
    bool norm_act = true;
    std::vector<ConvBnRelu<T>> level_convs;
    Conv2d<T> spatial;
    BatchNorm2d<T> out_bn;

    HwConv() = default;
    HwConv(std::size_t cin, std::size_t cout, std::size_t levels_, Rng& rng,
           WaveletFamily fam = WaveletFamily::make(WaveletTag::haar), bool norm_act_ = true)
        : levels(levels_), family(std::move(fam)), norm_act(norm_act_), out_bn(cout) {
        if (levels == 0) throw ValueError("HwConv: levels must be >= 1");
        for (std::size_t l = 0; l < levels; ++l) level_convs.emplace_back(4 * cin, 4 * cout, 3, rng);
        spatial = Conv2d<T>(cin, cout, 3, rng);
    }

    std::size_t in_channels() const { return spatial.in_channels(); }
    std::size_t out_channels() const { return spatial.out_channels(); }

    /// Identity kernels everywhere; with norm_act off the block computes 2x.
    void make_identity() {
        for (auto& lc : level_convs) lc.conv.make_identity();
        spatial.make_identity();
    }

    Tensor<T> operator()(const Tensor<T>& x, bool training) { return forward(x, training, levels); }

    /// Runs with `use_levels` <= levels nested decompositions.
    Tensor<T> forward(const Tensor<T>& x, bool training, std::size_t use_levels) {
        detail::require_rank(x.shape(), 4, "hwconv");
        if (x.dim(1) != in_channels()) throw ShapeError("hwconv: input channel mismatch");
        const std::size_t h = x.dim(2), w = x.dim(3);
        if (use_levels == 0 || use_levels > levels) throw ValueError("hwconv: invalid level count");
        if (use_levels > max_wavelet_levels(h, w)) {
            throw ValueError("hwconv: " + std::to_string(use_levels) + " levels exceed log2 of extent " +
                             to_string(x.shape()));
        }
        const std::size_t div = std::size_t{1} << use_levels;
        const std::size_t pad_h = (div - h % div) % div, pad_w = (div - w % div) % div;
        const Tensor<T> xp = pad_symmetric(x, pad_h, pad_w);

        const std::size_t cin = in_channels(), cout = out_channels();
        std::vector<Tensor<T>> processed;
        Tensor<T> ll = xp;
        for (std::size_t l = 0; l < use_levels; ++l) {
            const auto bands = wavelet_analysis(ll, family);
            ll = slice_channels(bands, 0, cin);
            auto& lc = level_convs[l];
            processed.push_back(norm_act ? lc(bands, training) : lc.conv(bands));
        }
        Tensor<T> recon;
        for (std::size_t l = use_levels; l-- > 0;) {
            Tensor<T> z = processed[l];
            if (l + 1 < use_levels) {
                z = concat_channels<T>({add(slice_channels(z, 0, cout), recon), slice_channels(z, cout, 4 * cout)});
            }
            recon = wavelet_synthesis(z, family);
        }
        Tensor<T> out = crop(add(recon, spatial(xp)), h, w);
        if (norm_act) out = relu(out_bn(out, training));
        return out;
    }

    void visit(const Visitor<T>& f, const std::string& prefix) {
        for (std::size_t l = 0; l < level_convs.size(); ++l) level_convs[l].visit(f, prefix + ".level" + std::to_string(l));
        spatial.visit(f, prefix + ".spatial");
        out_bn.visit(f, prefix + ".out_bn");
    }
};

}  // namespace swan
