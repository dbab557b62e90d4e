#pragma once

// Full encoder-decoder with deep supervision and its loss.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "swan/attention.hpp"
#include "swan/rdca.hpp"
#include "swan/wavelet.hpp"

namespace swan {

inline constexpr std::size_t kStages = 5;

struct ModelConfig {
    std::vector<std::size_t> channels{32, 64, 128, 256, 512};
    std::size_t hwconv_levels = 2;
    std::size_t window = 16;
    std::size_t heads = 1;
    std::size_t mlp_ratio = 2;
    std::string wavelet = "haar";
    bool deep_supervision = true;
    std::uint64_t seed = 0;
    /// Initial foreground probability encoded in the head biases; 0 keeps the default bias init.
    double head_prior = 0.01;
    // Ablation switches; all on is the full model.
    bool use_hwconv = true;
    bool use_ssa = true;
    bool use_rdca = true;

    void validate() const {
        if (channels.size() != kStages) {
            throw ValueError("model.channels: expected 5 widths, got " + std::to_string(channels.size()));
        }
        for (std::size_t k = 0; k < kStages; ++k) {
            if (channels[k] == 0 || channels[k] % 2) throw ValueError("model.channels: widths must be positive and even");
            if (k > 0 && channels[k] <= channels[k - 1]) throw ValueError("model.channels: widths must be strictly increasing");
        }
        if (hwconv_levels == 0) throw ValueError("model.hwconv_levels: must be >= 1");
        if (window == 0 || (window & (window - 1)) != 0) {
            throw ValueError("model.window: must be a power of two, got " + std::to_string(window));
        }
        if (heads == 0) throw ValueError("model.heads: must be >= 1");
        for (auto c : channels) {
            if (c % heads) throw ValueError("model.heads: must divide every channel width");
        }
        if (mlp_ratio == 0) throw ValueError("model.mlp_ratio: must be >= 1");
        if (!(head_prior >= 0.0 && head_prior < 1.0)) throw ValueError("model.head_prior: must lie in [0, 1)");
        WaveletFamily::from_name(wavelet);
    }
};

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

template <typename T>
struct SwanOutputs {
    std::vector<Tensor<T>> per_stage;  // stage 1 (finest) .. stage 5, each [N,1,H,W]
    Tensor<T> fused;
};

inline constexpr double kProbFloor = 1e-7;

/// Clamps to [1e-7, 1 - 1e-7]; the gradient passes straight through.
template <typename T>
Tensor<T> clamp_probability(const Tensor<T>& p) {
    const T lo = static_cast<T>(kProbFloor), hi = static_cast<T>(1.0 - kProbFloor);
    std::vector<T> out(p.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(p[i], lo, hi);
    Tensor<T> y(p.shape(), std::move(out));
    if (detail::tracks(p)) {
        detail::record(y, [pn = p.node(), yn = y.node()] {
            if (yn->grad.empty()) return;
            auto& gp = detail::ensure_grad(*pn);
            for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += yn->grad[i];
        });
    }
    return y;
}

/// Mean binary cross-entropy. `p` is clamped to [1e-7, 1 - 1e-7]; `y` must be 0/1.
template <typename T>
Tensor<T> bce_loss(const Tensor<T>& p, const Tensor<T>& y) {
    detail::require_same_shape(p.shape(), y.shape(), "bce_loss");
    const double lo = kProbFloor, hi = 1.0 - kProbFloor;
    const std::size_t n = p.numel();
    double acc = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const T t = y[i];
        if (t != T(0) && t != T(1)) throw ValueError("bce_loss: target values must be 0 or 1");
        const double pc = std::clamp(static_cast<double>(p[i]), lo, hi);
        acc -= t == T(1) ? std::log(pc) : std::log(1.0 - pc);
    }
    Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc / static_cast<double>(n)));
    if (detail::tracks(p)) {
        detail::record(out, [pn = p.node(), yn = y.node(), on = out.node(), lo, hi, n] {
            if (on->grad.empty()) return;
            auto& gp = detail::ensure_grad(*pn);
            const double g = static_cast<double>(on->grad[0]) / static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) {
                const double pc = std::clamp(static_cast<double>(pn->data[i]), lo, hi);
                gp[i] += static_cast<T>(g * (pc - static_cast<double>(yn->data[i])) / (pc * (1.0 - pc)));
            }
        });
    }
    return out;
}

template <typename T>
struct LossParts {
    std::vector<Tensor<T>> stage;  // L_1..L_5
    Tensor<T> fused;               // L_cat
    Tensor<T> total;
};

/// Per-head BCE terms and their sum in the order L_1 + ... + L_5 + L_cat.
/// Without deep supervision only the fused term contributes.
template <typename T>
LossParts<T> loss_parts(const SwanOutputs<T>& outs, const Tensor<T>& y, bool deep_supervision = true) {
    LossParts<T> parts;
    parts.fused = bce_loss(outs.fused, y);
    if (!deep_supervision) {
        parts.total = parts.fused;
        return parts;
    }
    std::optional<Tensor<T>> total;
    for (const auto& p : outs.per_stage) {
        parts.stage.push_back(bce_loss(p, y));
        total = total ? add(*total, parts.stage.back()) : parts.stage.back();
    }
    parts.total = total ? add(*total, parts.fused) : parts.fused;
    return parts;
}

template <typename T>
Tensor<T> deep_supervision_loss(const SwanOutputs<T>& outs, const Tensor<T>& y) {
    return loss_parts(outs, y, true).total;
}

/// One encoder stage: HWConv, or a plain 3x3 conv + BN + relu in the baseline.
template <typename T>
struct EncoderStage {
    std::optional<HwConv<T>> hw;
    std::optional<ConvBnRelu<T>> plain;

    Tensor<T> operator()(const Tensor<T>& x, bool training) {
        if (hw) return hw->forward(x, training, std::min(hw->levels, max_wavelet_levels(x.dim(2), x.dim(3))));
        return (*plain)(x, training);
    }

    void visit(const Visitor<T>& f, const std::string& prefix) {
        if (hw) hw->visit(f, prefix + ".hw");
        if (plain) plain->visit(f, prefix + ".conv");
    }
};

/// One decoder fusion: RDCA, or concat + 3x3 conv + BN + relu without it.
template <typename T>
struct DecoderStage {
    std::optional<Rdca<T>> rdca;
    std::optional<ConvBnRelu<T>> plain;

    Tensor<T> operator()(const Tensor<T>& up, const Tensor<T>& skip, bool training) {
        if (rdca) return (*rdca)(up, skip, training);
        return (*plain)(concat_channels<T>({up, skip}), training);
    }

    void visit(const Visitor<T>& f, const std::string& prefix) {
        if (rdca) rdca->visit(f, prefix + ".rdca");
        if (plain) plain->visit(f, prefix + ".conv");
    }
};

template <typename T>
struct SwanModel {
    ModelConfig cfg;
    std::vector<EncoderStage<T>> encoder;
    std::vector<SsaBlock<T>> ssa;          // empty when use_ssa is off
    std::vector<DecoderStage<T>> decoder;  // decoder[k] produces stage k (0-based), k = 0..3
    std::vector<Conv2d<T>> heads;          // 1x1 -> 1 channel per stage
    Conv2d<T> fuse_head;                   // 1x1 over the 5 upsampled stage logits

    /// Visits every parameter and buffer in a fixed order.
    void visit(const Visitor<T>& f) {
        for (std::size_t k = 0; k < encoder.size(); ++k) encoder[k].visit(f, "enc" + std::to_string(k + 1));
        for (std::size_t k = 0; k < ssa.size(); ++k) ssa[k].visit(f, "ssa" + std::to_string(k + 1));
        for (std::size_t k = 0; k < decoder.size(); ++k) decoder[k].visit(f, "dec" + std::to_string(k + 1));
        for (std::size_t k = 0; k < heads.size(); ++k) heads[k].visit(f, "head" + std::to_string(k + 1));
        fuse_head.visit(f, "head_fused");
    }

    std::vector<Tensor<T>*> parameters() {
        std::vector<Tensor<T>*> out;
        visit([&](const std::string&, Tensor<T>& t, Slot s) {
            if (s == Slot::parameter) out.push_back(&t);
        });
        return out;
    }

    std::uint64_t parameter_count() {
        std::uint64_t total = 0;
        for (auto* p : parameters()) total += p->numel();
        return total;
    }

    void set_requires_grad(bool on) {
        for (auto* p : parameters()) p->set_requires_grad(on);
    }

    void zero_grad() {
        for (auto* p : parameters()) p->drop_grad();
    }

    SwanOutputs<T> forward(const Tensor<T>& x, bool training) {
        detail::require_rank(x.shape(), 4, "swan_forward");
        if (x.dim(1) != 1) throw ShapeError("swan_forward: expected a single-channel image, got " + to_string(x.shape()));
        const std::size_t h = x.dim(2), w = x.dim(3);
        if (h % 16 || w % 16) {
            throw ShapeError("swan_forward: height and width must be multiples of 16, got " + std::to_string(h) + "x" +
                             std::to_string(w) + "; pad the image (e.g. eval-mode preprocess) first");
        }

        std::vector<Tensor<T>> skips;
        Tensor<T> feat = x;
        for (std::size_t k = 0; k < kStages; ++k) {
            if (k > 0) feat = maxpool2d(feat);
            feat = encoder[k](feat, training);
            skips.push_back(ssa.empty() ? feat : ssa[k](feat));
        }

        std::vector<Tensor<T>> stage(kStages);
        stage[kStages - 1] = skips[kStages - 1];
        for (std::size_t k = kStages - 1; k-- > 0;) {
            stage[k] = decoder[k](bilinear_upsample2x(stage[k + 1]), skips[k], training);
        }

        SwanOutputs<T> outs;
        std::vector<Tensor<T>> logits;
        for (std::size_t k = 0; k < kStages; ++k) {
            auto l = heads[k](stage[k]);
            if (k > 0) l = upsample_bilinear(l, std::size_t{1} << k);
            logits.push_back(l);
            outs.per_stage.push_back(clamp_probability(sigmoid(l)));
        }
        outs.fused = clamp_probability(sigmoid(fuse_head(concat_channels(logits))));
        return outs;
    }
};

/// Builds and Kaiming-initializes the model; each component draws from its own seeded stream.
template <typename T>
SwanModel<T> build_swan(const ModelConfig& cfg) {
    cfg.validate();
    SwanModel<T> m;
    m.cfg = cfg;
    const auto family = WaveletFamily::from_name(cfg.wavelet);
    const auto& ch = cfg.channels;
    std::uint64_t consumer = 0;
    auto stream = [&] { return Rng(derive_seed(cfg.seed, consumer++)); };

    for (std::size_t k = 0; k < kStages; ++k) {
        const std::size_t cin = k == 0 ? 1 : ch[k - 1];
        auto rng = stream();
        EncoderStage<T> e;
        if (cfg.use_hwconv) {
            e.hw.emplace(cin, ch[k], cfg.hwconv_levels, rng, family);
        } else {
            e.plain.emplace(cin, ch[k], 3, rng);
        }
        m.encoder.push_back(std::move(e));
    }
    for (std::size_t k = 0; k < kStages; ++k) {
        auto rng = stream();
        if (cfg.use_ssa) m.ssa.emplace_back(ch[k], cfg.window, rng, cfg.heads, cfg.mlp_ratio);
    }
    for (std::size_t k = 0; k + 1 < kStages; ++k) {
        auto rng = stream();
        DecoderStage<T> d;
        // The deeper input is the upsampled output of the stage below: width ch[k+1].
        if (cfg.use_rdca) {
            d.rdca.emplace(ch[k + 1], ch[k], ch[k], rng);
        } else {
            d.plain.emplace(ch[k + 1] + ch[k], ch[k], 3, rng);
        }
        m.decoder.push_back(std::move(d));
    }
    for (std::size_t k = 0; k < kStages; ++k) {
        auto rng = stream();
        m.heads.emplace_back(ch[k], 1, 1, rng);
    }
    auto rng = stream();
    m.fuse_head = Conv2d<T>(kStages, 1, 1, rng);
    if (cfg.head_prior > 0) {
        // Stage heads start at the prior; the fused head starts as the mean of the stage logits.
        const T logit = static_cast<T>(std::log(cfg.head_prior / (1.0 - cfg.head_prior)));
        for (auto& h : m.heads) h.bias.mutable_data()[0] = logit;
        for (auto& v : m.fuse_head.weight.mutable_data()) v = T(1) / static_cast<T>(kStages);
        m.fuse_head.bias.mutable_data()[0] = T(0);
    }
    return m;
}

template <typename T>
SwanOutputs<T> swan_forward(SwanModel<T>& model, const Tensor<T>& x, bool training = false) {
    return model.forward(x, training);
}

}  // namespace swan
