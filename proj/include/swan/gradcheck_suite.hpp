#pragma once

// Finite-difference suites over the library's ops and blocks, grouped by scope.

#include <random>
#include <span>
#include <string>
#include <vector>

#include "swan/attention.hpp"
#include "swan/gradcheck.hpp"
#include "swan/network.hpp"
#include "swan/rdca.hpp"
#include "swan/wavelet.hpp"

namespace swan {

inline const std::vector<std::string>& gradcheck_scopes() {
    static const std::vector<std::string> scopes{"tensor-op", "hwconv", "ssa", "rdca", "network"};
    return scopes;
}

namespace detail {

inline Tensor<double> suite_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> v(numel(shape));
    for (auto& x : v) x = dist(rng);
    return Tensor<double>(std::move(shape), std::move(v));
}

/// Weighted-sum probe so every output element contributes a distinct gradient.
struct Probe {
    std::vector<double> w;
    explicit Probe(std::uint64_t seed) {
        const auto t = suite_tensor(Shape{4096}, seed);
        w.assign(t.data().begin(), t.data().end());
    }
    Tensor<double> operator()(const Tensor<double>& y) const {
        if (y.numel() > w.size()) throw ShapeError("gradcheck suite: probe too small for " + to_string(y.shape()));
        return weighted_sum(y, std::span<const double>(w.data(), y.numel()));
    }
};

template <typename Module>
void add_parameters(Module& m, std::vector<NamedTensor>& inputs, const std::string& prefix) {
    m.visit([&](const std::string& n, Tensor<double>& t, Slot s) {
        if (s == Slot::parameter) inputs.push_back({n, t});
    }, prefix);
}

inline void append(std::vector<GradCheckResult>& out, const std::string& op, std::vector<GradCheckResult> rs) {
    for (auto& r : rs) {
        r.name = op + ":" + r.name;
        out.push_back(std::move(r));
    }
}

inline std::vector<GradCheckResult> tensor_op_suite(const GradCheckOptions& base) {
    std::vector<GradCheckResult> out;
    const Probe probe(1);
    auto run = [&](const std::string& op, const std::function<Tensor<double>()>& f, std::vector<NamedTensor> in) {
        append(out, op, gradcheck(f, std::move(in), base));
    };

    auto a = suite_tensor({2, 3, 4, 4}, 10), b = suite_tensor({2, 3, 4, 4}, 11);
    run("add", [&] { return probe(add(a, b)); }, {{"a", a}, {"b", b}});
    run("sub", [&] { return probe(sub(a, b)); }, {{"a", a}, {"b", b}});
    run("mul", [&] { return probe(mul(a, b)); }, {{"a", a}, {"b", b}});
    run("scale", [&] { return probe(scale(a, 1.7)); }, {{"a", a}});
    run("relu", [&] { return probe(relu(a)); }, {{"a", a}});
    run("sigmoid", [&] { return probe(sigmoid(a)); }, {{"a", a}});
    run("sum", [&] { return sum(mul(a, a)); }, {{"a", a}});
    run("mean", [&] { return mean(mul(a, b)); }, {{"a", a}, {"b", b}});
    run("concat_slice", [&] { return probe(slice_channels(concat_channels<double>({a, b}), 2, 5)); }, {{"a", a}, {"b", b}});
    run("scale_channels", [&] {
        return probe(scale_channels(a, global_avgpool(b)));
    }, {{"a", a}, {"b", b}});

    auto t = suite_tensor({3, 5, 6}, 12), g = suite_tensor({6}, 13, 0.5, 1.5), be = suite_tensor({6}, 14);
    run("softmax_lastdim", [&] { return probe(softmax_lastdim(t)); }, {{"x", t}});
    run("layer_norm", [&] { return probe(layer_norm(t, g, be)); }, {{"x", t}, {"gamma", g}, {"beta", be}});
    auto lw = suite_tensor({4, 6}, 15), lb = suite_tensor({4}, 16);
    run("linear", [&] { return probe(linear(t, lw, lb)); }, {{"x", t}, {"w", lw}, {"b", lb}});
    auto m1 = suite_tensor({3, 4, 5}, 17), m2 = suite_tensor({3, 6, 5}, 18);
    run("bmm", [&] { return probe(bmm(m1, m2, true)); }, {{"a", m1}, {"b", m2}});

    auto x = suite_tensor({2, 3, 6, 6}, 20), w = suite_tensor({4, 3, 3, 3}, 21), cb = suite_tensor({4}, 22);
    run("conv2d", [&] { return probe(conv2d(x, w, cb, 1, 1)); }, {{"x", x}, {"w", w}, {"b", cb}});
    run("conv2d_stride2", [&] { return probe(conv2d(x, w, cb, 2, 1)); }, {{"x", x}, {"w", w}});
    auto dw = suite_tensor({3, 1, 5, 5}, 23), db = suite_tensor({3}, 24);
    run("depthwise_conv2d", [&] { return probe(depthwise_conv2d(x, dw, db)); }, {{"x", x}, {"w", dw}, {"b", db}});
    auto bg = suite_tensor({3}, 25, 0.5, 1.5), bb = suite_tensor({3}, 26);
    BatchNormState<double> st(3);
    run("batchnorm2d", [&] { return probe(batchnorm2d(x, bg, bb, st, true)); }, {{"x", x}, {"gamma", bg}, {"beta", bb}});
    run("maxpool2d", [&] { return probe(maxpool2d(x)); }, {{"x", x}});
    run("global_avgpool", [&] { return probe(global_avgpool(x)); }, {{"x", x}});
    run("upsample_bilinear", [&] { return probe(upsample_bilinear(x, 4)); }, {{"x", x}});
    run("pad_crop", [&] { return probe(crop(pad_symmetric(x, 2, 2), 5, 7)); }, {{"x", x}});
    run("cyclic_shift", [&] { return probe(cyclic_shift(x, -2, 1)); }, {{"x", x}});
    run("window_partition", [&] { return probe(window_partition(x, 4).first); }, {{"x", x}});

    auto y = suite_tensor({2, 12, 3, 3}, 27);
    run("haar_dwt2", [&] {
        auto s = haar_dwt2(x);
        return probe(concat_channels<double>({s.ll, scale(s.lh, 0.5), s.hl, scale(s.hh, -2.0)}));
    }, {{"x", x}});
    for (auto tag : {WaveletTag::haar, WaveletTag::symlet, WaveletTag::coiflet, WaveletTag::biorthogonal,
                     WaveletTag::reverse_biorthogonal}) {
        const auto fam = WaveletFamily::make(tag);
        run("wavelet_analysis/" + fam.name, [&] { return probe(wavelet_analysis(x, fam)); }, {{"x", x}});
        run("wavelet_synthesis/" + fam.name, [&] { return probe(wavelet_synthesis(y, fam)); }, {{"y", y}});
    }

    auto p = suite_tensor({2, 1, 4, 4}, 28, 0.05, 0.95);
    std::vector<double> yv(32);
    for (std::size_t i = 0; i < yv.size(); i += 3) yv[i] = 1.0;
    const Tensor<double> target({2, 1, 4, 4}, yv);
    run("bce_loss", [&] { return bce_loss(p, target); }, {{"p", p}});
    return out;
}

}  // namespace detail

/// Runs the named scope at 64-bit; results are tagged "op:input".
inline std::vector<GradCheckResult> run_gradcheck_scope(const std::string& scope, double tolerance = 1e-3) {
    GradCheckOptions o;
    o.tolerance = tolerance;
    std::vector<GradCheckResult> out;
    if (scope == "tensor-op") return detail::tensor_op_suite(o);
    if (scope == "hwconv") {
        Rng rng(12);
        HwConv<double> hw(2, 2, 2, rng);
        auto x = detail::suite_tensor({1, 2, 8, 8}, 503);
        std::vector<NamedTensor> in{{"x", x}};
        detail::add_parameters(hw, in, "hwconv");
        o.max_coords = 24;
        const detail::Probe probe(504);
        detail::append(out, "hwconv", gradcheck([&] { return probe(hw(x, true)); }, in, o));
        return out;
    }
    if (scope == "ssa") {
        Rng rng(29);
        SsaBlock<double> block(4, 4, rng);
        for (auto& v : block.ssa.bias_table.mutable_data()) v = std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
        for (auto& v : block.wsa.bias_table.mutable_data()) v = std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
        auto x = detail::suite_tensor({1, 4, 8, 8}, 30);
        std::vector<NamedTensor> in{{"x", x}};
        detail::add_parameters(block, in, "ssa");
        o.max_coords = 16;
        const detail::Probe probe(31);
        detail::append(out, "ssa", gradcheck([&] { return probe(block(x)); }, in, o));
        return out;
    }
    if (scope == "rdca") {
        Rng rng(26);
        auto r = Rdca<double>::halving(4, rng);
        auto up = detail::suite_tensor({1, 4, 8, 8}, 27), skip = detail::suite_tensor({1, 4, 8, 8}, 28);
        std::vector<NamedTensor> in{{"up", up}, {"skip", skip}};
        detail::add_parameters(r, in, "rdca");
        o.max_coords = 24;
        const detail::Probe probe(29);
        detail::append(out, "rdca", gradcheck([&] { return probe(r(up, skip, true)); }, in, o));
        return out;
    }
    if (scope == "network") {
        ModelConfig cfg;
        cfg.channels = {2, 4, 6, 8, 10};
        cfg.window = 2;
        cfg.seed = 21;
        auto m = build_swan<double>(cfg);
        auto x = detail::suite_tensor({2, 1, 32, 32}, 22, 0.0, 1.0);
        std::vector<double> yv(2 * 32 * 32, 0.0);
        for (std::size_t i = 0; i < yv.size(); i += 37) yv[i] = 1.0;
        const Tensor<double> y({2, 1, 32, 32}, yv);
        std::vector<NamedTensor> in;
        m.visit([&](const std::string& n, Tensor<double>& t, Slot s) {
            if (s == Slot::parameter) in.push_back({n, t});
        });
        o.max_coords = 3;
        detail::append(out, "network", gradcheck([&] { return deep_supervision_loss(m.forward(x, true), y); }, in, o));
        return out;
    }
    throw ValueError("gradcheck: unknown scope '" + scope + "' (expected tensor-op, hwconv, ssa, rdca or network)");
}

}  // namespace swan
