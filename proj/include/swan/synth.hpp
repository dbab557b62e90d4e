#pragma once

// Synthetic infrared-like scenes: smooth clutter, gradients and pixel noise
// with small Gaussian targets placed at a requested signal-to-clutter ratio.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include <json.hpp>

#include "swan/layers.hpp"
#include "swan/tensor.hpp"

namespace swan {

/// Image (values in [0, 1]) and binary mask, both [1, 1, H, W].
struct Sample {
    Tensor<float> image, mask;
    nlohmann::json meta = nlohmann::json::object();
    /// Region of the tensors holding original content (set by eval-mode padding).
    std::size_t top = 0, left = 0, height = 0, width = 0;
};

struct SynthConfig {
    std::size_t count = 200;
    std::size_t height = 64, width = 64;
    std::size_t targets_min = 1, targets_max = 3;
    double radius_min = 1.0, radius_max = 4.0;
    /// Bounds on the absolute peak pixel value of a target.
    double peak_min = 0.0, peak_max = 1.0;
    double scr_min = 3.0, scr_max = 8.0;
    double base_min = 0.15, base_max = 0.45;
    double gradient_max = 0.15;
    double clutter_amplitude = 0.05, clutter_sigma = 4.0;
    double noise_std = 0.015;
    std::uint64_t seed = 0;

    static constexpr std::size_t kBorder = 7;       // half of the 15x15 measurement box
    static constexpr std::size_t kMinSeparation = 16;

    void validate() const {
        auto need = [](bool ok, const std::string& what) {
            if (!ok) throw ValueError("synth: " + what);
        };
        need(count >= 1, "count must be >= 1");
        need(targets_min <= targets_max, "targets_min must not exceed targets_max");
        need(targets_max == 0 || (height >= 2 * kBorder + 1 && width >= 2 * kBorder + 1),
             "images must be at least 15x15 to hold targets");
        need(radius_min >= 1.0 && radius_min <= radius_max && radius_max <= 4.0,
             "target radius must satisfy 1 <= radius_min <= radius_max <= 4 (9x9 small-target limit)");
        need(peak_min >= 0.0 && peak_min < peak_max && peak_max <= 1.0, "peak range must satisfy 0 <= min < max <= 1");
        need(scr_min > 0.0 && scr_min <= scr_max, "SCR range must satisfy 0 < min <= max");
        need(base_min >= 0.0 && base_min <= base_max && base_max < 1.0, "background base range must lie in [0, 1)");
        need(gradient_max >= 0.0 && clutter_amplitude >= 0.0 && noise_std >= 0.0, "background terms must be non-negative");
        need(clutter_sigma > 0.0, "clutter_sigma must be positive");
        need(clutter_amplitude > 0.0 || noise_std > 0.0, "background needs clutter or noise for a finite SCR");
        need(peak_min < base_max + gradient_max + 1.0 && peak_max > base_min - gradient_max,
             "peak range cannot be reached from the background level");
    }
};

namespace detail {

/// Separable Gaussian blur with reflective borders.
inline std::vector<double> gaussian_blur(const std::vector<double>& src, std::size_t h, std::size_t w, double sigma) {
    const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3 * sigma));
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    double norm = 0;
    for (std::ptrdiff_t i = -radius; i <= radius; ++i) {
        kernel[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
        norm += kernel[static_cast<std::size_t>(i + radius)];
    }
    for (auto& k : kernel) k /= norm;
    auto reflect = [](std::ptrdiff_t i, std::ptrdiff_t n) {
        if (n == 1) return std::ptrdiff_t{0};
        const std::ptrdiff_t period = 2 * (n - 1);
        i %= period;
        if (i < 0) i += period;
        return i < n ? i : period - i;
    };
    const auto H = static_cast<std::ptrdiff_t>(h), W = static_cast<std::ptrdiff_t>(w);
    std::vector<double> tmp(src.size()), out(src.size());
    for (std::ptrdiff_t i = 0; i < H; ++i)
        for (std::ptrdiff_t j = 0; j < W; ++j) {
            double acc = 0;
            for (std::ptrdiff_t t = -radius; t <= radius; ++t)
                acc += kernel[static_cast<std::size_t>(t + radius)] * src[static_cast<std::size_t>(i * W + reflect(j + t, W))];
            tmp[static_cast<std::size_t>(i * W + j)] = acc;
        }
    for (std::ptrdiff_t i = 0; i < H; ++i)
        for (std::ptrdiff_t j = 0; j < W; ++j) {
            double acc = 0;
            for (std::ptrdiff_t t = -radius; t <= radius; ++t)
                acc += kernel[static_cast<std::size_t>(t + radius)] * tmp[static_cast<std::size_t>(reflect(i + t, H) * W + j)];
            out[static_cast<std::size_t>(i * W + j)] = acc;
        }
    return out;
}

struct LocalStats {
    double mean = 0, stddev = 0;
};

/// Mean and population standard deviation over the 15x15 box around (cy, cx)
/// minus its central 9x9 block.
inline LocalStats annulus_stats(const std::vector<double>& img, std::size_t w, std::size_t cy, std::size_t cx) {
    double s = 0, s2 = 0;
    std::size_t n = 0;
    for (std::ptrdiff_t di = -7; di <= 7; ++di)
        for (std::ptrdiff_t dj = -7; dj <= 7; ++dj) {
            if (std::max(std::abs(di), std::abs(dj)) < 5) continue;
            const double v = img[(cy + di) * w + (cx + dj)];
            s += v;
            s2 += v * v;
            ++n;
        }
    const double mean = s / static_cast<double>(n);
    return {mean, std::sqrt(std::max(0.0, s2 / static_cast<double>(n) - mean * mean))};
}

}  // namespace detail

/// Local SCR (peak - annulus mean) / annulus std of a [.., H, W] image at (cy, cx).
inline double measure_scr(const Tensor<float>& image, std::size_t cy, std::size_t cx) {
    const std::size_t h = image.dim(image.rank() - 2), w = image.dim(image.rank() - 1);
    if (cy < 7 || cx < 7 || cy + 7 >= h || cx + 7 >= w) throw ValueError("measure_scr: point too close to the border");
    std::vector<double> img(image.data().begin(), image.data().end());
    const auto st = detail::annulus_stats(img, w, cy, cx);
    return (img[cy * w + cx] - st.mean) / st.stddev;
}

/// One scene. Throws when no valid target placement is found.
inline Sample synth_sample(const SynthConfig& cfg, std::uint64_t index) {
    Rng rng(derive_seed(cfg.seed, index));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
    const std::size_t h = cfg.height, w = cfg.width;

    std::vector<double> img(h * w);
    const double base = uniform(cfg.base_min, cfg.base_max);
    const double gy = uniform(-cfg.gradient_max, cfg.gradient_max), gx = uniform(-cfg.gradient_max, cfg.gradient_max);
    std::vector<double> clutter(h * w);
    for (auto& v : clutter) v = gauss(rng);
    clutter = detail::gaussian_blur(clutter, h, w, cfg.clutter_sigma);
    double c2 = 0;
    for (double v : clutter) c2 += v * v;
    const double cstd = std::sqrt(c2 / static_cast<double>(clutter.size()));
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
            const double ramp = gy * (static_cast<double>(i) / h - 0.5) + gx * (static_cast<double>(j) / w - 0.5);
            const double cl = cstd > 0 ? cfg.clutter_amplitude * clutter[i * w + j] / cstd : 0.0;
            img[i * w + j] = base + ramp + cl + cfg.noise_std * gauss(rng);
        }
    for (auto& v : img) v = std::clamp(v, 0.0, 1.0);

    std::vector<float> mask(h * w, 0.0f);
    nlohmann::json targets = nlohmann::json::array();
    const std::size_t n_targets =
        cfg.targets_min + static_cast<std::size_t>(unit(rng) * static_cast<double>(cfg.targets_max - cfg.targets_min + 1));
    const std::size_t wanted = std::min(n_targets, cfg.targets_max);
    std::vector<std::pair<std::size_t, std::size_t>> centers;
    constexpr int kAttempts = 200;
    for (std::size_t t = 0; t < wanted; ++t) {
        bool placed = false;
        for (int attempt = 0; attempt < kAttempts && !placed; ++attempt) {
            const std::size_t cy = SynthConfig::kBorder + static_cast<std::size_t>(unit(rng) * (h - 2 * SynthConfig::kBorder));
            const std::size_t cx = SynthConfig::kBorder + static_cast<std::size_t>(unit(rng) * (w - 2 * SynthConfig::kBorder));
            const double radius = uniform(cfg.radius_min, cfg.radius_max);
            const double scr = uniform(cfg.scr_min, cfg.scr_max);
            const bool crowded = std::any_of(centers.begin(), centers.end(), [&](const auto& c) {
                const double dy = static_cast<double>(c.first) - static_cast<double>(cy);
                const double dx = static_cast<double>(c.second) - static_cast<double>(cx);
                return dy * dy + dx * dx < static_cast<double>(SynthConfig::kMinSeparation * SynthConfig::kMinSeparation);
            });
            if (crowded) continue;
            const auto st = detail::annulus_stats(img, w, cy, cx);
            if (st.stddev <= 0) continue;
            const double peak = st.mean + scr * st.stddev;
            const double amplitude = peak - img[cy * w + cx];
            if (amplitude <= 0 || peak < cfg.peak_min || peak > cfg.peak_max) continue;

            // Half maximum at d = radius; the tail stops before the measurement annulus.
            const double sigma = radius / std::sqrt(2.0 * std::log(2.0));
            const double cutoff = std::min(2.0 * radius, 4.5);
            std::vector<double> next = img;
            bool overflow = false;
            for (std::ptrdiff_t di = -4; di <= 4; ++di)
                for (std::ptrdiff_t dj = -4; dj <= 4; ++dj) {
                    const double d = std::hypot(static_cast<double>(di), static_cast<double>(dj));
                    if (d > cutoff) continue;
                    const std::size_t p = (cy + di) * w + (cx + dj);
                    next[p] += amplitude * std::exp(-d * d / (2 * sigma * sigma));
                    if (next[p] > 1.0) overflow = true;
                }
            if (overflow) continue;
            img = std::move(next);
            for (std::ptrdiff_t di = -4; di <= 4; ++di)
                for (std::ptrdiff_t dj = -4; dj <= 4; ++dj) {
                    if (std::hypot(static_cast<double>(di), static_cast<double>(dj)) < radius) mask[(cy + di) * w + (cx + dj)] = 1.0f;
                }
            centers.emplace_back(cy, cx);
            targets.push_back({{"y", cy}, {"x", cx}, {"radius", radius}, {"scr", scr}, {"amplitude", amplitude}});
            placed = true;
        }
        if (!placed) {
            throw ValueError("synth: could not place a target in sample " + std::to_string(index) +
                             " within the SCR and peak-intensity ranges; widen peak range or lower SCR");
        }
    }

    Sample s;
    s.image = Tensor<float>(Shape{1, 1, h, w}, std::vector<float>(img.begin(), img.end()));
    s.mask = Tensor<float>(Shape{1, 1, h, w}, std::move(mask));
    s.meta = {{"index", index}, {"seed", cfg.seed}, {"targets", targets}};
    s.height = h;
    s.width = w;
    return s;
}

inline std::vector<Sample> synth_dataset(const SynthConfig& cfg) {
    cfg.validate();
    std::vector<Sample> out;
    out.reserve(cfg.count);
    for (std::size_t i = 0; i < cfg.count; ++i) out.push_back(synth_sample(cfg, i));
    return out;
}

inline nlohmann::json to_json(const SynthConfig& c) {
    return {{"count", c.count},
            {"height", c.height},
            {"width", c.width},
            {"targets_min", c.targets_min},
            {"targets_max", c.targets_max},
            {"radius_min", c.radius_min},
            {"radius_max", c.radius_max},
            {"peak_min", c.peak_min},
            {"peak_max", c.peak_max},
            {"scr_min", c.scr_min},
            {"scr_max", c.scr_max},
            {"base_min", c.base_min},
            {"base_max", c.base_max},
            {"gradient_max", c.gradient_max},
            {"clutter_amplitude", c.clutter_amplitude},
            {"clutter_sigma", c.clutter_sigma},
            {"noise_std", c.noise_std},
            {"seed", c.seed}};
}

}  // namespace swan
