#pragma once

// Preprocessing, train/test splitting and the on-disk dataset layout.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <vector>

#include <json.hpp>

#include "swan/image_io.hpp"
#include "swan/synth.hpp"

namespace swan {

struct PreprocessOptions {
    std::size_t crop = 256;
    bool flip = false;
    std::size_t multiple = 16;
};

/// Per-image min-max normalization; a constant image maps to zeros.
inline Tensor<float> minmax_normalize(const Tensor<float>& x) {
    const auto d = x.data();
    const auto [lo, hi] = std::minmax_element(d.begin(), d.end());
    std::vector<float> out(d.size(), 0.0f);
    if (*hi > *lo) {
        const float range = *hi - *lo;
        for (std::size_t i = 0; i < d.size(); ++i) out[i] = (d[i] - *lo) / range;
    }
    return Tensor<float>(x.shape(), std::move(out));
}

namespace detail {

/// Copies the h x w window at (top, left) of a single-plane tensor, reading
/// zeros outside and optionally mirroring horizontally.
inline Tensor<float> plane_window(const Tensor<float>& x, std::ptrdiff_t top, std::ptrdiff_t left, std::size_t h,
                                  std::size_t w, bool mirror = false) {
    const auto H = static_cast<std::ptrdiff_t>(x.dim(2)), W = static_cast<std::ptrdiff_t>(x.dim(3));
    std::vector<float> out(h * w, 0.0f);
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
            const auto si = top + static_cast<std::ptrdiff_t>(i);
            const auto sj = left + static_cast<std::ptrdiff_t>(mirror ? w - 1 - j : j);
            if (si >= 0 && sj >= 0 && si < H && sj < W) out[i * w + j] = x[static_cast<std::size_t>(si * W + sj)];
        }
    return Tensor<float>(Shape{1, 1, h, w}, std::move(out));
}

}  // namespace detail

/// Train mode: normalize, zero-pad up to the crop size if needed, random crop,
/// optional horizontal flip. Eval mode: normalize and center-pad to a multiple
/// of `multiple`; the original region is recorded on the sample.
inline Sample preprocess(const Sample& s, bool train_mode, const PreprocessOptions& opts, Rng& rng) {
    if (s.image.shape() != s.mask.shape() || s.image.rank() != 4 || s.image.dim(0) != 1 || s.image.dim(1) != 1) {
        throw ShapeError("preprocess: expected matching [1,1,H,W] image and mask");
    }
    const std::size_t h = s.image.dim(2), w = s.image.dim(3);
    const auto norm = minmax_normalize(s.image);
    Sample out;
    out.meta = s.meta;
    if (train_mode) {
        if (opts.crop == 0) throw ValueError("preprocess: crop must be positive");
        const std::size_t ph = std::max(h, opts.crop), pw = std::max(w, opts.crop);
        std::uniform_int_distribution<std::size_t> oy(0, ph - opts.crop), ox(0, pw - opts.crop);
        const auto top = static_cast<std::ptrdiff_t>(oy(rng)), left = static_cast<std::ptrdiff_t>(ox(rng));
        bool mirror = false;
        if (opts.flip) mirror = std::bernoulli_distribution(0.5)(rng);
        out.image = detail::plane_window(norm, top, left, opts.crop, opts.crop, mirror);
        out.mask = detail::plane_window(s.mask, top, left, opts.crop, opts.crop, mirror);
        out.meta["crop"] = {{"top", top}, {"left", left}, {"flip", mirror}};
        out.height = out.width = opts.crop;
        return out;
    }
    const std::size_t m = std::max<std::size_t>(1, opts.multiple);
    const std::size_t ph = (h + m - 1) / m * m, pw = (w + m - 1) / m * m;
    out.top = (ph - h) / 2;
    out.left = (pw - w) / 2;
    out.height = h;
    out.width = w;
    out.image = detail::plane_window(norm, -static_cast<std::ptrdiff_t>(out.top), -static_cast<std::ptrdiff_t>(out.left), ph, pw);
    out.mask = detail::plane_window(s.mask, -static_cast<std::ptrdiff_t>(out.top), -static_cast<std::ptrdiff_t>(out.left), ph, pw);
    return out;
}

/// Extracts the original region of an eval-padded map.
inline Tensor<float> unpad(const Tensor<float>& map, const Sample& s) {
    return detail::plane_window(map, static_cast<std::ptrdiff_t>(s.top), static_cast<std::ptrdiff_t>(s.left), s.height, s.width);
}

struct SplitIndices {
    std::vector<std::size_t> train, test;
};

/// Seeded shuffle, then the first round(ratio * n) indices train. Both sides stay nonempty.
inline SplitIndices split_indices(std::size_t n, double ratio, std::uint64_t seed) {
    if (n < 2) throw ValueError("split: need at least 2 samples");
    if (!(ratio > 0.0 && ratio < 1.0)) throw ValueError("split: ratio must lie in (0, 1)");
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    auto n_train = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
    n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
    SplitIndices s;
    s.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    s.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
    return s;
}

template <typename Item>
std::pair<std::vector<Item>, std::vector<Item>> split(const std::vector<Item>& data, double ratio, std::uint64_t seed) {
    const auto s = split_indices(data.size(), ratio, seed);
    std::pair<std::vector<Item>, std::vector<Item>> out;
    for (auto i : s.train) out.first.push_back(data[i]);
    for (auto i : s.test) out.second.push_back(data[i]);
    return out;
}

inline std::vector<std::uint8_t> binary_mask(const Tensor<float>& mask) {
    std::vector<std::uint8_t> out(mask.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = mask[i] > 0.5f ? 1 : 0;
    return out;
}

// Dataset directory: images/NNNN.png, masks/NNNN.png, manifest.json.

struct Dataset {
    std::vector<Sample> samples;
    SplitIndices split;
    nlohmann::json manifest;
};

inline std::string sample_name(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04zu.png", i);
    return buf;
}

inline void write_dataset(const std::filesystem::path& dir, const std::vector<Sample>& samples, const SplitIndices& split,
                          const nlohmann::json& config, std::uint64_t seed) {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "images");
    fs::create_directories(dir / "masks");
    for (std::size_t i = 0; i < samples.size(); ++i) {
        save_image(samples[i].image, dir / "images" / sample_name(i));
        save_image(samples[i].mask, dir / "masks" / sample_name(i));
    }
    nlohmann::json meta = nlohmann::json::array();
    for (const auto& s : samples) meta.push_back(s.meta);
    const nlohmann::json manifest = {{"seed", seed},
                                     {"count", samples.size()},
                                     {"config", config},
                                     {"split", {{"train", split.train}, {"test", split.test}}},
                                     {"samples", meta}};
    std::ofstream out(dir / "manifest.json");
    out << manifest.dump(2) << '\n';
    if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
}

inline Dataset read_dataset(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw IoError("missing manifest.json in " + dir.string());
    Dataset ds;
    try {
        ds.manifest = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw IoError("manifest.json: " + std::string(e.what()));
    }
    const auto count = ds.manifest.at("count").get<std::size_t>();
    for (std::size_t i = 0; i < count; ++i) {
        Sample s;
        s.image = load_image(dir / "images" / sample_name(i));
        const auto mask = load_image(dir / "masks" / sample_name(i));
        if (mask.shape() != s.image.shape()) throw IoError("mask and image sizes differ for sample " + sample_name(i));
        const auto bin = binary_mask(mask);
        s.mask = Tensor<float>(mask.shape(), std::vector<float>(bin.begin(), bin.end()));
        s.height = s.image.dim(2);
        s.width = s.image.dim(3);
        if (ds.manifest.contains("samples") && i < ds.manifest["samples"].size()) s.meta = ds.manifest["samples"][i];
        ds.samples.push_back(std::move(s));
    }
    ds.split.train = ds.manifest.at("split").at("train").get<std::vector<std::size_t>>();
    ds.split.test = ds.manifest.at("split").at("test").get<std::vector<std::size_t>>();
    for (auto i : ds.split.train)
        if (i >= count) throw IoError("manifest split index out of range");
    for (auto i : ds.split.test)
        if (i >= count) throw IoError("manifest split index out of range");
    return ds;
}

}  // namespace swan
