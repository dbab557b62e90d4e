#pragma once

// Grayscale image I/O: binary PGM (8/16-bit) and 8-bit PNG.
// Images load as [1, 1, H, W] tensors with values scaled to [0, 1].

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <vector>

#include "swan/tensor.hpp"

namespace swan {

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Raw grayscale raster; `maxval` is 255 or up to 65535.
struct GrayImage {
    std::size_t height = 0, width = 0;
    std::uint32_t maxval = 255;
    std::vector<std::uint16_t> pixels;
};

namespace detail {

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline bool has_extension(const std::filesystem::path& p, const char* ext) {
    auto e = p.extension().string();
    std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return e == ext;
}

}  // namespace detail

/// Parses a binary (P5) PGM.
inline GrayImage decode_pgm(const std::vector<unsigned char>& bytes, const std::string& origin = "<memory>") {
    std::size_t pos = 0;
    auto fail = [&](const std::string& what) {
        throw IoError(origin + ": malformed PGM header at byte " + std::to_string(pos) + ": " + what);
    };
    auto skip_space = [&] {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (std::isspace(bytes[pos])) {
                ++pos;
            } else {
                break;
            }
        }
    };
    auto read_uint = [&](const char* field) -> std::uint64_t {
        skip_space();
        if (pos >= bytes.size() || !std::isdigit(bytes[pos])) fail(std::string("expected ") + field);
        std::uint64_t v = 0;
        while (pos < bytes.size() && std::isdigit(bytes[pos])) {
            v = v * 10 + (bytes[pos++] - '0');
            if (v > 1u << 30) fail(std::string(field) + " out of range");
        }
        return v;
    };
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') fail("missing P5 magic");
    pos = 2;
    GrayImage img;
    img.width = read_uint("width");
    img.height = read_uint("height");
    const auto maxval = read_uint("maxval");
    if (img.width == 0 || img.height == 0) fail("zero extent");
    if (maxval == 0 || maxval > 65535) fail("maxval must lie in [1, 65535]");
    img.maxval = static_cast<std::uint32_t>(maxval);
    if (pos >= bytes.size() || !std::isspace(bytes[pos])) fail("expected whitespace before raster");
    ++pos;
    const std::size_t bpp = img.maxval > 255 ? 2 : 1;
    const std::size_t expected = img.width * img.height * bpp;
    const std::size_t actual = bytes.size() - pos;
    if (actual < expected) {
        throw IoError(origin + ": truncated PGM raster: expected " + std::to_string(expected) + " bytes, got " +
                      std::to_string(actual));
    }
    img.pixels.resize(img.width * img.height);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
        img.pixels[i] = bpp == 1 ? bytes[pos + i]
                                 : static_cast<std::uint16_t>((bytes[pos + 2 * i] << 8) | bytes[pos + 2 * i + 1]);
        if (img.pixels[i] > img.maxval) throw IoError(origin + ": pixel value exceeds maxval");
    }
    return img;
}

inline std::vector<unsigned char> encode_pgm(const GrayImage& img) {
    const std::string header =
        "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n" + std::to_string(img.maxval) + "\n";
    std::vector<unsigned char> out(header.begin(), header.end());
    for (auto v : img.pixels) {
        if (img.maxval > 255) out.push_back(static_cast<unsigned char>(v >> 8));
        out.push_back(static_cast<unsigned char>(v & 0xff));
    }
    return out;
}

inline GrayImage read_png(const std::filesystem::path& path) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str())) {
        throw IoError(path.string() + ": " + image.message);
    }
    image.format = PNG_FORMAT_GRAY;
    std::vector<png_byte> buf(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
        png_image_free(&image);
        throw IoError(path.string() + ": " + image.message);
    }
    GrayImage img;
    img.width = image.width;
    img.height = image.height;
    img.pixels.assign(buf.begin(), buf.end());
    return img;
}

inline void write_png(const GrayImage& img, const std::filesystem::path& path) {
    if (img.maxval != 255) throw IoError("PNG output supports 8-bit images only");
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(img.width);
    image.height = static_cast<png_uint_32>(img.height);
    image.format = PNG_FORMAT_GRAY;
    std::vector<png_byte> buf(img.pixels.begin(), img.pixels.end());
    if (!png_image_write_to_file(&image, path.c_str(), 0, buf.data(), 0, nullptr)) {
        throw IoError(path.string() + ": " + image.message);
    }
}

/// Reads a .pgm or .png file as a raw raster.
inline GrayImage read_gray(const std::filesystem::path& path) {
    if (detail::has_extension(path, ".pgm")) return decode_pgm(detail::read_file(path), path.string());
    if (detail::has_extension(path, ".png")) return read_png(path);
    throw IoError(path.string() + ": unsupported image format (use .pgm or .png)");
}

inline void write_gray(const GrayImage& img, const std::filesystem::path& path) {
    if (detail::has_extension(path, ".pgm")) {
        const auto bytes = encode_pgm(img);
        std::ofstream out(path, std::ios::binary);
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("cannot write " + path.string());
        return;
    }
    if (detail::has_extension(path, ".png")) return write_png(img, path);
    throw IoError(path.string() + ": unsupported image format (use .pgm or .png)");
}

inline Tensor<float> to_tensor(const GrayImage& img) {
    std::vector<float> data(img.pixels.size());
    const auto maxval = static_cast<float>(img.maxval);
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<float>(img.pixels[i]) / maxval;
    return Tensor<float>(Shape{1, 1, img.height, img.width}, std::move(data));
}

/// Quantizes values in [0, 1] (clamped) to `maxval` levels.
inline GrayImage from_tensor(const Tensor<float>& t, std::uint32_t maxval = 255) {
    if (t.rank() < 2 || t.numel() != t.dim(t.rank() - 2) * t.dim(t.rank() - 1)) {
        throw ShapeError("image tensors must hold a single plane, got " + to_string(t.shape()));
    }
    GrayImage img;
    img.height = t.dim(t.rank() - 2);
    img.width = t.dim(t.rank() - 1);
    img.maxval = maxval;
    img.pixels.resize(t.numel());
    for (std::size_t i = 0; i < t.numel(); ++i) {
        const double v = std::clamp(static_cast<double>(t[i]), 0.0, 1.0);
        img.pixels[i] = static_cast<std::uint16_t>(std::lround(v * maxval));
    }
    return img;
}

inline Tensor<float> load_image(const std::filesystem::path& path) { return to_tensor(read_gray(path)); }

inline void save_image(const Tensor<float>& t, const std::filesystem::path& path) { write_gray(from_tensor(t), path); }

/// Probability map in [0, 1] quantized to 256 gray levels.
inline void save_heatmap(const Tensor<float>& prob, const std::filesystem::path& path) { save_image(prob, path); }

}  // namespace swan
