#pragma once

// Versioned binary checkpoints.
//
// Layout (little-endian):
//   "SWAN"  u32 version  u64 fnv1a(config json)
//   u32 config length, config json bytes
//   u32 tensor count, then per tensor:
//     u32 name length, name bytes, u32 rank, u32 extents[rank], f32 data[numel]

#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "swan/image_io.hpp"
#include "swan/network.hpp"

namespace swan {

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline nlohmann::json to_json(const ModelConfig& c) {
    return {{"channels", c.channels},   {"hwconv_levels", c.hwconv_levels},
            {"window", c.window},       {"heads", c.heads},
            {"mlp_ratio", c.mlp_ratio}, {"wavelet", c.wavelet},
            {"deep_supervision", c.deep_supervision}, {"seed", c.seed},
            {"head_prior", c.head_prior},
            {"use_hwconv", c.use_hwconv}, {"use_ssa", c.use_ssa},
            {"use_rdca", c.use_rdca}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.channels = j.at("channels").get<std::vector<std::size_t>>();
    c.hwconv_levels = j.at("hwconv_levels").get<std::size_t>();
    c.window = j.at("window").get<std::size_t>();
    c.heads = j.at("heads").get<std::size_t>();
    c.mlp_ratio = j.at("mlp_ratio").get<std::size_t>();
    c.wavelet = j.at("wavelet").get<std::string>();
    c.deep_supervision = j.at("deep_supervision").get<bool>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.head_prior = j.at("head_prior").get<double>();
    c.use_hwconv = j.at("use_hwconv").get<bool>();
    c.use_ssa = j.at("use_ssa").get<bool>();
    c.use_rdca = j.at("use_rdca").get<bool>();
    c.validate();
    return c;
}

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct Reader {
    const std::vector<unsigned char>& bytes;
    std::size_t pos = 0;
    std::string origin;

    void need(std::size_t n) {
        if (bytes.size() - pos < n) {
            throw IoError(origin + ": truncated checkpoint at byte " + std::to_string(pos) + " (need " + std::to_string(n) +
                          " more bytes)");
        }
    }
    std::uint64_t le(int width) {
        need(static_cast<std::size_t>(width));
        std::uint64_t v = 0;
        for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(bytes[pos++]) << (8 * i);
        return v;
    }
    std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
    std::uint64_t u64() { return le(8); }
    std::string str(std::size_t n) {
        need(n);
        std::string s(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.begin() + static_cast<std::ptrdiff_t>(pos + n));
        pos += n;
        return s;
    }
};

}  // namespace detail

struct Checkpoint {
    nlohmann::json config;
    std::uint64_t digest = 0;
    std::map<std::string, Tensor<float>> tensors;
};

inline std::string encode_checkpoint(SwanModel<float>& model) {
    const std::string cfg = to_json(model.cfg).dump();
    std::string out = "SWAN";
    detail::put_u32(out, kCheckpointVersion);
    detail::put_u64(out, fnv1a(cfg));
    detail::put_u32(out, static_cast<std::uint32_t>(cfg.size()));
    out += cfg;
    std::vector<std::pair<std::string, const Tensor<float>*>> entries;
    model.visit([&](const std::string& name, Tensor<float>& t, Slot) { entries.emplace_back(name, &t); });
    detail::put_u32(out, static_cast<std::uint32_t>(entries.size()));
    for (const auto& [name, t] : entries) {
        detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        detail::put_u32(out, static_cast<std::uint32_t>(t->rank()));
        for (auto e : t->shape()) detail::put_u32(out, static_cast<std::uint32_t>(e));
        for (float v : t->data()) {
            std::uint32_t bits;
            std::memcpy(&bits, &v, sizeof bits);
            detail::put_u32(out, bits);
        }
    }
    return out;
}

/// Writes to a temporary sibling and renames it over `path`.
inline void save_checkpoint(SwanModel<float>& model, const std::filesystem::path& path) {
    const std::string bytes = encode_checkpoint(model);
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) throw IoError("cannot write " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

inline Checkpoint decode_checkpoint(const std::vector<unsigned char>& bytes, const std::string& origin = "<memory>") {
    detail::Reader r{bytes, 0, origin};
    if (r.str(4) != "SWAN") throw IoError(origin + ": not a SWAN checkpoint (bad magic)");
    const auto version = r.u32();
    if (version != kCheckpointVersion) {
        throw IoError(origin + ": unsupported checkpoint version " + std::to_string(version));
    }
    Checkpoint ck;
    ck.digest = r.u64();
    const std::string cfg = r.str(r.u32());
    if (fnv1a(cfg) != ck.digest) throw IoError(origin + ": config digest mismatch");
    try {
        ck.config = nlohmann::json::parse(cfg);
    } catch (const nlohmann::json::exception& e) {
        throw IoError(origin + ": embedded config is not valid JSON");
    }
    const auto count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = r.str(r.u32());
        const auto rank = r.u32();
        Shape shape;
        for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(r.u32());
        const std::size_t n = numel(shape);
        r.need(4 * n);
        std::vector<float> data(n);
        for (auto& v : data) {
            const std::uint32_t bits = r.u32();
            std::memcpy(&v, &bits, sizeof v);
        }
        ck.tensors.emplace(std::move(name), Tensor<float>(shape, std::move(data)));
    }
    if (r.pos != bytes.size()) throw IoError(origin + ": trailing bytes after checkpoint payload");
    return ck;
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
    return decode_checkpoint(detail::read_file(path), path.string());
}

/// Copies checkpoint tensors into a model of the same architecture.
inline void apply_checkpoint(SwanModel<float>& model, const Checkpoint& ck) {
    std::size_t used = 0;
    model.visit([&](const std::string& name, Tensor<float>& t, Slot) {
        const auto it = ck.tensors.find(name);
        if (it == ck.tensors.end()) throw IoError("checkpoint lacks tensor " + name);
        if (it->second.shape() != t.shape()) {
            throw IoError("checkpoint tensor " + name + " has shape " + to_string(it->second.shape()) + ", model expects " +
                          to_string(t.shape()));
        }
        auto dst = t.mutable_data();
        std::copy(it->second.data().begin(), it->second.data().end(), dst.begin());
        ++used;
    });
    if (used != ck.tensors.size()) throw IoError("checkpoint holds tensors the model does not use");
}

/// Rebuilds the model described by the checkpoint and loads its weights.
inline SwanModel<float> load_checkpoint(const std::filesystem::path& path) {
    const auto ck = read_checkpoint(path);
    auto model = build_swan<float>(model_config_from_json(ck.config));
    apply_checkpoint(model, ck);
    return model;
}

}  // namespace swan
