#pragma once

// Merged model/train/synth configuration addressed by flat dotted keys
// ("model.channels", "train.lr0", ...). One root seed feeds every consumer.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "swan/synth.hpp"
#include "swan/train.hpp"

namespace swan {

struct CliConfig {
    std::uint64_t seed = 0;
    double split_ratio = 0.8;
    ModelConfig model;
    TrainConfig train;
    SynthConfig synth;

    /// Per-consumer seeds derived from the root seed.
    std::uint64_t model_seed() const { return derive_seed(seed, 1); }
    std::uint64_t train_seed() const { return derive_seed(seed, 2); }
    std::uint64_t synth_seed() const { return derive_seed(seed, 3); }
    std::uint64_t split_seed() const { return derive_seed(seed, 4); }

    /// Pushes the derived seeds into the sub-configs and validates everything.
    void finalize() {
        model.seed = model_seed();
        train.seed = train_seed();
        synth.seed = synth_seed();
        if (!(split_ratio > 0.0 && split_ratio < 1.0)) throw ValueError("split.ratio: must lie in (0, 1)");
        model.validate();
        train.validate();
        synth.validate();
    }
};

namespace detail {

struct ConfigField {
    std::string key;
    std::function<void(CliConfig&, const nlohmann::json&)> set;
    std::function<nlohmann::json(CliConfig)> get;
};

inline std::uint64_t as_unsigned(const std::string& key, const nlohmann::json& v) {
    if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
        throw ValueError(key + ": expected a non-negative integer, got " + v.dump());
    }
    return v.get<std::uint64_t>();
}

inline double as_number(const std::string& key, const nlohmann::json& v) {
    if (!v.is_number()) throw ValueError(key + ": expected a number, got " + v.dump());
    return v.get<double>();
}

inline bool as_bool(const std::string& key, const nlohmann::json& v) {
    if (!v.is_boolean()) throw ValueError(key + ": expected true or false, got " + v.dump());
    return v.get<bool>();
}

template <typename Member>
ConfigField size_field(std::string key, Member member) {
    return {key, [key, member](CliConfig& c, const nlohmann::json& v) { member(c) = as_unsigned(key, v); },
            [member](CliConfig c) { return nlohmann::json(member(c)); }};
}

template <typename Member>
ConfigField number_field(std::string key, Member member) {
    return {key, [key, member](CliConfig& c, const nlohmann::json& v) { member(c) = as_number(key, v); },
            [member](CliConfig c) { return nlohmann::json(member(c)); }};
}

template <typename Member>
ConfigField bool_field(std::string key, Member member) {
    return {key, [key, member](CliConfig& c, const nlohmann::json& v) { member(c) = as_bool(key, v); },
            [member](CliConfig c) { return nlohmann::json(member(c)); }};
}

inline const std::vector<ConfigField>& config_fields() {
    using C = CliConfig;
    static const std::vector<ConfigField> fields = [] {
        std::vector<ConfigField> f;
        f.push_back(size_field("seed", [](C& c) -> std::uint64_t& { return c.seed; }));
        f.push_back(number_field("split.ratio", [](C& c) -> double& { return c.split_ratio; }));

        f.push_back({"model.channels",
                     [](C& c, const nlohmann::json& v) {
                         if (!v.is_array()) throw ValueError("model.channels: expected an array, got " + v.dump());
                         std::vector<std::size_t> ch;
                         for (const auto& e : v) ch.push_back(as_unsigned("model.channels", e));
                         c.model.channels = std::move(ch);
                     },
                     [](C c) { return nlohmann::json(c.model.channels); }});
        f.push_back(size_field("model.hwconv_levels", [](C& c) -> std::size_t& { return c.model.hwconv_levels; }));
        f.push_back(size_field("model.window", [](C& c) -> std::size_t& { return c.model.window; }));
        f.push_back(size_field("model.heads", [](C& c) -> std::size_t& { return c.model.heads; }));
        f.push_back(size_field("model.mlp_ratio", [](C& c) -> std::size_t& { return c.model.mlp_ratio; }));
        f.push_back({"model.wavelet",
                     [](C& c, const nlohmann::json& v) {
                         if (!v.is_string()) throw ValueError("model.wavelet: expected a string, got " + v.dump());
                         c.model.wavelet = v.get<std::string>();
                     },
                     [](C c) { return nlohmann::json(c.model.wavelet); }});
        f.push_back(bool_field("model.deep_supervision", [](C& c) -> bool& { return c.model.deep_supervision; }));
        f.push_back(number_field("model.head_prior", [](C& c) -> double& { return c.model.head_prior; }));
        f.push_back(bool_field("model.use_hwconv", [](C& c) -> bool& { return c.model.use_hwconv; }));
        f.push_back(bool_field("model.use_ssa", [](C& c) -> bool& { return c.model.use_ssa; }));
        f.push_back(bool_field("model.use_rdca", [](C& c) -> bool& { return c.model.use_rdca; }));

        f.push_back(size_field("train.epochs", [](C& c) -> std::size_t& { return c.train.epochs; }));
        f.push_back(size_field("train.batch", [](C& c) -> std::size_t& { return c.train.batch; }));
        f.push_back(number_field("train.lr0", [](C& c) -> double& { return c.train.lr0; }));
        f.push_back(number_field("train.lr_min", [](C& c) -> double& { return c.train.lr_min; }));
        f.push_back(number_field("train.weight_decay", [](C& c) -> double& { return c.train.weight_decay; }));
        f.push_back(size_field("train.crop", [](C& c) -> std::size_t& { return c.train.crop; }));
        f.push_back(number_field("train.threshold", [](C& c) -> double& { return c.train.threshold; }));
        f.push_back(number_field("train.clip_norm", [](C& c) -> double& { return c.train.clip_norm; }));
        f.push_back(bool_field("train.flip", [](C& c) -> bool& { return c.train.flip; }));
        f.push_back(size_field("train.eval_every", [](C& c) -> std::size_t& { return c.train.eval_every; }));

        f.push_back(size_field("synth.count", [](C& c) -> std::size_t& { return c.synth.count; }));
        f.push_back(size_field("synth.height", [](C& c) -> std::size_t& { return c.synth.height; }));
        f.push_back(size_field("synth.width", [](C& c) -> std::size_t& { return c.synth.width; }));
        f.push_back(size_field("synth.targets_min", [](C& c) -> std::size_t& { return c.synth.targets_min; }));
        f.push_back(size_field("synth.targets_max", [](C& c) -> std::size_t& { return c.synth.targets_max; }));
        f.push_back(number_field("synth.radius_min", [](C& c) -> double& { return c.synth.radius_min; }));
        f.push_back(number_field("synth.radius_max", [](C& c) -> double& { return c.synth.radius_max; }));
        f.push_back(number_field("synth.peak_min", [](C& c) -> double& { return c.synth.peak_min; }));
        f.push_back(number_field("synth.peak_max", [](C& c) -> double& { return c.synth.peak_max; }));
        f.push_back(number_field("synth.scr_min", [](C& c) -> double& { return c.synth.scr_min; }));
        f.push_back(number_field("synth.scr_max", [](C& c) -> double& { return c.synth.scr_max; }));
        f.push_back(number_field("synth.base_min", [](C& c) -> double& { return c.synth.base_min; }));
        f.push_back(number_field("synth.base_max", [](C& c) -> double& { return c.synth.base_max; }));
        f.push_back(number_field("synth.gradient_max", [](C& c) -> double& { return c.synth.gradient_max; }));
        f.push_back(number_field("synth.clutter_amplitude", [](C& c) -> double& { return c.synth.clutter_amplitude; }));
        f.push_back(number_field("synth.clutter_sigma", [](C& c) -> double& { return c.synth.clutter_sigma; }));
        f.push_back(number_field("synth.noise_std", [](C& c) -> double& { return c.synth.noise_std; }));
        return f;
    }();
    return fields;
}

}  // namespace detail

/// Applies a flat object of dotted keys; unknown keys and nested objects are rejected.
inline void apply_config_json(CliConfig& cfg, const nlohmann::json& flat) {
    if (!flat.is_object()) throw ValueError("config: expected a JSON object of dotted keys");
    const auto& fields = detail::config_fields();
    for (const auto& [key, value] : flat.items()) {
        const auto it = std::find_if(fields.begin(), fields.end(), [&](const auto& f) { return f.key == key; });
        if (it == fields.end()) {
            if (value.is_object()) throw ValueError("config: nested object '" + key + "' (use flat dotted keys such as " + key + ".x)");
            throw ValueError("config: unknown key '" + key + "'");
        }
        it->set(cfg, value);
    }
}

inline CliConfig load_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ValueError("config " + path.string() + ": invalid JSON (" + std::string(e.what()) + ")");
    }
    CliConfig cfg;
    apply_config_json(cfg, j);
    return cfg;
}

/// The full effective configuration as flat dotted keys.
inline nlohmann::json to_flat_json(const CliConfig& cfg) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& f : detail::config_fields()) j[f.key] = f.get(cfg);
    return j;
}

}  // namespace swan
