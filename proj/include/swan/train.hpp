#pragma once

// Optimization loop, evaluation and inference.

#include <cmath>
#include <filesystem>
#include <functional>
#include <numbers>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "swan/checkpoint.hpp"
#include "swan/data.hpp"
#include "swan/metrics.hpp"
#include "swan/network.hpp"

namespace swan {

struct TrainingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TrainConfig {
    std::size_t epochs = 400;
    std::size_t batch = 16;
    double lr0 = 1e-3;
    double lr_min = 1e-5;
    double weight_decay = 5e-4;
    std::size_t crop = 256;
    double threshold = 0.5;
    double clip_norm = 5.0;
    bool flip = false;
    std::uint64_t seed = 0;
    /// Validation every `eval_every` epochs (and always after the last one).
    std::size_t eval_every = 1;

    void validate() const {
        auto need = [](bool ok, const std::string& what) {
            if (!ok) throw ValueError("train: " + what);
        };
        need(epochs >= 1, "epochs must be >= 1");
        need(batch >= 1, "batch must be >= 1");
        need(lr0 > 0 && lr_min > 0 && lr_min <= lr0, "learning rates must satisfy 0 < lr_min <= lr0");
        need(weight_decay >= 0, "weight_decay must be non-negative");
        need(crop >= 16 && crop % 16 == 0, "crop must be a positive multiple of 16");
        need(threshold > 0 && threshold < 1, "threshold must lie in (0, 1)");
        need(clip_norm > 0, "clip_norm must be positive");
        need(eval_every >= 1, "eval_every must be >= 1");
    }
};

inline nlohmann::json to_json(const TrainConfig& t) {
    return {{"epochs", t.epochs},       {"batch", t.batch},         {"lr0", t.lr0},
            {"lr_min", t.lr_min},       {"weight_decay", t.weight_decay}, {"crop", t.crop},
            {"threshold", t.threshold}, {"clip_norm", t.clip_norm}, {"flip", t.flip},
            {"seed", t.seed},           {"eval_every", t.eval_every}};
}

/// Cosine annealing from lr0 at epoch 0 to lr_min at the final epoch.
inline double cosine_lr(std::size_t epoch, std::size_t epochs, double lr0, double lr_min) {
    if (epochs <= 1) return lr0;
    const double t = static_cast<double>(epoch) / static_cast<double>(epochs - 1);
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + std::cos(std::numbers::pi * t));
}

/// Adam with L2 weight decay added to the gradient.
struct Adam {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8, weight_decay = 0;
    std::size_t steps = 0;
    std::vector<std::vector<float>> m, v;

    void step(const std::vector<Tensor<float>*>& params, double lr) {
        if (m.empty()) {
            for (auto* p : params) {
                m.emplace_back(p->numel(), 0.0f);
                v.emplace_back(p->numel(), 0.0f);
            }
        }
        if (m.size() != params.size()) throw ValueError("Adam: parameter list changed between steps");
        ++steps;
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(steps));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(steps));
        for (std::size_t k = 0; k < params.size(); ++k) {
            auto* p = params[k];
            if (!p->has_grad()) continue;
            const auto g = p->grad();
            auto w = p->mutable_data();
            auto& mk = m[k];
            auto& vk = v[k];
            for (std::size_t i = 0; i < w.size(); ++i) {
                const double gi = static_cast<double>(g[i]) + weight_decay * static_cast<double>(w[i]);
                mk[i] = static_cast<float>(beta1 * mk[i] + (1 - beta1) * gi);
                vk[i] = static_cast<float>(beta2 * vk[i] + (1 - beta2) * gi * gi);
                const double mh = mk[i] / c1, vh = vk[i] / c2;
                w[i] = static_cast<float>(w[i] - lr * mh / (std::sqrt(vh) + eps));
            }
        }
    }
};

/// Scales gradients so their global L2 norm is at most `max_norm`; returns the norm before clipping.
inline double clip_grad_norm(const std::vector<Tensor<float>*>& params, double max_norm) {
    double sq = 0;
    for (auto* p : params)
        for (float g : p->grad()) sq += static_cast<double>(g) * g;
    const double norm = std::sqrt(sq);
    if (norm > max_norm) {
        const auto s = static_cast<float>(max_norm / (norm + 1e-6));
        for (auto* p : params)
            for (auto& g : p->mutable_grad()) g *= s;
    }
    return norm;
}

/// Stacks [1,1,H,W] tensors into [N,1,H,W].
inline Tensor<float> stack(const std::vector<Tensor<float>>& items) {
    if (items.empty()) throw ShapeError("stack: no items");
    const auto& s0 = items.front().shape();
    std::vector<float> data;
    data.reserve(items.size() * items.front().numel());
    for (const auto& t : items) {
        if (t.shape() != s0) throw ShapeError("stack: items differ in shape");
        data.insert(data.end(), t.data().begin(), t.data().end());
    }
    return Tensor<float>(Shape{items.size(), s0[1], s0[2], s0[3]}, std::move(data));
}

struct StepResult {
    double loss = 0;
    double grad_norm = 0;
};

inline StepResult train_step(SwanModel<float>& model, Adam& opt, const Tensor<float>& images, const Tensor<float>& masks,
                             double lr, double clip_norm) {
    Tape<float>::current().clear();
    model.set_requires_grad(true);
    model.zero_grad();
    const auto outs = model.forward(images, true);
    const auto loss = loss_parts(outs, masks, model.cfg.deep_supervision).total;
    const double value = loss.item();
    if (!std::isfinite(value)) {
        Tape<float>::current().clear();
        throw TrainingError("non-finite loss (" + std::to_string(value) + ") at optimizer step " + std::to_string(opt.steps + 1) +
                            ", lr " + std::to_string(lr));
    }
    backprop(loss);
    const auto params = model.parameters();
    StepResult r{value, clip_grad_norm(params, clip_norm)};
    opt.step(params, lr);
    return r;
}

/// Eval-mode prediction for one preprocessed sample; returns the fused map
/// restricted to the sample's original region.
inline Tensor<float> predict(SwanModel<float>& model, const Sample& prepared) {
    NoGradGuard guard;
    const auto outs = model.forward(prepared.image, false);
    return unpad(outs.fused, prepared);
}

struct Prediction {
    Tensor<float> prob;
    std::vector<std::uint8_t> gt;
};

inline std::vector<Prediction> predict_all(SwanModel<float>& model, const std::vector<Sample>& samples) {
    std::vector<Prediction> out;
    Rng unused(0);
    for (const auto& s : samples) {
        const auto prepared = preprocess(s, false, PreprocessOptions{}, unused);
        out.push_back({predict(model, prepared), binary_mask(s.mask)});
    }
    return out;
}

inline std::vector<ProbPair> prob_pairs(const std::vector<Prediction>& preds) {
    std::vector<ProbPair> items;
    for (const auto& p : preds) items.push_back({p.prob.data(), p.gt});
    return items;
}

/// Metrics of the fused head at `threshold`, with an optional ROC sweep.
inline MetricsReport evaluate(SwanModel<float>& model, const std::vector<Sample>& samples, double threshold,
                              const std::vector<double>& roc_thresholds = {}) {
    const auto preds = predict_all(model, samples);
    const auto items = prob_pairs(preds);
    auto r = report_at(items, threshold);
    if (!roc_thresholds.empty()) r.roc = roc_sweep(items, roc_thresholds);
    return r;
}

struct InferResult {
    Tensor<float> prob;  // [1,1,H,W]
    Tensor<float> mask;  // 0/1, same shape
};

/// Normalizes and pads the image, runs the model and thresholds the fused map.
inline InferResult infer(SwanModel<float>& model, const Tensor<float>& image, double threshold = 0.5) {
    Sample s;
    s.image = image;
    s.mask = Tensor<float>::zeros(image.shape());
    Rng unused(0);
    const auto prepared = preprocess(s, false, PreprocessOptions{}, unused);
    InferResult r;
    r.prob = predict(model, prepared);
    std::vector<float> m(r.prob.numel());
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = static_cast<double>(r.prob[i]) >= threshold ? 1.0f : 0.0f;
    r.mask = Tensor<float>(r.prob.shape(), std::move(m));
    return r;
}

struct EpochLog {
    std::size_t epoch = 0;
    double loss = 0;
    double lr = 0;
    std::optional<MetricsReport> metrics;
};

inline nlohmann::json to_json(const EpochLog& e) {
    nlohmann::json j = {{"epoch", e.epoch}, {"loss", e.loss}, {"lr", e.lr}};
    for (const char* k : {"miou", "niou", "pd", "fa", "f1"}) j[k] = nullptr;
    if (e.metrics) {
        j["miou"] = ratio_json(e.metrics->miou);
        j["niou"] = ratio_json(e.metrics->niou);
        j["pd"] = ratio_json(e.metrics->pd);
        j["fa"] = ratio_json(e.metrics->fa);
        j["f1"] = ratio_json(e.metrics->f1);
    }
    return j;
}

struct TrainOutputs {
    std::ostream* log = nullptr;                        // JSONL, one object per epoch
    std::optional<std::filesystem::path> checkpoint;   // rewritten after every epoch
    std::function<void(const EpochLog&)> on_epoch;
};

/// Trains `model` on `train_set`, validating on `val_set` with the fused head.
inline std::vector<EpochLog> train(SwanModel<float>& model, const std::vector<Sample>& train_set,
                                   const std::vector<Sample>& val_set, const TrainConfig& tcfg, const TrainOutputs& io = {}) {
    tcfg.validate();
    if (train_set.empty()) throw ValueError("train: empty training set");
    Adam opt;
    opt.weight_decay = tcfg.weight_decay;
    const PreprocessOptions popts{tcfg.crop, tcfg.flip, 16};
    std::vector<EpochLog> logs;
    for (std::size_t epoch = 0; epoch < tcfg.epochs; ++epoch) {
        const double lr = cosine_lr(epoch, tcfg.epochs, tcfg.lr0, tcfg.lr_min);
        std::vector<std::size_t> order(train_set.size());
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle_rng(derive_seed(tcfg.seed, 2 * epoch));
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        Rng aug_rng(derive_seed(tcfg.seed, 2 * epoch + 1));

        double loss_sum = 0;
        std::size_t steps = 0;
        for (std::size_t start = 0; start < order.size(); start += tcfg.batch) {
            std::vector<Tensor<float>> images, masks;
            for (std::size_t i = start; i < std::min(order.size(), start + tcfg.batch); ++i) {
                const auto s = preprocess(train_set[order[i]], true, popts, aug_rng);
                images.push_back(s.image);
                masks.push_back(s.mask);
            }
            const auto r = train_step(model, opt, stack(images), stack(masks), lr, tcfg.clip_norm);
            loss_sum += r.loss;
            ++steps;
        }
        EpochLog e{epoch, loss_sum / static_cast<double>(steps), lr, std::nullopt};
        const bool last = epoch + 1 == tcfg.epochs;
        if (!val_set.empty() && (last || (epoch + 1) % tcfg.eval_every == 0)) {
            e.metrics = evaluate(model, val_set, tcfg.threshold);
        }
        if (io.log) *io.log << to_json(e).dump() << '\n' << std::flush;
        if (io.checkpoint) save_checkpoint(model, *io.checkpoint);
        if (io.on_epoch) io.on_epoch(e);
        logs.push_back(std::move(e));
    }
    return logs;
}

}  // namespace swan
