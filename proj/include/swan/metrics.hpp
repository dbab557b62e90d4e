#pragma once

// Pixel-level detection metrics, ROC sweeps and an optional target-level mode.

#include <cstdint>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace swan {

struct ConfusionCounts {
    std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;

    std::uint64_t total() const { return tp + fp + fn + tn; }

    ConfusionCounts& operator+=(const ConfusionCounts& o) {
        tp += o.tp;
        fp += o.fp;
        fn += o.fn;
        tn += o.tn;
        return *this;
    }
    friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

using Ratio = std::optional<double>;

/// num / den, or null when den == 0.
inline Ratio safe_ratio(std::uint64_t num, std::uint64_t den) {
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
}

inline ConfusionCounts confusion(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt) {
    if (pred.size() != gt.size()) {
        throw std::invalid_argument("confusion: prediction has " + std::to_string(pred.size()) + " pixels, ground truth " +
                                    std::to_string(gt.size()));
    }
    ConfusionCounts c;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] > 1 || gt[i] > 1) throw std::invalid_argument("confusion: masks must be binary (0/1)");
        if (pred[i]) {
            gt[i] ? ++c.tp : ++c.fp;
        } else {
            gt[i] ? ++c.fn : ++c.tn;
        }
    }
    return c;
}

/// Intersection over union of one image, TP / (T + P - TP).
inline Ratio iou(const ConfusionCounts& c) { return safe_ratio(c.tp, c.tp + c.fp + c.fn); }

struct RocPoint {
    double threshold = 0;
    Ratio fa, pd;
};

struct MetricsReport {
    ConfusionCounts counts;
    Ratio miou, niou, pd, fa, f1;
    std::vector<RocPoint> roc;
    std::size_t n_samples = 0;
};

struct MaskPair {
    std::span<const std::uint8_t> pred, gt;
};

/// Pooled mIoU, Pd, Fa and F1; nIoU averages the per-image IoU over images where it is defined.
inline MetricsReport report(const std::vector<MaskPair>& pairs) {
    if (pairs.empty()) throw std::invalid_argument("report: empty batch");
    MetricsReport r;
    r.n_samples = pairs.size();
    double niou_sum = 0;
    std::size_t niou_count = 0;
    for (const auto& p : pairs) {
        const auto c = confusion(p.pred, p.gt);
        r.counts += c;
        if (const auto v = iou(c)) {
            niou_sum += *v;
            ++niou_count;
        }
    }
    const auto& c = r.counts;
    r.miou = iou(c);
    r.pd = safe_ratio(c.tp, c.tp + c.fn);
    r.fa = safe_ratio(c.fp, c.fp + c.tn);
    r.f1 = safe_ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn);
    if (niou_count) r.niou = niou_sum / static_cast<double>(niou_count);
    return r;
}

/// Binary mask (p >= threshold).
inline std::vector<std::uint8_t> threshold_map(std::span<const float> prob, double threshold) {
    std::vector<std::uint8_t> out(prob.size());
    for (std::size_t i = 0; i < prob.size(); ++i) out[i] = static_cast<double>(prob[i]) >= threshold ? 1 : 0;
    return out;
}

struct ProbPair {
    std::span<const float> prob;
    std::span<const std::uint8_t> gt;
};

/// report() after thresholding each probability map at `threshold`.
inline MetricsReport report_at(const std::vector<ProbPair>& items, double threshold) {
    std::vector<std::vector<std::uint8_t>> masks;
    masks.reserve(items.size());
    std::vector<MaskPair> pairs;
    for (const auto& it : items) {
        masks.push_back(threshold_map(it.prob, threshold));
        pairs.push_back({masks.back(), it.gt});
    }
    return report(pairs);
}

/// One (fa, pd) point per threshold; thresholds must be strictly descending in (0, 1).
inline std::vector<RocPoint> roc_sweep(const std::vector<ProbPair>& items, const std::vector<double>& thresholds) {
    for (std::size_t i = 0; i < thresholds.size(); ++i) {
        if (!(thresholds[i] > 0.0 && thresholds[i] < 1.0)) throw std::invalid_argument("roc_sweep: thresholds must lie in (0, 1)");
        if (i > 0 && !(thresholds[i] < thresholds[i - 1])) {
            throw std::invalid_argument("roc_sweep: thresholds must be strictly descending");
        }
    }
    std::vector<RocPoint> out;
    out.reserve(thresholds.size());
    for (double t : thresholds) {
        ConfusionCounts c;
        for (const auto& it : items) c += confusion(threshold_map(it.prob, t), it.gt);
        out.push_back({t, safe_ratio(c.fp, c.fp + c.tn), safe_ratio(c.tp, c.tp + c.fn)});
    }
    return out;
}

/// `count` evenly spaced thresholds from just below 1 down to just above 0.
inline std::vector<double> default_thresholds(std::size_t count = 99) {
    std::vector<double> t;
    for (std::size_t i = count; i >= 1; --i) t.push_back(static_cast<double>(i) / static_cast<double>(count + 1));
    return t;
}

// Target-level mode (not pixel-wise): 8-connected components, a ground-truth
// target counts as detected when any predicted pixel overlaps it; false alarms
// are the pixels of predicted components that touch no target.

struct TargetCounts {
    std::uint64_t targets = 0, detected = 0;
    std::uint64_t false_pixels = 0, pixels = 0;
};

struct TargetReport {
    TargetCounts counts;
    Ratio pd, fa;
};

/// Labels 8-connected foreground components; returns the component count.
inline std::size_t label_components(std::span<const std::uint8_t> mask, std::size_t h, std::size_t w,
                                    std::vector<std::int32_t>& labels) {
    if (mask.size() != h * w) throw std::invalid_argument("label_components: mask size does not match extents");
    labels.assign(h * w, -1);
    std::int32_t next = 0;
    std::vector<std::size_t> stack;
    for (std::size_t start = 0; start < h * w; ++start) {
        if (!mask[start] || labels[start] >= 0) continue;
        labels[start] = next;
        stack.push_back(start);
        while (!stack.empty()) {
            const std::size_t p = stack.back();
            stack.pop_back();
            const auto i = static_cast<std::ptrdiff_t>(p / w), j = static_cast<std::ptrdiff_t>(p % w);
            for (std::ptrdiff_t di = -1; di <= 1; ++di)
                for (std::ptrdiff_t dj = -1; dj <= 1; ++dj) {
                    const auto ni = i + di, nj = j + dj;
                    if (ni < 0 || nj < 0 || ni >= static_cast<std::ptrdiff_t>(h) || nj >= static_cast<std::ptrdiff_t>(w)) continue;
                    const auto q = static_cast<std::size_t>(ni) * w + static_cast<std::size_t>(nj);
                    if (mask[q] && labels[q] < 0) {
                        labels[q] = next;
                        stack.push_back(q);
                    }
                }
        }
        ++next;
    }
    return static_cast<std::size_t>(next);
}

inline TargetCounts target_counts(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt, std::size_t h,
                                  std::size_t w) {
    std::vector<std::int32_t> gl, pl;
    const std::size_t ng = label_components(gt, h, w, gl);
    const std::size_t np = label_components(pred, h, w, pl);
    std::vector<bool> hit(ng, false), touches(np, false);
    for (std::size_t i = 0; i < h * w; ++i) {
        if (pred[i] && gt[i]) {
            hit[static_cast<std::size_t>(gl[i])] = true;
            touches[static_cast<std::size_t>(pl[i])] = true;
        }
    }
    TargetCounts c;
    c.targets = ng;
    for (bool b : hit) c.detected += b;
    c.pixels = h * w;
    for (std::size_t i = 0; i < h * w; ++i) {
        if (pred[i] && !touches[static_cast<std::size_t>(pl[i])]) ++c.false_pixels;
    }
    return c;
}

struct SizedMaskPair {
    MaskPair masks;
    std::size_t h = 0, w = 0;
};

inline TargetReport target_report(const std::vector<SizedMaskPair>& pairs) {
    TargetReport r;
    for (const auto& p : pairs) {
        const auto c = target_counts(p.masks.pred, p.masks.gt, p.h, p.w);
        r.counts.targets += c.targets;
        r.counts.detected += c.detected;
        r.counts.false_pixels += c.false_pixels;
        r.counts.pixels += c.pixels;
    }
    r.pd = safe_ratio(r.counts.detected, r.counts.targets);
    r.fa = safe_ratio(r.counts.false_pixels, r.counts.pixels);
    return r;
}

inline nlohmann::json ratio_json(const Ratio& r) { return r ? nlohmann::json(*r) : nlohmann::json(nullptr); }

inline nlohmann::json to_json(const MetricsReport& r) {
    nlohmann::json j;
    j["n_samples"] = r.n_samples;
    j["counts"] = {{"tp", r.counts.tp}, {"fp", r.counts.fp}, {"fn", r.counts.fn}, {"tn", r.counts.tn}};
    j["miou"] = ratio_json(r.miou);
    j["niou"] = ratio_json(r.niou);
    j["pd"] = ratio_json(r.pd);
    j["fa"] = ratio_json(r.fa);
    j["f1"] = ratio_json(r.f1);
    auto roc = nlohmann::json::array();
    for (const auto& p : r.roc) roc.push_back({{"threshold", p.threshold}, {"fa", ratio_json(p.fa)}, {"pd", ratio_json(p.pd)}});
    j["roc"] = roc;
    return j;
}

inline nlohmann::json to_json(const TargetReport& r) {
    return {{"targets", r.counts.targets}, {"detected", r.counts.detected}, {"false_pixels", r.counts.false_pixels},
            {"pd", ratio_json(r.pd)}, {"fa", ratio_json(r.fa)}};
}

/// CSV with header `threshold,fa,pd`; undefined ratios are left empty.
inline std::string roc_csv(const std::vector<RocPoint>& roc) {
    std::ostringstream os;
    os.precision(17);
    os << "threshold,fa,pd\n";
    for (const auto& p : roc) {
        os << p.threshold << ',';
        if (p.fa) os << *p.fa;
        os << ',';
        if (p.pd) os << *p.pd;
        os << '\n';
    }
    return os.str();
}

}  // namespace swan
