#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "swan/metrics.hpp"

using namespace swan;

namespace {

using Mask = std::vector<std::uint8_t>;

Mask mask_from(const std::vector<int>& v) { return Mask(v.begin(), v.end()); }

// 4x4 case: gt has 4 positives, prediction hits 2 of them and adds 1 extra.
const Mask kGt = mask_from({1, 1, 0, 0, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0});
const Mask kPred = mask_from({1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0});

Mask random_mask(std::mt19937_64& rng, std::size_t n, double p) {
    std::bernoulli_distribution d(p);
    Mask m(n);
    for (auto& v : m) v = d(rng);
    return m;
}

}  // namespace

TEST(Confusion, PerfectPrediction) {
    Mask gt(16, 0);
    for (int i : {0, 3, 5, 9, 15}) gt[i] = 1;
    EXPECT_EQ(confusion(gt, gt), (ConfusionCounts{5, 0, 0, 11}));
}

TEST(Confusion, EmptyPrediction) {
    Mask gt(16, 0), pred(16, 0);
    for (int i : {1, 2, 3, 4, 5}) gt[i] = 1;
    EXPECT_EQ(confusion(pred, gt), (ConfusionCounts{0, 0, 5, 11}));
}

TEST(Confusion, HandCountedCase) { EXPECT_EQ(confusion(kPred, kGt), (ConfusionCounts{2, 1, 2, 11})); }

TEST(Confusion, RejectsNonBinaryAndSizeMismatch) {
    Mask a(4, 0), b(4, 0), c(5, 0);
    a[1] = 2;
    EXPECT_THROW(confusion(a, b), std::invalid_argument);
    EXPECT_THROW(confusion(b, c), std::invalid_argument);
}

TEST(Report, PerfectPredictions) {
    const auto r = report({{kGt, kGt}});
    EXPECT_EQ(*r.miou, 1.0);
    EXPECT_EQ(*r.niou, 1.0);
    EXPECT_EQ(*r.pd, 1.0);
    EXPECT_EQ(*r.f1, 1.0);
    EXPECT_EQ(*r.fa, 0.0);
}

TEST(Report, HandCountedCase) {
    const auto r = report({{kPred, kGt}});
    EXPECT_DOUBLE_EQ(*r.miou, 2.0 / 5.0);
    EXPECT_DOUBLE_EQ(*r.pd, 0.5);
    EXPECT_DOUBLE_EQ(*r.fa, 1.0 / 12.0);
    // 2TP / (2TP + FP + FN) = 4 / 7, which also equals 2 miou / (1 + miou).
    EXPECT_DOUBLE_EQ(*r.f1, 4.0 / 7.0);
    EXPECT_EQ(*r.miou, *r.niou);
}

TEST(Report, NiouIsPerImageMean) {
    // IoU 0.5 on a 2x2 image and 1.0 on a 4x4 image.
    const Mask g1 = mask_from({1, 1, 0, 0}), p1 = mask_from({1, 0, 0, 0});
    const auto r = report({{p1, g1}, {kGt, kGt}});
    EXPECT_DOUBLE_EQ(*r.niou, 0.75);
    EXPECT_EQ(r.n_samples, 2u);
}

TEST(Report, EmptyGroundTruthIsNull) {
    const Mask z(16, 0);
    const auto r = report({{z, z}});
    EXPECT_FALSE(r.pd.has_value());
    EXPECT_FALSE(r.miou.has_value());
    EXPECT_FALSE(r.niou.has_value());
    EXPECT_EQ(*r.fa, 0.0);
    EXPECT_TRUE(to_json(r)["pd"].is_null());
}

TEST(Report, RejectsEmptyBatch) { EXPECT_THROW(report({}), std::invalid_argument); }

TEST(Report, MatchesBruteForceOracle) {
    std::mt19937_64 rng(2024);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<Mask> preds, gts;
        std::vector<std::vector<int>> opred, ogt;
        std::vector<MaskPair> pairs;
        for (int n = 0; n < 10; ++n) {
            preds.push_back(random_mask(rng, 256, 0.1));
            gts.push_back(random_mask(rng, 256, 0.1));
            opred.emplace_back(preds.back().begin(), preds.back().end());
            ogt.emplace_back(gts.back().begin(), gts.back().end());
        }
        for (int n = 0; n < 10; ++n) pairs.push_back({preds[n], gts[n]});
        const auto r = report(pairs);
        const auto o = oracle::tally(opred, ogt);
        EXPECT_EQ(r.counts.tp, static_cast<std::uint64_t>(o.tp));
        EXPECT_EQ(r.counts.fp, static_cast<std::uint64_t>(o.fp));
        EXPECT_EQ(r.counts.fn, static_cast<std::uint64_t>(o.fn));
        EXPECT_EQ(r.counts.tn, static_cast<std::uint64_t>(o.tn));
        EXPECT_NEAR(*r.miou, static_cast<double>(o.tp) / static_cast<double>(o.tp + o.fp + o.fn), 1e-12);
        EXPECT_NEAR(*r.niou, oracle::mean_image_iou(opred, ogt), 1e-12);
        EXPECT_NEAR(*r.f1, 2 * *r.miou / (1 + *r.miou), 1e-12);
    }
}

TEST(Report, DuplicatingAnImageKeepsNiouMean) {
    const Mask g1 = mask_from({1, 1, 0, 0}), p1 = mask_from({1, 0, 0, 0});
    const auto a = report({{p1, g1}, {kPred, kGt}});
    const auto b = report({{p1, g1}, {kPred, kGt}, {kPred, kGt}});
    EXPECT_DOUBLE_EQ(*a.niou, (0.5 + 0.4) / 2);
    EXPECT_DOUBLE_EQ(*b.niou, (0.5 + 0.4 + 0.4) / 3);
}

TEST(Report, AddingTruePositiveNeverHurts) {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        auto gt = random_mask(rng, 64, 0.2);
        auto pred = random_mask(rng, 64, 0.2);
        const auto before = report({{pred, gt}});
        for (std::size_t i = 0; i < gt.size(); ++i) {
            if (gt[i] && !pred[i]) {
                pred[i] = 1;
                break;
            }
        }
        const auto after = report({{pred, gt}});
        if (!before.pd) continue;
        EXPECT_GE(*after.pd, *before.pd);
        EXPECT_GE(*after.f1, *before.f1);
        EXPECT_GE(*after.miou, *before.miou);
    }
}

TEST(Roc, ExtremesAndMonotonicity) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    std::vector<std::vector<float>> probs(5, std::vector<float>(64));
    std::vector<Mask> gts;
    std::vector<ProbPair> items;
    for (auto& p : probs)
        for (auto& v : p) v = u(rng);
    for (int n = 0; n < 5; ++n) gts.push_back(random_mask(rng, 64, 0.2));
    for (int n = 0; n < 5; ++n) items.push_back({probs[n], gts[n]});
    const auto thresholds = default_thresholds(99);
    const auto roc = roc_sweep(items, thresholds);
    ASSERT_EQ(roc.size(), 99u);
    EXPECT_LT(*roc.front().pd, 0.05);
    EXPECT_LT(*roc.front().fa, 0.05);
    EXPECT_EQ(*roc.back().pd, 1.0);
    for (std::size_t i = 1; i < roc.size(); ++i) {
        EXPECT_GE(*roc[i].pd, *roc[i - 1].pd);
        EXPECT_GE(*roc[i].fa, *roc[i - 1].fa);
    }
    for (std::size_t i = 0; i < roc.size(); ++i) {
        const auto r = report_at(items, thresholds[i]);
        EXPECT_EQ(*r.pd, *roc[i].pd);
        EXPECT_EQ(*r.fa, *roc[i].fa);
    }
}

TEST(Roc, PerfectSeparatorReachesCorner) {
    const std::vector<float> prob{0.9f, 0.1f, 0.8f, 0.2f};
    const Mask gt = mask_from({1, 0, 1, 0});
    const auto roc = roc_sweep({{prob, gt}}, {0.95, 0.5, 0.05});
    EXPECT_EQ(*roc[1].pd, 1.0);
    EXPECT_EQ(*roc[1].fa, 0.0);
}

TEST(Roc, RejectsBadThresholds) {
    const std::vector<float> prob{0.5f};
    const Mask gt{1};
    EXPECT_THROW(roc_sweep({{prob, gt}}, {0.5, 0.5}), std::invalid_argument);
    EXPECT_THROW(roc_sweep({{prob, gt}}, {0.2, 0.4}), std::invalid_argument);
    EXPECT_THROW(roc_sweep({{prob, gt}}, {1.0}), std::invalid_argument);
}

TEST(Roc, CsvHasOneRowPerPoint) {
    const std::vector<float> prob{0.9f, 0.1f};
    const Mask gt = mask_from({1, 0});
    const auto csv = roc_csv(roc_sweep({{prob, gt}}, {0.5, 0.05}));
    EXPECT_EQ(csv, "threshold,fa,pd\n0.5,0,1\n0.050000000000000003,1,1\n");
}

TEST(TargetLevel, EightConnectedComponents) {
    // Two diagonal pixels form one component; an isolated pixel forms another.
    const Mask m = mask_from({1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0});
    std::vector<std::int32_t> labels;
    EXPECT_EQ(label_components(m, 4, 4, labels), 2u);
    EXPECT_EQ(labels[0], labels[5]);
    EXPECT_NE(labels[0], labels[11]);
}

TEST(TargetLevel, OverlapCountsAsDetection) {
    const Mask gt = mask_from({1, 1, 0, 0, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 1, 1});
    const Mask pred = mask_from({0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0});
    const auto r = target_report({{{pred, gt}, 4, 4}});
    EXPECT_EQ(r.counts.targets, 2u);
    EXPECT_EQ(r.counts.detected, 1u);
    EXPECT_EQ(r.counts.false_pixels, 1u);
    EXPECT_DOUBLE_EQ(*r.pd, 0.5);
    EXPECT_DOUBLE_EQ(*r.fa, 1.0 / 16.0);
}
