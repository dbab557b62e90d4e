#include <gtest/gtest.h>

#include <cmath>

#include "swan/attention.hpp"
#include "test_util.hpp"

using namespace swan;
using swan::testing::expect_bitwise_equal;
using swan::testing::expect_gradcheck;
using swan::testing::probe_weights;
using swan::testing::random_tensor;

namespace {

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

void fill(Tensor<double>& t, double v) {
    for (auto& x : t.mutable_data()) x = v;
}

}  // namespace

TEST(WindowPartition, SingleWindowIsRowMajor) {
    auto x = random_tensor(Shape{1, 2, 3, 3}, 1);
    auto [t, g] = window_partition(x, 3);
    ASSERT_EQ(t.shape(), (Shape{1, 9, 2}));
    for (std::size_t p = 0; p < 9; ++p)
        for (std::size_t c = 0; c < 2; ++c) EXPECT_EQ(t[p * 2 + c], x[c * 9 + p]);
    EXPECT_EQ(g.windows(), 1u);
}

TEST(WindowPartition, RoundtripIsBitwise) {
    auto x = random_tensor(Shape{1, 4, 32, 32}, 2);
    auto [t, g] = window_partition(x, 16);
    EXPECT_EQ(t.shape(), (Shape{4, 256, 4}));
    expect_bitwise_equal(window_reverse(t, g), x);
}

TEST(WindowPartition, PadsToMultipleAndCropsBack) {
    auto x = random_tensor(Shape{1, 1, 17, 17}, 3);
    auto [t, g] = window_partition(x, 16);
    EXPECT_EQ(g.hp, 32u);
    EXPECT_EQ(g.wp, 32u);
    EXPECT_EQ(g.windows(), 4u);
    EXPECT_EQ(t.shape(), (Shape{4, 256, 1}));
    // Window 1 (top right) holds column 16 then padding.
    EXPECT_EQ(t[1 * 256 + 0], x[16]);
    EXPECT_EQ(t[1 * 256 + 1], 0.0);
    expect_bitwise_equal(window_reverse(t, g), x);
}

TEST(WindowPartition, RejectsZeroWindow) {
    auto x = random_tensor(Shape{1, 1, 4, 4}, 4);
    EXPECT_THROW(window_partition(x, 0), ValueError);
}

TEST(CyclicShift, ZeroIsIdentity) {
    auto x = random_tensor(Shape{1, 2, 5, 5}, 5);
    expect_bitwise_equal(cyclic_shift(x, 0, 0), x);
}

TEST(CyclicShift, HandRoll) {
    Tensor<double> x(Shape{1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
    auto y = cyclic_shift(x, 1, 1);
    EXPECT_EQ(std::vector<double>(y.data().begin(), y.data().end()), (std::vector<double>{4, 3, 2, 1}));
}

TEST(CyclicShift, RoundtripForEveryOffset) {
    auto x = random_tensor(Shape{2, 3, 8, 8}, 6);
    for (std::ptrdiff_t d = 0; d < 8; ++d) expect_bitwise_equal(cyclic_shift(cyclic_shift(x, d, d), -d, -d), x);
}

TEST(RelativeBias, ExhaustiveEnumeration) {
    for (std::size_t M : {2u, 3u}) {
        const std::size_t span = 2 * M - 1, L = M * M;
        Tensor<double> table(Shape{1, span, span});
        for (std::size_t i = 0; i < span * span; ++i) table.mutable_data()[i] = 100.0 + static_cast<double>(i);
        auto bias = relative_position_bias(table, M);
        ASSERT_EQ(bias.shape(), (Shape{1, L, L}));
        for (std::size_t yi = 0; yi < M; ++yi)
            for (std::size_t xi = 0; xi < M; ++xi)
                for (std::size_t yj = 0; yj < M; ++yj)
                    for (std::size_t xj = 0; xj < M; ++xj) {
                        const auto dx = static_cast<std::ptrdiff_t>(xj) - static_cast<std::ptrdiff_t>(xi);
                        const auto dy = static_cast<std::ptrdiff_t>(yj) - static_cast<std::ptrdiff_t>(yi);
                        const auto r = static_cast<std::size_t>(dx + static_cast<std::ptrdiff_t>(M) - 1);
                        const auto c = static_cast<std::size_t>(dy + static_cast<std::ptrdiff_t>(M) - 1);
                        const std::size_t i = yi * M + xi, j = yj * M + xj;
                        EXPECT_EQ(bias[i * L + j], table[r * span + c]) << "M=" << M << " i=" << i << " j=" << j;
                    }
    }
}

TEST(RelativeBias, SmallerWindowUsesCentreOfTable) {
    Tensor<double> table(Shape{1, 5, 5});
    for (std::size_t i = 0; i < 25; ++i) table.mutable_data()[i] = static_cast<double>(i);
    auto bias = relative_position_bias(table, 1);
    EXPECT_EQ(bias[0], 12.0);
}

TEST(ShiftedMask, BlocksWrappedRegions) {
    const auto g = WindowGrid::make(Shape{1, 1, 4, 4}, 2);
    auto mask = shifted_window_mask<double>(g, 1);
    ASSERT_EQ(mask.shape(), (Shape{4, 4, 4}));
    // Window 0 is interior: nothing masked.
    for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(mask[i], 0.0);
    // Window 3 (bottom right) mixes four regions: only diagonal entries are open.
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(mask[(3 * 4 + i) * 4 + j] == 0.0, i == j);
}

TEST(WindowAttention, SingleTokenReturnsValueProjection) {
    Rng rng(7);
    AttentionParams<double> p(4, 1, 1, rng);
    auto tokens = random_tensor(Shape{3, 1, 4}, 8);
    auto out = window_attention(tokens, p, true);
    EXPECT_LT(max_abs_diff(out, p.wv(tokens)), 1e-12);
}

TEST(WindowAttention, IdenticalTokensGiveUniformWeights) {
    Rng rng(9);
    AttentionParams<double> p(4, 3, 1, rng);
    Tensor<double> tokens(Shape{1, 9, 4});
    for (std::size_t t = 0; t < 9; ++t)
        for (std::size_t c = 0; c < 4; ++c) tokens.mutable_data()[t * 4 + c] = 0.1 * static_cast<double>(c + 1);
    auto [weights, v] = attention_weights(tokens, p, false, std::nullopt);
    for (double w : weights.data()) EXPECT_NEAR(w, 1.0 / 9.0, 1e-12);
    auto out = window_attention(tokens, p, false);
    for (std::size_t t = 0; t < 9; ++t)
        for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(out[t * 4 + c], v[c], 1e-12);
}

TEST(WindowAttention, DenseOracleWithZeroLogits) {
    // Q K^T = 0 (zero query weights and bias), D = 0: output is the mean of the V rows.
    Rng rng(10);
    AttentionParams<double> p(2, 2, 1, rng);
    fill(p.wq.weight, 0.0);
    fill(p.wq.bias, 0.0);
    p.wv.weight = Tensor<double>(Shape{2, 2}, std::vector<double>{1.0, 2.0, -1.0, 0.5});
    p.wv.bias = Tensor<double>(Shape{2}, std::vector<double>{0.25, -0.75});
    Tensor<double> tokens(Shape{1, 4, 2}, std::vector<double>{1, 0, 0, 1, 2, -1, -3, 4});
    // V rows by hand: v = W x + b.
    const double V[4][2] = {{1.25, -1.75}, {2.25, -0.25}, {0.25, -3.25}, {5.25, 4.25}};
    double mean[2] = {0, 0};
    for (auto& row : V) {
        mean[0] += row[0] / 4;
        mean[1] += row[1] / 4;
    }
    auto out = window_attention(tokens, p, true);
    for (std::size_t t = 0; t < 4; ++t) {
        EXPECT_NEAR(out[t * 2 + 0], mean[0], 1e-12);
        EXPECT_NEAR(out[t * 2 + 1], mean[1], 1e-12);
    }
}

TEST(WindowAttention, RowsSumToOneWithBiasAndMask) {
    Rng rng(11);
    AttentionParams<double> p(4, 2, 2, rng);
    for (auto& v : p.bias_table.mutable_data()) v = std::uniform_real_distribution<double>(-1, 1)(rng);
    const auto g = WindowGrid::make(Shape{1, 4, 4, 4}, 2);
    auto mask = shifted_window_mask<double>(g, 1);
    auto tokens = random_tensor(Shape{4, 4, 4}, 12);
    auto [weights, v] = attention_weights(tokens, p, true, std::optional<Tensor<double>>(mask));
    ASSERT_EQ(weights.shape(), (Shape{8, 4, 4}));
    for (std::size_t r = 0; r < 32; ++r) {
        double s = 0;
        for (std::size_t j = 0; j < 4; ++j) s += weights[r * 4 + j];
        EXPECT_NEAR(s, 1.0, 1e-6);
    }
}

TEST(WindowAttention, RejectsMismatchedMask) {
    Rng rng(13);
    AttentionParams<double> p(4, 2, 1, rng);
    auto tokens = random_tensor(Shape{2, 4, 4}, 14);
    EXPECT_THROW(window_attention(tokens, p, false, std::optional<Tensor<double>>(Tensor<double>::zeros({1, 9, 9}))),
                 ShapeError);
}

TEST(WindowAttention, ZeroBiasEqualsWsaBitwise) {
    Rng rng(15);
    AttentionParams<double> p(4, 4, 1, rng);
    auto tokens = random_tensor(Shape{2, 16, 4}, 16);
    expect_bitwise_equal(window_attention(tokens, p, true), window_attention(tokens, p, false));
}

TEST(WindowAttention, Gradients) {
    Rng rng(17);
    AttentionParams<double> p(4, 2, 2, rng);
    for (auto& v : p.bias_table.mutable_data()) v = std::uniform_real_distribution<double>(-1, 1)(rng);
    const auto g = WindowGrid::make(Shape{1, 4, 4, 4}, 2);
    auto mask = shifted_window_mask<double>(g, 1);
    auto tokens = random_tensor(Shape{4, 4, 4}, 18);
    auto w = probe_weights(64, 19);
    std::vector<NamedTensor> inputs{{"tokens", tokens}};
    p.visit([&](const std::string& n, Tensor<double>& t, Slot) { inputs.push_back({n, t}); }, "attn", true);
    expect_gradcheck(gradcheck([&] {
                         return weighted_sum(window_attention(tokens, p, true, std::optional<Tensor<double>>(mask)),
                                             std::span<const double>(w));
                     },
                               inputs),
                     1e-4);
}

TEST(SsaBlock, ZeroShiftZeroBiasIsSecondWsaPass) {
    Rng rng(20);
    SsaBlock<double> block(4, 4, rng, 1, 2, std::size_t{0});
    block.ssa.wq = block.wsa.wq;
    block.ssa.wk = block.wsa.wk;
    block.ssa.wv = block.wsa.wv;
    auto x = random_tensor(Shape{1, 4, 8, 8}, 21);
    const auto parts = block.forward_parts(x);

    auto [t0, grid] = window_partition(x, 4);
    auto t1 = add(t0, window_attention(block.norm1(t0), block.wsa, false));
    auto t2 = add(t1, block.mlp1(block.norm2(t1)));
    auto t3in = window_partition(window_reverse(t2, grid), grid);
    auto t3 = add(t3in, window_attention(block.norm3(t3in), block.wsa, false));
    auto t4 = add(t3, block.mlp2(block.norm4(t3)));
    expect_bitwise_equal(parts.attended, window_reverse(t4, grid));
}

TEST(SsaBlock, HalfGateHalvesFusedFeatures) {
    Rng rng(22);
    SsaBlock<double> block(4, 4, rng);
    fill(block.gate.weight, 0.0);
    fill(block.gate.bias, 0.0);
    auto x = random_tensor(Shape{2, 4, 8, 8}, 23);
    const auto parts = block.forward_parts(x);
    for (double g : parts.gate.data()) EXPECT_EQ(g, 0.5);
    for (std::size_t i = 0; i < parts.out.numel(); ++i) EXPECT_EQ(parts.out[i], 0.5 * parts.fused[i]);
}

TEST(SsaBlock, OutputShapeMatchesInput) {
    Rng rng(24);
    SsaBlock<double> block(4, 4, rng);
    for (auto s : {Shape{1, 4, 8, 8}, Shape{2, 4, 6, 10}, Shape{1, 4, 2, 2}, Shape{1, 4, 17, 5}}) {
        EXPECT_EQ(block(random_tensor(s, 25)).shape(), s);
    }
}

TEST(SsaBlock, EffectiveWindowShrinksOnSmallMaps) {
    Rng rng(26);
    SsaBlock<double> block(4, 8, rng);
    EXPECT_EQ(block.effective_window(16, 16), (std::pair<std::size_t, std::size_t>{8, 4}));
    EXPECT_EQ(block.effective_window(8, 8), (std::pair<std::size_t, std::size_t>{8, 4}));
    EXPECT_EQ(block.effective_window(4, 4), (std::pair<std::size_t, std::size_t>{4, 0}));
}

TEST(SsaBlock, RejectsInvalidConfig) {
    Rng rng(27);
    EXPECT_THROW(SsaBlock<double>(3, 4, rng), ValueError);
    EXPECT_THROW(SsaBlock<double>(4, 4, rng, 1, 2, std::size_t{4}), ValueError);
    SsaBlock<double> block(4, 4, rng);
    EXPECT_THROW(block(random_tensor(Shape{1, 2, 8, 8}, 28)), ShapeError);
}

TEST(SsaBlock, GradientCheck) {
    Rng rng(29);
    SsaBlock<double> block(4, 4, rng);
    for (auto& v : block.ssa.bias_table.mutable_data()) v = std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
    auto x = random_tensor(Shape{1, 4, 8, 8}, 30);
    auto w = probe_weights(256, 31);
    std::vector<NamedTensor> inputs{{"x", x}};
    block.visit([&](const std::string& n, Tensor<double>& t, Slot s) {
        if (s == Slot::parameter) inputs.push_back({n, t});
    }, "ssa");
    GradCheckOptions o;
    o.max_coords = 16;
    expect_gradcheck(gradcheck([&] { return weighted_sum(block(x), std::span<const double>(w)); }, inputs, o), 1e-3);
}
