#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "swan/data.hpp"

using namespace swan;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    auto dir = fs::temp_directory_path() / ("swan_test_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

void write_bytes(const fs::path& p, const std::vector<unsigned char>& bytes) {
    std::ofstream out(p, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<unsigned char> pgm_fixture() {
    const std::string header = "P5\n2 2\n255\n";
    std::vector<unsigned char> b(header.begin(), header.end());
    for (unsigned char v : {0, 128, 255, 64}) b.push_back(v);
    return b;
}

Tensor<float> random_8bit(std::size_t h, std::size_t w, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> d(0, 255);
    std::vector<float> v(h * w);
    for (auto& x : v) x = static_cast<float>(d(rng)) / 255.0f;
    return Tensor<float>(Shape{1, 1, h, w}, std::move(v));
}

SynthConfig small_synth() {
    SynthConfig c;
    c.count = 20;
    c.height = c.width = 48;
    c.seed = 5;
    return c;
}

}  // namespace

TEST(ImageIo, DecodesHandFixture) {
    const auto t = to_tensor(decode_pgm(pgm_fixture()));
    ASSERT_EQ(t.shape(), (Shape{1, 1, 2, 2}));
    EXPECT_EQ(t[0], 0.0f);
    EXPECT_EQ(t[1], 128.0f / 255.0f);
    EXPECT_EQ(t[2], 1.0f);
    EXPECT_EQ(t[3], 64.0f / 255.0f);
}

TEST(ImageIo, SixteenBitPgm) {
    const std::string header = "P5\n# comment\n1 1\n65535\n";
    std::vector<unsigned char> b(header.begin(), header.end());
    b.push_back(0x80);
    b.push_back(0x00);
    const auto img = decode_pgm(b);
    EXPECT_EQ(img.pixels[0], 0x8000);
    EXPECT_EQ(img.maxval, 65535u);
}

TEST(ImageIo, TruncatedRasterNamesByteCounts) {
    auto b = pgm_fixture();
    b.pop_back();
    try {
        decode_pgm(b);
        FAIL() << "expected IoError";
    } catch (const IoError& e) {
        EXPECT_NE(std::string(e.what()).find("expected 4 bytes, got 3"), std::string::npos) << e.what();
    }
}

TEST(ImageIo, MalformedHeaderReportsOffset) {
    const std::string bad = "P5\n2 x\n255\n";
    try {
        decode_pgm(std::vector<unsigned char>(bad.begin(), bad.end()));
        FAIL() << "expected IoError";
    } catch (const IoError& e) {
        EXPECT_NE(std::string(e.what()).find("at byte 5"), std::string::npos) << e.what();
    }
    const std::string magic = "P2\n1 1\n255\n0";
    EXPECT_THROW(decode_pgm(std::vector<unsigned char>(magic.begin(), magic.end())), IoError);
}

TEST(ImageIo, PgmAndPngRoundtripsAreLossless) {
    const auto dir = scratch_dir("io");
    const auto t = random_8bit(13, 7, 1);
    for (const char* name : {"a.pgm", "a.png"}) {
        save_image(t, dir / name);
        const auto back = load_image(dir / name);
        ASSERT_EQ(back.shape(), t.shape());
        for (std::size_t i = 0; i < t.numel(); ++i) ASSERT_EQ(back[i], t[i]) << name << " index " << i;
    }
    write_bytes(dir / "f.pgm", pgm_fixture());
    EXPECT_EQ(load_image(dir / "f.pgm")[1], 128.0f / 255.0f);
    EXPECT_THROW(load_image(dir / "missing.png"), IoError);
    EXPECT_THROW(load_image(dir / "a.bmp"), IoError);
    fs::remove_all(dir);
}

TEST(ImageIo, HeatmapQuantizesTo256Levels) {
    const auto dir = scratch_dir("heat");
    Tensor<float> p(Shape{1, 1, 1, 4}, std::vector<float>{0.0f, 0.5f, 1.0f, 0.251f});
    save_heatmap(p, dir / "h.png");
    const auto img = read_gray(dir / "h.png");
    EXPECT_EQ(img.pixels, (std::vector<std::uint16_t>{0, 128, 255, 64}));
    fs::remove_all(dir);
}

TEST(Synth, SameSeedIsBitwiseIdentical) {
    const auto a = synth_dataset(small_synth());
    const auto b = synth_dataset(small_synth());
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        for (std::size_t p = 0; p < a[i].image.numel(); ++p) {
            ASSERT_EQ(a[i].image[p], b[i].image[p]);
            ASSERT_EQ(a[i].mask[p], b[i].mask[p]);
        }
    }
    auto other = small_synth();
    other.seed = 6;
    EXPECT_NE(synth_dataset(other)[0].image[100], a[0].image[100]);
}

TEST(Synth, SamplesSatisfyInvariants) {
    for (const auto& s : synth_dataset(small_synth())) {
        EXPECT_EQ(s.image.shape(), s.mask.shape());
        for (float v : s.mask.data()) EXPECT_TRUE(v == 0.0f || v == 1.0f);
        for (float v : s.image.data()) {
            EXPECT_GE(v, 0.0f);
            EXPECT_LE(v, 1.0f);
        }
        const auto n = s.meta["targets"].size();
        EXPECT_GE(n, 1u);
        EXPECT_LE(n, 3u);
    }
}

TEST(Synth, ZeroTargetsGiveEmptyMask) {
    auto c = small_synth();
    c.targets_min = c.targets_max = 0;
    for (const auto& s : synth_dataset(c))
        for (float v : s.mask.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Synth, MeasuredScrFallsInRequestedRange) {
    auto c = small_synth();
    c.count = 100;
    c.scr_min = 4.0;
    c.scr_max = 6.0;
    std::size_t total = 0, inside = 0;
    for (const auto& s : synth_dataset(c)) {
        for (const auto& t : s.meta["targets"]) {
            const double scr = measure_scr(s.image, t["y"].get<std::size_t>(), t["x"].get<std::size_t>());
            ++total;
            inside += scr >= 4.0 - 1e-3 && scr <= 6.0 + 1e-3;
        }
    }
    ASSERT_GT(total, 0u);
    EXPECT_GE(static_cast<double>(inside) / static_cast<double>(total), 0.95);
}

TEST(Synth, MaskMarksPixelsAboveHalfPeak) {
    // Rebuild each target's Gaussian profile from its metadata and compare
    // the mask with the set of pixels above half the peak.
    for (const auto& s : synth_dataset(small_synth())) {
        for (const auto& t : s.meta["targets"]) {
            const auto cy = t["y"].get<int>(), cx = t["x"].get<int>();
            const double r = t["radius"].get<double>();
            const double sigma = r / std::sqrt(2.0 * std::log(2.0));
            for (int di = -6; di <= 6; ++di)
                for (int dj = -6; dj <= 6; ++dj) {
                    const double d2 = di * di + dj * dj;
                    if (std::abs(std::sqrt(d2) - r) < 1e-9) continue;
                    const bool above = std::exp(-d2 / (2 * sigma * sigma)) > 0.5;
                    EXPECT_EQ(s.mask[static_cast<std::size_t>((cy + di) * 48 + cx + dj)] == 1.0f, above)
                        << di << "," << dj << " r=" << r;
                }
        }
    }
}

TEST(Synth, RejectsImpossibleRanges) {
    auto c = small_synth();
    c.radius_max = 6;
    EXPECT_THROW(synth_dataset(c), ValueError);
    c = small_synth();
    c.peak_min = 0.0;
    c.peak_max = 0.05;
    c.base_min = 0.4;
    c.base_max = 0.45;
    EXPECT_THROW(synth_dataset(c), ValueError);
}

TEST(Preprocess, ConstantImageNormalizesToZero) {
    Tensor<float> x(Shape{1, 1, 4, 4}, 0.7f);
    const auto y = minmax_normalize(x);
    for (float v : y.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Preprocess, TrainCropKeepsAlignment) {
    Sample s;
    s.image = random_8bit(40, 40, 2);
    s.mask = Tensor<float>(Shape{1, 1, 40, 40}, 0.0f);
    for (std::size_t i = 0; i < 1600; i += 7) s.mask.mutable_data()[i] = 1.0f;
    const auto norm = minmax_normalize(s.image);
    PreprocessOptions o;
    o.crop = 16;
    Rng rng(3);
    const auto out = preprocess(s, true, o, rng);
    ASSERT_EQ(out.image.shape(), (Shape{1, 1, 16, 16}));
    const auto top = out.meta["crop"]["top"].get<std::size_t>(), left = out.meta["crop"]["left"].get<std::size_t>();
    for (std::size_t i = 0; i < 16; ++i)
        for (std::size_t j = 0; j < 16; ++j) {
            EXPECT_EQ(out.image[i * 16 + j], norm[(top + i) * 40 + left + j]);
            EXPECT_EQ(out.mask[i * 16 + j], s.mask[(top + i) * 40 + left + j]);
        }
    Rng again(3);
    EXPECT_EQ(preprocess(s, true, o, again).meta["crop"], out.meta["crop"]);
}

TEST(Preprocess, SmallImageIsZeroPaddedBeforeCrop) {
    Sample s;
    s.image = random_8bit(8, 8, 4);
    s.mask = Tensor<float>(Shape{1, 1, 8, 8}, 1.0f);
    PreprocessOptions o;
    o.crop = 16;
    Rng rng(5);
    const auto out = preprocess(s, true, o, rng);
    EXPECT_EQ(out.image.shape(), (Shape{1, 1, 16, 16}));
    float sum = 0;
    for (float v : out.mask.data()) sum += v;
    EXPECT_EQ(sum, 64.0f);
}

TEST(Preprocess, FlipMirrorsImageAndMaskTogether) {
    Sample s;
    s.image = random_8bit(4, 4, 6);
    s.mask = Tensor<float>(Shape{1, 1, 4, 4}, 0.0f);
    s.mask.mutable_data()[0] = 1.0f;
    PreprocessOptions o;
    o.crop = 4;
    o.flip = true;
    bool seen = false;
    for (std::uint64_t seed = 0; seed < 16 && !seen; ++seed) {
        Rng rng(seed);
        const auto out = preprocess(s, true, o, rng);
        if (!out.meta["crop"]["flip"].get<bool>()) continue;
        seen = true;
        EXPECT_EQ(out.mask[3], 1.0f);
        EXPECT_EQ(out.image[3], minmax_normalize(s.image)[0]);
    }
    EXPECT_TRUE(seen);
}

TEST(Preprocess, EvalPadsToMultipleAndUnpads) {
    Sample s;
    s.image = random_8bit(17, 30, 7);
    s.mask = Tensor<float>(Shape{1, 1, 17, 30}, 0.0f);
    Rng rng(0);
    const auto out = preprocess(s, false, PreprocessOptions{}, rng);
    EXPECT_EQ(out.image.shape(), (Shape{1, 1, 32, 32}));
    EXPECT_EQ(out.top, 7u);
    EXPECT_EQ(out.left, 1u);
    const auto back = unpad(out.image, out);
    const auto norm = minmax_normalize(s.image);
    ASSERT_EQ(back.shape(), s.image.shape());
    for (std::size_t i = 0; i < back.numel(); ++i) EXPECT_EQ(back[i], norm[i]);
}

TEST(Split, EightTwoDisjointExhaustive) {
    const auto s = split_indices(10, 0.8, 1);
    EXPECT_EQ(s.train.size(), 8u);
    EXPECT_EQ(s.test.size(), 2u);
    std::vector<int> seen(10, 0);
    for (auto i : s.train) ++seen[i];
    for (auto i : s.test) ++seen[i];
    for (int v : seen) EXPECT_EQ(v, 1);
    const auto again = split_indices(10, 0.8, 1);
    EXPECT_EQ(again.train, s.train);
    EXPECT_EQ(again.test, s.test);
    EXPECT_THROW(split_indices(1, 0.8, 1), ValueError);
}

TEST(DatasetDir, WriteThenReadRoundtrips) {
    const auto dir = scratch_dir("ds");
    auto c = small_synth();
    c.count = 5;
    const auto samples = synth_dataset(c);
    const auto sp = split_indices(samples.size(), 0.8, c.seed);
    write_dataset(dir, samples, sp, to_json(c), c.seed);
    EXPECT_TRUE(fs::exists(dir / "images" / "0000.png"));
    EXPECT_TRUE(fs::exists(dir / "masks" / "0004.png"));
    const auto ds = read_dataset(dir);
    ASSERT_EQ(ds.samples.size(), 5u);
    EXPECT_EQ(ds.split.train, sp.train);
    EXPECT_EQ(ds.split.test, sp.test);
    EXPECT_EQ(ds.manifest["seed"].get<std::uint64_t>(), c.seed);
    for (std::size_t i = 0; i < 5; ++i) {
        for (std::size_t p = 0; p < samples[i].mask.numel(); ++p) {
            ASSERT_EQ(ds.samples[i].mask[p], samples[i].mask[p]);
            ASSERT_NEAR(ds.samples[i].image[p], samples[i].image[p], 0.5 / 255 + 1e-6);
        }
    }
    fs::remove_all(dir);
    EXPECT_THROW(read_dataset(dir), IoError);
}
