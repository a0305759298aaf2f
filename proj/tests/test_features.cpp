#include <gtest/gtest.h>

#include <cmath>

#include "orbitloc/features.hpp"
#include "orbitloc/synthetic.hpp"

using namespace orbitloc;

namespace {

Image fill(int n, std::uint8_t r, std::uint8_t g, std::uint8_t b)
{
    Image img(n, n);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            img.px(x, y)[0] = r;
            img.px(x, y)[1] = g;
            img.px(x, y)[2] = b;
        }
    return img;
}

Image noise(int n, std::uint64_t seed)
{
    Rng g(seed);
    Image img(n, n);
    for (auto& v : img.rgb)
        v = static_cast<std::uint8_t>(uniform_index(g, 256));
    return img;
}

} // namespace

TEST(Normalize, KnownVector)
{
    const auto e = l2_normalize(std::vector<double>{3, 4, 0});
    EXPECT_FLOAT_EQ(e[0], 0.6f);
    EXPECT_FLOAT_EQ(e[1], 0.8f);
    EXPECT_FLOAT_EQ(e[2], 0.0f);
    EXPECT_THROW(l2_normalize(std::vector<double>{0, 0, 0}), degenerate_input_error);
    EXPECT_THROW(l2_normalize(std::vector<double>{1, NAN}), invalid_argument_error);
    EXPECT_THROW(Embedding::from_unit({1.0f, 1.0f}), invalid_argument_error);
}

TEST(Cosine, OppositeAndMismatch)
{
    const std::vector<double> a{0.3, -1.2, 2.5, 0.7};
    std::vector<double> neg(a);
    for (auto& v : neg)
        v = -v;
    EXPECT_NEAR(cosine_similarity(l2_normalize(a), l2_normalize(neg)), -1.0, 1e-6);
    EXPECT_NEAR(cosine_similarity(l2_normalize(a), l2_normalize(a)), 1.0, 1e-6);
    EXPECT_THROW(cosine_similarity(l2_normalize(a), l2_normalize(std::vector<double>{1, 2})), invalid_argument_error);
}

TEST(Extractor, DeterministicAndRotationSensitive)
{
    const Extractor a(ExtractorConfig{}), b(ExtractorConfig{});
    const auto img = noise(64, 4);
    EXPECT_EQ(a.extract(img), b.extract(img));
    EXPECT_NE(a.extract(img), a.extract(rotate90(img, 90)));
    EXPECT_LT(cosine_similarity(a.extract(img), a.extract(rotate90(img, 90))), 0.999);
    const auto batch = a.extract_batch(std::vector<Image>{img, noise(64, 5)}, 2);
    EXPECT_EQ(batch[0], a.extract(img));
}

TEST(Extractor, UniformGreyMatchesAnalyticStatistics)
{
    const ExtractorConfig cfg{64, 4, 9};
    const Extractor ex(cfg);
    const std::uint8_t v = 100;
    const auto img = fill(32, v, v, v);
    // Flat image: centred mean per channel, zero spread, empty histogram.
    std::vector<double> analytic;
    for (int b = 0; b < cfg.grid * cfg.grid; ++b) {
        for (int c = 0; c < 3; ++c)
            analytic.push_back(2.0 * (v / 255.0 - 0.5));
        for (int k = 0; k < 3 + ExtractorConfig::kOrientationBins; ++k)
            analytic.push_back(0.0);
    }
    analytic.push_back(kBias);
    const auto stats = block_statistics(img, cfg.grid);
    ASSERT_EQ(stats.size(), analytic.size());
    for (std::size_t i = 0; i < stats.size(); ++i)
        EXPECT_NEAR(stats[i], analytic[i], 1e-12);
    const auto expect = l2_normalize(ex.project(analytic));
    const auto got = ex.extract(img);
    for (std::size_t i = 0; i < got.dim(); ++i)
        EXPECT_NEAR(got[i], expect[i], 1e-6);
}

TEST(Extractor, StepEdgeStatistics)
{
    // Left half black, right half white: one block, vertical edge.
    Image img(8, 8);
    for (int y = 0; y < 8; ++y)
        for (int x = 4; x < 8; ++x)
            std::fill_n(img.px(x, y), 3, 255);
    const auto s = block_statistics(img, 1);
    ASSERT_EQ(s.size(), 15u);
    for (int c = 0; c < 3; ++c) {
        EXPECT_NEAR(s[c], 0.0, 1e-12);       // mean 0.5, centred
        EXPECT_NEAR(s[3 + c], 2.0, 1e-12);   // std 0.5, scaled by 4
    }
    // Two columns carry gradient 0.5 pointing +x (angle 0 -> bin 4).
    for (int b = 0; b < 8; ++b)
        EXPECT_NEAR(s[6 + b], b == 4 ? 10.0 * 8.0 / 64.0 : 0.0, 1e-12) << "bin " << b;
}

TEST(Extractor, ConfigValidation)
{
    EXPECT_THROW(Extractor(ExtractorConfig{10000, 2, 1}), config_error);
    EXPECT_THROW(Extractor(ExtractorConfig{0, 2, 1}), config_error);
    const Extractor ex(ExtractorConfig{16, 2, 1});
    EXPECT_THROW(ex.extract(Image(8, 4)), invalid_argument_error);
    EXPECT_NE(ExtractorConfig({16, 2, 1}).fingerprint(), ExtractorConfig({16, 2, 2}).fingerprint());
}

TEST(Extractor, SelfRetrievalOnSyntheticWorld)
{
    SyntheticConfig cfg;
    cfg.num_queries = 0;
    const auto w = make_synthetic_world(cfg);
    ASSERT_EQ(w.regions.size(), 500u);
    const Extractor ex(ExtractorConfig{});
    std::vector<Embedding> db;
    for (const auto& r : w.regions)
        db.push_back(ex.extract(w.render_region(r, 2021)));
    std::size_t hits = 0;
    for (std::size_t i = 0; i < w.regions.size(); ++i) {
        const auto q = ex.extract(w.texture.render(region_box(w.regions[i]).center().x,
                                                   region_box(w.regions[i]).center().y,
                                                   cfg.grid.side(w.regions[i].zoom), 0.0, cfg.image_px, 2021));
        std::size_t best = 0;
        double bs = -2;
        for (std::size_t k = 0; k < db.size(); ++k) {
            const double s = cosine_similarity(q, db[k]);
            if (s > bs) {
                bs = s;
                best = k;
            }
        }
        hits += best == i;
    }
    EXPECT_GE(hits, 495u);
}

TEST(FeatureStore, RoundTripBitIdentical)
{
    const Extractor ex(ExtractorConfig{32, 2, 3});
    FeatureStore s;
    for (int i = 0; i < 10; ++i)
        s.add({static_cast<std::uint64_t>(i) * 977, static_cast<std::uint16_t>(90 * (i % 4)), 2018}, ex.extract(noise(16, i)));
    const auto bytes = encode_feature_store(s);
    EXPECT_EQ(bytes.size(), 16 + 10 * (12 + 4 * 32u));
    const auto back = decode_feature_store(bytes);
    EXPECT_EQ(back, s);
    EXPECT_EQ(encode_feature_store(back), bytes);

    auto cut = bytes;
    cut.resize(bytes.size() - 3);
    EXPECT_THROW(decode_feature_store(cut), corruption_error);
    auto magic = bytes;
    magic[0] = 'X';
    EXPECT_THROW(decode_feature_store(magic), corruption_error);
    EXPECT_THROW(s.add({}, l2_normalize(std::vector<double>{1, 2})), invalid_argument_error);
}
