#include <gtest/gtest.h>

#include <set>

#include "orbitloc/augment.hpp"
#include "orbitloc/batching.hpp"
#include "orbitloc/kmeans.hpp"
#include "orbitloc/synthetic.hpp"
#include "orbitloc/train.hpp"

using namespace orbitloc;

namespace {

Image noise(int n, std::uint64_t seed)
{
    Rng g(seed);
    Image img(n, n);
    for (auto& v : img.rgb)
        v = static_cast<std::uint8_t>(uniform_index(g, 256));
    return img;
}

Matrix<double> two_blobs(std::size_t per, Rng& g)
{
    Matrix<double> m(2 * per, 3);
    for (std::size_t i = 0; i < 2 * per; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            m(i, j) = (i < per ? -5.0 : 5.0) + unit_uniform(g);
    return m;
}

std::vector<TrainingQuadruplet> tiny_dataset(int regions, int px)
{
    SyntheticConfig sc;
    sc.num_regions = regions;
    sc.num_queries = 0;
    sc.image_px = px;
    return make_synthetic_world(sc).training_data();
}

} // namespace

TEST(KMeans, SingleClusterTakesEverything)
{
    Rng g(1);
    const auto pts = two_blobs(20, g);
    const auto r = kmeans(pts, 1, 3);
    for (const int a : r.assignments)
        EXPECT_EQ(a, 0);
    for (std::size_t j = 0; j < 3; ++j) {
        double mean = 0;
        for (std::size_t i = 0; i < pts.rows; ++i)
            mean += pts(i, j) / static_cast<double>(pts.rows);
        EXPECT_NEAR(r.centroids(0, j), mean, 1e-12);
    }
}

TEST(KMeans, SeparatesTwoBlobs)
{
    Rng g(2);
    const auto pts = two_blobs(50, g);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto r = kmeans(pts, 2, seed);
        for (std::size_t i = 0; i < 50; ++i) {
            EXPECT_EQ(r.assignments[i], r.assignments[0]);
            EXPECT_EQ(r.assignments[50 + i], r.assignments[50]);
        }
        EXPECT_NE(r.assignments[0], r.assignments[50]);
    }
}

TEST(KMeans, DeterministicAndValidated)
{
    Rng g(3);
    Matrix<double> pts(200, 4);
    for (auto& v : pts.data)
        v = unit_uniform(g);
    const auto a = kmeans(pts, 7, 11), b = kmeans(pts, 7, 11);
    EXPECT_EQ(a.assignments, b.assignments);
    EXPECT_EQ(a.centroids, b.centroids);
    EXPECT_THROW(kmeans(pts, 201, 1), invalid_argument_error);
    EXPECT_THROW(kmeans(pts, 0, 1), invalid_argument_error);
    // Duplicate points: no empty clusters survive.
    const auto d = kmeans(Matrix<double>(10, 2, 1.0), 4, 5);
    std::set<int> used(d.assignments.begin(), d.assignments.end());
    EXPECT_EQ(used.size(), 4u);
}

TEST(Batcher, SingleClusterDegenerateCase)
{
    std::vector<int> assign(10, 0);
    ClusteredBatcher b(assign, Matrix<double>(1, 2), 4);
    Rng g(1);
    for (int i = 0; i < 20; ++i) {
        const auto batch = b.next(g);
        EXPECT_EQ(batch.cluster_id, 0);
        EXPECT_EQ(std::set<std::size_t>(batch.regions.begin(), batch.regions.end()).size(), 4u);
    }
}

TEST(Batcher, NoImmediateRepetitionAndSingleCluster)
{
    Rng g(4);
    Matrix<double> pts(2000, 3);
    for (auto& v : pts.data)
        v = unit_uniform(g);
    const auto km = kmeans(pts, 200, 9, 20);
    ClusteredBatcher b(km.assignments, km.centroids, 8);
    int last = -1;
    for (int i = 0; i < 1000; ++i) {
        const auto batch = b.next(g);
        EXPECT_NE(batch.cluster_id, last);
        last = batch.cluster_id;
        const auto& pool = b.pool(batch.cluster_id);
        for (const auto r : batch.regions)
            EXPECT_NE(std::find(pool.begin(), pool.end(), r), pool.end());
        EXPECT_GE(std::set<std::size_t>(batch.regions.begin(), batch.regions.end()).size(), 2u);
    }
}

TEST(Batcher, SmallClustersBorrowFromNearestCentroids)
{
    // cluster 0: one member; cluster 1 near it, cluster 2 far away
    const std::vector<int> assign{0, 1, 1, 1, 2, 2, 2};
    Matrix<double> cen(3, 1);
    cen(0, 0) = 0;
    cen(1, 0) = 1;
    cen(2, 0) = 10;
    ClusteredBatcher b(assign, cen, 3);
    EXPECT_EQ(b.pool(0), (std::vector<std::size_t>{0, 1, 2, 3}));
    EXPECT_THROW(ClusteredBatcher(std::vector<int>{0}, Matrix<double>(1, 1), 3), invalid_argument_error);
}

TEST(Augment, ZeroRangesAreIdentity)
{
    Rng g(5);
    const auto img = noise(32, 1);
    const auto p = sample_augmentation(AugmentationRanges::none(), g);
    EXPECT_EQ(p, AugmentationParams{});
    EXPECT_EQ(apply_augmentation(img, p), img);
}

TEST(Augment, ArbitraryRotationAgreesWithQuarterTurn)
{
    // Smooth image so bilinear sampling is near exact.
    Image img(33, 33);
    for (int y = 0; y < 33; ++y)
        for (int x = 0; x < 33; ++x) {
            img.px(x, y)[0] = static_cast<std::uint8_t>(4 * x);
            img.px(x, y)[1] = static_cast<std::uint8_t>(6 * y);
            img.px(x, y)[2] = static_cast<std::uint8_t>(3 * (x + y));
        }
    for (const int deg : {90, 180, 270}) {
        const auto a = rotate_arbitrary(img, deg), b = rotate90(img, deg);
        for (std::size_t i = 0; i < a.rgb.size(); ++i)
            EXPECT_NEAR(a.rgb[i], b.rgb[i], 1) << deg;
    }
}

TEST(Augment, QuarterTurnsCompose)
{
    const auto img = noise(16, 2);
    EXPECT_EQ(rotate90(rotate90(img, 90), 270), img);
    EXPECT_EQ(rotate90(rotate90(img, 90), 90), rotate90(img, 180));
    // CCW: the top-right pixel moves to the top-left.
    EXPECT_TRUE(std::equal(img.px(15, 0), img.px(15, 0) + 3, rotate90(img, 90).px(0, 0)));
    EXPECT_THROW(rotate90(img, 45), invalid_argument_error);
}

TEST(Augment, PerspectiveCornersSampleDisplacedSource)
{
    const auto img = noise(20, 3);
    std::array<std::array<double, 2>, 4> c{};
    c[0] = {0.1, 0.05}; // TL samples from (2, 1)
    const auto out = perspective_warp(img, c);
    EXPECT_TRUE(std::equal(out.px(0, 0), out.px(0, 0) + 3, img.px(2, 1)));
    EXPECT_TRUE(std::equal(out.px(19, 19), out.px(19, 19) + 3, img.px(19, 19)));
}

TEST(Augment, ColorJitterBrightness)
{
    Image img(2, 2);
    std::fill(img.rgb.begin(), img.rgb.end(), 100);
    AugmentationParams p;
    p.brightness = 0.2;
    EXPECT_EQ(color_jitter(img, p).rgb[0], 120);
}

TEST(YearwiseAugment, OneParameterSetPerYear)
{
    Rng g(6);
    const std::vector<int> years{2018, 2019, 2020, 2021};
    std::vector<Image> imgs;
    std::vector<int> tags;
    for (int r = 0; r < 3; ++r)
        for (const int y : years) {
            imgs.push_back(noise(16, 7)); // same pixels everywhere
            tags.push_back(y);
        }
    const auto out = yearwise_augment(imgs, tags, years, AugmentationRanges{}, g);
    for (std::size_t i = 0; i < imgs.size(); ++i)
        for (std::size_t k = 0; k < imgs.size(); ++k)
            if (tags[i] == tags[k])
                EXPECT_EQ(out.images[i], out.images[k]);
            else
                EXPECT_NE(out.images[i], out.images[k]);
    EXPECT_EQ(out.plan.years, years);
    EXPECT_NE(out.plan.for_year(2018), out.plan.for_year(2019));
    const std::vector<int> bad{2018, 2017};
    EXPECT_THROW(yearwise_augment(std::vector<Image>{imgs[0], imgs[1]}, bad, years, AugmentationRanges{}, g),
                 invalid_argument_error);
    EXPECT_THROW(out.plan.for_year(1999), invalid_argument_error);
}

TEST(YearwiseAugment, ReproducibleUnderSeed)
{
    const std::vector<int> years{2020, 2021};
    const std::vector<Image> imgs{noise(16, 1), noise(16, 2)};
    const std::vector<int> tags{2020, 2021};
    Rng a(3), b(3);
    EXPECT_EQ(yearwise_augment(imgs, tags, years, AugmentationRanges{}, a).images,
              yearwise_augment(imgs, tags, years, AugmentationRanges{}, b).images);
}

TEST(Train, ZeroLearningRateKeepsIdentity)
{
    const auto data = tiny_dataset(24, 16);
    const Extractor ex(ExtractorConfig{32, 2, 1});
    TrainConfig tc;
    tc.clusters = {3, 1000, 2021};
    tc.batch = {4, 4};
    tc.optimizer.lr = 0;
    tc.optimizer.iterations = 5;
    const auto r = train_linear_head(data, ex, tc);
    EXPECT_EQ(r.head.weights, LinearHead::identity(32, 32).weights);
    EXPECT_EQ(r.log.size(), 5u);
}

TEST(Train, LogReproducibleAndLossFinite)
{
    const auto data = tiny_dataset(24, 16);
    const Extractor ex(ExtractorConfig{32, 2, 1});
    TrainConfig tc;
    tc.clusters = {3, 7, 2021};
    tc.batch = {4, 4};
    tc.optimizer.lr = 1e-3;
    tc.optimizer.iterations = 20;
    tc.jobs = 2;
    const auto a = train_linear_head(data, ex, tc);
    tc.jobs = 1;
    const auto b = train_linear_head(data, ex, tc);
    ASSERT_EQ(a.log.size(), b.log.size());
    for (std::size_t i = 0; i < a.log.size(); ++i) {
        EXPECT_EQ(a.log[i].loss, b.log[i].loss);
        EXPECT_EQ(a.log[i].cluster_id, b.log[i].cluster_id);
        EXPECT_TRUE(std::isfinite(a.log[i].loss));
    }
    EXPECT_EQ(a.head.weights, b.head.weights);
    EXPECT_NE(a.head.weights, LinearHead::identity(32, 32).weights);
}

TEST(Train, RejectsBadData)
{
    const Extractor ex(ExtractorConfig{32, 2, 1});
    TrainConfig tc;
    EXPECT_THROW(train_linear_head({}, ex, tc), invalid_argument_error);
    std::vector<TrainingQuadruplet> short_q{{RegionId{10, 1, 1}, {noise(16, 1)}}};
    EXPECT_THROW(train_linear_head(short_q, ex, tc), invalid_argument_error);
}

TEST(Head, EncodeDecodeRoundTrip)
{
    LinearHead h{Matrix<double>(3, 5)};
    Rng g(1);
    for (auto& v : h.weights.data)
        v = unit_uniform(g) - 0.5;
    const auto bytes = encode_head(h);
    EXPECT_EQ(bytes.size(), 12u + 8 * 15);
    EXPECT_EQ(decode_head(bytes).weights, h.weights);
    EXPECT_EQ(decode_head(bytes).fingerprint(), h.fingerprint());
    auto cut = bytes;
    cut.pop_back();
    EXPECT_THROW(decode_head(cut), corruption_error);
}

TEST(Train, SmoothedEndpoints)
{
    std::vector<TrainLogEntry> log;
    for (int i = 0; i < 10; ++i)
        log.push_back({i, static_cast<double>(i), 0, 0});
    const auto [a, b] = smoothed_loss_endpoints(log, 3);
    EXPECT_DOUBLE_EQ(a, 1.0);
    EXPECT_DOUBLE_EQ(b, 8.0);
}
