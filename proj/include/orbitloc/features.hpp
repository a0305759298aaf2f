#pragma once

// Embedding extraction and similarity primitives.
//
// The baseline extractor is deterministic: per-block colour means and
// variances plus gradient-orientation histograms, concatenated with a bias
// term, multiplied by a seed-fixed +-1 projection and L2-normalised. Any
// other extractor (e.g. a neural network run elsewhere) can feed the same
// pipeline through the EMB1 feature store.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"
#include "image.hpp"
#include "io.hpp"
#include "parallel.hpp"

namespace orbitloc {

/// Unit-norm feature vector.
class Embedding {
public:
    Embedding() = default;

    /// Wraps values that are already unit norm; throws otherwise.
    static Embedding from_unit(std::vector<float> values)
    {
        double n2 = 0.0;
        for (float v : values) {
            if (!std::isfinite(v))
                throw invalid_argument_error("embedding has non-finite entries");
            n2 += static_cast<double>(v) * v;
        }
        if (values.empty() || std::abs(std::sqrt(n2) - 1.0) > 1e-5)
            throw invalid_argument_error("embedding is not unit norm");
        Embedding e;
        e.values_ = std::move(values);
        return e;
    }

    std::size_t dim() const { return values_.size(); }
    std::span<const float> values() const { return values_; }
    float operator[](std::size_t i) const { return values_[i]; }

    friend bool operator==(const Embedding&, const Embedding&) = default;

private:
    std::vector<float> values_;
};

template <typename T>
Embedding l2_normalize(std::span<const T> v)
{
    double n2 = 0.0;
    for (const T x : v) {
        if (!std::isfinite(static_cast<double>(x)))
            throw invalid_argument_error("l2_normalize: non-finite entry");
        n2 += static_cast<double>(x) * static_cast<double>(x);
    }
    if (!(n2 > 0.0))
        throw degenerate_input_error("l2_normalize: zero vector");
    const double inv = 1.0 / std::sqrt(n2);
    std::vector<float> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i)
        out[i] = static_cast<float>(static_cast<double>(v[i]) * inv);
    return Embedding::from_unit(std::move(out));
}

template <typename T>
Embedding l2_normalize(const std::vector<T>& v)
{
    return l2_normalize(std::span<const T>(v));
}

/// Dot product with double accumulation in index order.
inline double dot(std::span<const float> a, std::span<const float> b)
{
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        s += static_cast<double>(a[i]) * b[i];
    return s;
}

inline double cosine_similarity(const Embedding& a, const Embedding& b)
{
    if (a.dim() != b.dim())
        throw invalid_argument_error("cosine_similarity: dimension mismatch");
    return dot(a.values(), b.values());
}

// ---------------------------------------------------------------------------
// Baseline extractor

struct ExtractorConfig {
    int dim = 256;
    int grid = 8;
    std::uint64_t seed = 42;

    static constexpr int kOrientationBins = 8;
    // colour means (3) + colour variances (3) + orientation histogram
    static constexpr int kStatsPerBlock = 6 + kOrientationBins;

    std::size_t raw_size() const { return static_cast<std::size_t>(grid) * grid * kStatsPerBlock + 1; }

    void validate() const
    {
        if (dim < 1 || grid < 1)
            throw config_error("extractor: dim and grid must be positive");
        if (static_cast<std::size_t>(dim) > raw_size())
            throw config_error("extractor: dim " + std::to_string(dim) + " exceeds statistics size " +
                               std::to_string(raw_size()));
    }

    std::string fingerprint() const
    {
        return "blockstats-v2/dim=" + std::to_string(dim) + "/grid=" + std::to_string(grid) +
               "/seed=" + std::to_string(seed);
    }
};

/// Block statistics before projection. Layout per block (row-major blocks):
/// centred mean R,G,B, standard deviation R,G,B, 8 gradient-orientation
/// bins; a trailing constant keeps flat images away from the zero vector.
/// Scales put the three groups in a comparable range.
inline constexpr double kBias = 0.05;

inline std::vector<double> block_statistics(const Image& img, int grid)
{
    if (!img.square())
        throw invalid_argument_error("extract: image must be square and non-empty");
    const int n = img.width;
    if (grid > n)
        throw invalid_argument_error("extract: grid finer than image");

    // Luminance and its central-difference gradient (reflect at borders).
    std::vector<double> lum(static_cast<std::size_t>(n) * n);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            const auto* p = img.px(x, y);
            lum[static_cast<std::size_t>(y) * n + x] = (0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]) / 255.0;
        }
    auto L = [&](int x, int y) { return lum[static_cast<std::size_t>(reflect_index(y, n)) * n + reflect_index(x, n)]; };

    constexpr int bins = ExtractorConfig::kOrientationBins;
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(grid) * grid * ExtractorConfig::kStatsPerBlock + 1);
    for (int by = 0; by < grid; ++by)
        for (int bx = 0; bx < grid; ++bx) {
            const int x0 = bx * n / grid, x1 = (bx + 1) * n / grid;
            const int y0 = by * n / grid, y1 = (by + 1) * n / grid;
            const double count = static_cast<double>(x1 - x0) * (y1 - y0);
            double sum[3] = {0, 0, 0}, sq[3] = {0, 0, 0};
            double hist[bins] = {};
            for (int y = y0; y < y1; ++y)
                for (int x = x0; x < x1; ++x) {
                    const auto* p = img.px(x, y);
                    for (int c = 0; c < 3; ++c)
                        sum[c] += p[c] / 255.0;
                    const double gx = (L(x + 1, y) - L(x - 1, y)) / 2;
                    const double gy = (L(x, y + 1) - L(x, y - 1)) / 2;
                    const double mag = std::sqrt(gx * gx + gy * gy);
                    if (mag > 0) {
                        const double t = (std::atan2(gy, gx) + std::numbers::pi) / (2 * std::numbers::pi);
                        const int b = std::min(bins - 1, static_cast<int>(t * bins));
                        hist[b] += mag;
                    }
                }
            // second pass: deviations from the block mean, exact for flat blocks
            for (int y = y0; y < y1; ++y)
                for (int x = x0; x < x1; ++x)
                    for (int c = 0; c < 3; ++c) {
                        const double d = img.px(x, y)[c] / 255.0 - sum[c] / count;
                        sq[c] += d * d;
                    }
            for (int c = 0; c < 3; ++c)
                out.push_back(2.0 * (sum[c] / count - 0.5));
            for (int c = 0; c < 3; ++c)
                out.push_back(4.0 * std::sqrt(sq[c] / count));
            for (double h : hist)
                out.push_back(10.0 * h / count);
        }
    out.push_back(kBias);
    return out;
}

class Extractor {
public:
    explicit Extractor(ExtractorConfig cfg) : cfg_(cfg)
    {
        cfg_.validate();
        const std::size_t raw = cfg_.raw_size();
        projection_.resize(static_cast<std::size_t>(cfg_.dim) * raw);
        // mt19937_64 output is fully specified, so the sign pattern is the
        // same on every platform.
        std::mt19937_64 gen(cfg_.seed);
        std::uint64_t bits = 0;
        int left = 0;
        for (auto& w : projection_) {
            if (left == 0) {
                bits = gen();
                left = 64;
            }
            w = (bits & 1u) ? 1.0 : -1.0;
            bits >>= 1;
            --left;
        }
    }

    const ExtractorConfig& config() const { return cfg_; }
    int dim() const { return cfg_.dim; }
    std::string fingerprint() const { return cfg_.fingerprint(); }

    /// Projection of a raw statistics vector, before normalisation.
    std::vector<double> project(std::span<const double> raw) const
    {
        const std::size_t n = cfg_.raw_size();
        if (raw.size() != n)
            throw invalid_argument_error("project: raw statistics size mismatch");
        std::vector<double> out(static_cast<std::size_t>(cfg_.dim), 0.0);
        for (int r = 0; r < cfg_.dim; ++r) {
            const double* w = projection_.data() + static_cast<std::size_t>(r) * n;
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i)
                s += w[i] * raw[i];
            out[static_cast<std::size_t>(r)] = s;
        }
        return out;
    }

    Embedding extract(const Image& img) const
    {
        const auto raw = block_statistics(img, cfg_.grid);
        return l2_normalize(project(raw));
    }

    /// Extracts a batch over `jobs` worker threads; output order follows input.
    std::vector<Embedding> extract_batch(std::span<const Image> images, int jobs = 1) const
    {
        std::vector<Embedding> out(images.size());
        parallel_for(images.size(), jobs, [&](std::size_t i) { out[i] = extract(images[i]); });
        return out;
    }

private:
    ExtractorConfig cfg_;
    std::vector<double> projection_; // dim x raw_size, row-major
};

// ---------------------------------------------------------------------------
// EMB1 feature store
//
//   "EMB1" | dim u32 | count u64 | count x { id u64 | rotation u16 | year u16 | dim x f32 }
//
// All integers and floats little-endian.

struct FeatureRecordKey {
    std::uint64_t id = 0;
    std::uint16_t rotation_deg = 0;
    std::uint16_t year = 0;
    friend bool operator==(const FeatureRecordKey&, const FeatureRecordKey&) = default;
};

struct FeatureStore {
    std::uint32_t dim = 0;
    std::vector<FeatureRecordKey> keys;
    std::vector<float> values; // count x dim

    std::size_t size() const { return keys.size(); }
    std::span<const float> row(std::size_t i) const { return {values.data() + i * dim, dim}; }

    void add(const FeatureRecordKey& key, const Embedding& e)
    {
        if (dim == 0)
            dim = static_cast<std::uint32_t>(e.dim());
        if (e.dim() != dim)
            throw invalid_argument_error("feature store: dimension mismatch");
        keys.push_back(key);
        values.insert(values.end(), e.values().begin(), e.values().end());
    }

    Embedding embedding(std::size_t i) const
    {
        const auto r = row(i);
        return Embedding::from_unit(std::vector<float>(r.begin(), r.end()));
    }

    friend bool operator==(const FeatureStore&, const FeatureStore&) = default;
};

inline constexpr char kFeatureMagic[4] = {'E', 'M', 'B', '1'};

inline std::vector<std::uint8_t> encode_feature_store(const FeatureStore& store)
{
    std::vector<std::uint8_t> out;
    out.reserve(16 + store.size() * (12 + 4 * static_cast<std::size_t>(store.dim)));
    out.insert(out.end(), std::begin(kFeatureMagic), std::end(kFeatureMagic));
    le::put<std::uint32_t>(out, store.dim);
    le::put<std::uint64_t>(out, store.size());
    for (std::size_t i = 0; i < store.size(); ++i) {
        le::put<std::uint64_t>(out, store.keys[i].id);
        le::put<std::uint16_t>(out, store.keys[i].rotation_deg);
        le::put<std::uint16_t>(out, store.keys[i].year);
        for (float v : store.row(i))
            le::put<float>(out, v);
    }
    return out;
}

inline FeatureStore decode_feature_store(std::span<const std::uint8_t> in)
{
    if (in.size() < 16 || !std::equal(std::begin(kFeatureMagic), std::end(kFeatureMagic), in.begin()))
        throw corruption_error("feature store: bad magic");
    std::size_t pos = 4;
    FeatureStore store;
    store.dim = le::get<std::uint32_t>(in, pos);
    const auto count = le::get<std::uint64_t>(in, pos);
    const std::size_t record = 12 + 4 * static_cast<std::size_t>(store.dim);
    if (store.dim == 0 && count > 0)
        throw corruption_error("feature store: zero dimension");
    if (count > (in.size() - pos) / record || in.size() - pos != count * record)
        throw corruption_error("feature store: size does not match header (truncated?)");
    store.keys.resize(count);
    store.values.resize(count * store.dim);
    for (std::size_t i = 0; i < count; ++i) {
        store.keys[i].id = le::get<std::uint64_t>(in, pos);
        store.keys[i].rotation_deg = le::get<std::uint16_t>(in, pos);
        store.keys[i].year = le::get<std::uint16_t>(in, pos);
        for (std::uint32_t d = 0; d < store.dim; ++d)
            store.values[i * store.dim + d] = le::get<float>(in, pos);
    }
    return store;
}

inline void save_feature_store(const fs::path& path, const FeatureStore& store)
{
    const auto bytes = encode_feature_store(store);
    write_file_atomic(path, bytes);
}

inline FeatureStore load_feature_store(const fs::path& path)
{
    const auto bytes = read_file(path);
    return decode_feature_store(bytes);
}

} // namespace orbitloc
