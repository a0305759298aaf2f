#pragma once

// Desk-scale training recipe: a linear head on top of the baseline
// extractor, optimised with Adam under the (neutral-aware) multi-similarity
// loss, with clustered batches and year-wise augmentation.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "batching.hpp"
#include "errors.hpp"
#include "features.hpp"
#include "geodesy.hpp"
#include "io.hpp"
#include "loss.hpp"
#include "matrix.hpp"
#include "random.hpp"

namespace orbitloc {

/// A region with one image per configured year (same order as the years).
struct TrainingQuadruplet {
    RegionId region;
    std::vector<Image> images;
};

struct OptimizerConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int iterations = 50000;
};

struct AblationToggles {
    bool clustered_batches = true;
    bool year_wise_aug = true;
    bool neutral_aware = true;

    friend bool operator==(const AblationToggles&, const AblationToggles&) = default;
};

struct TrainConfig {
    std::vector<int> years{2018, 2019, 2020, 2021};
    GridSpec grid;
    ClusterConfig clusters;
    BatchSpec batch;
    LossParams loss;
    OptimizerConfig optimizer;
    AblationToggles ablation;
    AugmentationRanges augmentation;
    int head_dim = 0; // 0: same as extractor dim
    std::uint64_t seed = 7;
    int jobs = 1;
};

struct TrainLogEntry {
    int iteration = 0;
    double loss = 0.0;
    int cluster_id = -1;
    double lr = 0.0;
};

/// embedding = l2_normalize(W * base), W is out x in.
struct LinearHead {
    Matrix<double> weights;

    static LinearHead identity(std::size_t in, std::size_t out)
    {
        LinearHead h{Matrix<double>(out, in)};
        for (std::size_t i = 0; i < std::min(in, out); ++i)
            h.weights(i, i) = 1.0;
        return h;
    }

    std::vector<double> apply_raw(std::span<const float> base) const
    {
        if (base.size() != weights.cols)
            throw invalid_argument_error("head: input dimension mismatch");
        std::vector<double> u(weights.rows, 0.0);
        for (std::size_t r = 0; r < weights.rows; ++r) {
            const auto w = weights.row(r);
            double s = 0.0;
            for (std::size_t j = 0; j < base.size(); ++j)
                s += w[j] * base[j];
            u[r] = s;
        }
        return u;
    }

    Embedding apply(const Embedding& base) const { return l2_normalize(apply_raw(base.values())); }

    /// FNV-1a over the weight bytes; part of the embedder fingerprint.
    std::string fingerprint() const
    {
        std::uint64_t h = 1469598103934665603ull;
        for (const double v : weights.data) {
            std::uint64_t b;
            std::memcpy(&b, &v, 8);
            for (int i = 0; i < 8; ++i) {
                h ^= (b >> (8 * i)) & 0xff;
                h *= 1099511628211ull;
            }
        }
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
        return std::string("head-") + std::to_string(weights.rows) + "x" + std::to_string(weights.cols) + "-" + buf;
    }
};

/// Image -> embedding function together with its identity.
struct Embedder {
    std::function<Embedding(const Image&)> embed;
    std::string fingerprint;
    int dim = 0;

    static Embedder from(const Extractor& ex)
    {
        return {[&ex](const Image& img) { return ex.extract(img); }, ex.fingerprint(), ex.dim()};
    }
    static Embedder from(const Extractor& ex, const LinearHead& head)
    {
        return {[&ex, &head](const Image& img) { return head.apply(ex.extract(img)); },
                ex.fingerprint() + "+" + head.fingerprint(), static_cast<int>(head.weights.rows)};
    }
};

// Head file: "HEAD" | rows u32 | cols u32 | rows x cols f64, little-endian.
inline std::vector<std::uint8_t> encode_head(const LinearHead& h)
{
    std::vector<std::uint8_t> out{'H', 'E', 'A', 'D'};
    le::put(out, static_cast<std::uint32_t>(h.weights.rows));
    le::put(out, static_cast<std::uint32_t>(h.weights.cols));
    for (const double v : h.weights.data)
        le::put(out, v);
    return out;
}

inline LinearHead decode_head(std::span<const std::uint8_t> in)
{
    if (in.size() < 12 || std::memcmp(in.data(), "HEAD", 4) != 0)
        throw corruption_error("head: bad magic");
    std::size_t pos = 4;
    const auto rows = le::get<std::uint32_t>(in, pos);
    const auto cols = le::get<std::uint32_t>(in, pos);
    if (in.size() != 12 + std::size_t{8} * rows * cols)
        throw corruption_error("head: size does not match " + std::to_string(rows) + "x" + std::to_string(cols));
    LinearHead h{Matrix<double>(rows, cols)};
    for (auto& v : h.weights.data)
        v = le::get<double>(in, pos);
    return h;
}

inline void save_head(const fs::path& path, const LinearHead& h) { write_file_atomic(path, encode_head(h)); }
inline LinearHead load_head(const fs::path& path) { return decode_head(read_file(path)); }

struct TrainResult {
    LinearHead head;
    std::vector<TrainLogEntry> log;
};

/// Mean loss of the first and last `window` iterations.
inline std::pair<double, double> smoothed_loss_endpoints(std::span<const TrainLogEntry> log, std::size_t window)
{
    if (log.empty())
        return {0.0, 0.0};
    window = std::max<std::size_t>(1, std::min(window, log.size()));
    double a = 0, b = 0;
    for (std::size_t i = 0; i < window; ++i) {
        a += log[i].loss;
        b += log[log.size() - 1 - i].loss;
    }
    return {a / static_cast<double>(window), b / static_cast<double>(window)};
}

namespace detail {

struct Adam {
    std::vector<double> m, v;
    int t = 0;

    void step(std::vector<double>& params, std::span<const double> grad, const OptimizerConfig& cfg)
    {
        if (m.empty()) {
            m.assign(params.size(), 0.0);
            v.assign(params.size(), 0.0);
        }
        ++t;
        const double c1 = 1.0 - std::pow(cfg.beta1, t);
        const double c2 = 1.0 - std::pow(cfg.beta2, t);
        for (std::size_t i = 0; i < params.size(); ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            params[i] -= cfg.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.eps);
        }
    }
};

} // namespace detail

/// Trains W so that l2_normalize(W * extract(img)) minimises the loss.
/// `on_iteration`, if set, sees each log entry as it is produced.
inline TrainResult train_linear_head(std::span<const TrainingQuadruplet> data, const Extractor& extractor,
                                     const TrainConfig& cfg,
                                     const std::function<void(const TrainLogEntry&)>& on_iteration = {})
{
    if (data.empty())
        throw invalid_argument_error("train: empty dataset");
    cfg.batch.validate();
    cfg.clusters.validate();
    cfg.loss.validate();
    const std::size_t years = cfg.years.size();
    for (const auto& q : data)
        if (q.images.size() != years)
            throw invalid_argument_error("train: quadruplet for " + q.region.str() + " lacks one image per year");
    const auto ref_it = std::find(cfg.years.begin(), cfg.years.end(), cfg.clusters.reference_year);
    if (cfg.ablation.clustered_batches && ref_it == cfg.years.end())
        throw config_error("train: reference year is not a configured year");
    const std::size_t ref_year = static_cast<std::size_t>(ref_it - cfg.years.begin());

    const std::size_t in = static_cast<std::size_t>(extractor.dim());
    const std::size_t out = cfg.head_dim > 0 ? static_cast<std::size_t>(cfg.head_dim) : in;
    TrainResult res{LinearHead::identity(in, out), {}};
    detail::Adam adam;
    Rng gen(cfg.seed);

    auto rebuild_batcher = [&]() {
        if (!cfg.ablation.clustered_batches)
            return ClusteredBatcher::uniform(data.size(), cfg.batch.quadruplets_per_batch);
        Matrix<double> feats(data.size(), out);
        parallel_for(data.size(), cfg.jobs, [&](std::size_t i) {
            const auto e = res.head.apply(extractor.extract(data[i].images[ref_year]));
            for (std::size_t j = 0; j < out; ++j)
                feats(i, j) = e[j];
        });
        const int c = std::min<int>(cfg.clusters.num_clusters, static_cast<int>(data.size()));
        const auto km = kmeans(feats, c, gen());
        return ClusteredBatcher(km.assignments, km.centroids, cfg.batch.quadruplets_per_batch);
    };
    ClusteredBatcher batcher = rebuild_batcher();

    std::vector<Image> images;
    std::vector<int> tags;
    std::vector<RegionId> regions;
    for (int it = 0; it < cfg.optimizer.iterations; ++it) {
        if (it > 0 && cfg.ablation.clustered_batches && it % cfg.clusters.refresh_every == 0)
            batcher = rebuild_batcher();
        const Batch batch = batcher.next(gen);

        images.clear();
        tags.clear();
        regions.clear();
        for (const auto r : batch.regions)
            for (std::size_t y = 0; y < years; ++y) {
                images.push_back(data[r].images[y]);
                tags.push_back(cfg.years[y]);
                regions.push_back(data[r].region);
            }
        std::vector<Image> augmented = cfg.ablation.year_wise_aug
                                           ? yearwise_augment(images, tags, cfg.years, cfg.augmentation, gen, cfg.jobs).images
                                           : independent_augment(images, cfg.augmentation, gen, cfg.jobs);

        const std::size_t bs = augmented.size();
        Matrix<double> base(bs, in), u(bs, out);
        parallel_for(bs, cfg.jobs, [&](std::size_t i) {
            const auto f = extractor.extract(augmented[i]);
            for (std::size_t j = 0; j < in; ++j)
                base(i, j) = f[j];
            const auto raw = res.head.apply_raw(f.values());
            std::copy(raw.begin(), raw.end(), u.row(i).begin());
        });
        const auto e = normalize_rows(u);
        const auto s = gram(e);
        const auto rel = cfg.ablation.neutral_aware ? RelationMatrix::from_regions(regions, cfg.grid)
                                                    : RelationMatrix::from_labels(std::span<const RegionId>(regions));
        const auto lr = na_ms_loss(s, rel, cfg.loss);
        if (!std::isfinite(lr.loss))
            throw divergence_error("train: non-finite loss at iteration " + std::to_string(it));

        const auto grad_u = normalize_backward(u, chain_grad_to_embeddings(lr.grad, e));
        std::vector<double> grad_w(out * in, 0.0);
        for (std::size_t i = 0; i < bs; ++i)
            for (std::size_t r = 0; r < out; ++r) {
                const double g = grad_u(i, r);
                if (g == 0.0)
                    continue;
                double* gw = grad_w.data() + r * in;
                for (std::size_t j = 0; j < in; ++j)
                    gw[j] += g * base(i, j);
            }
        adam.step(res.head.weights.data, grad_w, cfg.optimizer);

        TrainLogEntry entry{it, lr.loss, batch.cluster_id, cfg.optimizer.lr};
        res.log.push_back(entry);
        if (on_iteration)
            on_iteration(entry);
    }
    return res;
}

} // namespace orbitloc
