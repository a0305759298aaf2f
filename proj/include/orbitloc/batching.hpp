#pragma once

// Training batch construction: clustered batch mining and year-wise
// augmentation.

#include <algorithm>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "augment.hpp"
#include "errors.hpp"
#include "image.hpp"
#include "kmeans.hpp"
#include "matrix.hpp"
#include "parallel.hpp"
#include "random.hpp"

namespace orbitloc {

struct BatchSpec {
    int quadruplets_per_batch = 32;
    int images_per_quadruplet = 4; // one per configured year

    int batch_size() const { return quadruplets_per_batch * images_per_quadruplet; }
    void validate() const
    {
        if (quadruplets_per_batch < 1 || images_per_quadruplet < 1)
            throw config_error("batch: sizes must be positive");
    }
};

struct ClusterConfig {
    int num_clusters = 200;
    int refresh_every = 5000;
    int reference_year = 2021;

    void validate() const
    {
        if (num_clusters < 1 || refresh_every < 1)
            throw config_error("clusters: C and refresh interval must be positive");
    }
};

/// One training batch: indices into the region list, all drawn from the
/// sampling pool of `cluster_id` (-1 for unclustered batches).
struct Batch {
    int cluster_id = -1;
    std::vector<std::size_t> regions;
};

/// Draws single-cluster batches, moving to a different cluster each time
/// when more than one cluster can supply a batch.
class ClusteredBatcher {
public:
    /// `assignments[i]` is the cluster of region i. Clusters smaller than a
    /// batch are topped up with members of the clusters whose centroids are
    /// nearest, in order of centroid distance.
    ClusteredBatcher(std::span<const int> assignments, const Matrix<double>& centroids, int quadruplets_per_batch)
        : per_batch_(static_cast<std::size_t>(quadruplets_per_batch))
    {
        if (quadruplets_per_batch < 1)
            throw invalid_argument_error("batcher: quadruplets_per_batch must be positive");
        const std::size_t c = centroids.rows;
        std::vector<std::vector<std::size_t>> members(c);
        for (std::size_t i = 0; i < assignments.size(); ++i) {
            const auto a = assignments[i];
            if (a < 0 || static_cast<std::size_t>(a) >= c)
                throw invalid_argument_error("batcher: assignment out of range");
            members[static_cast<std::size_t>(a)].push_back(i);
        }
        pools_.resize(c);
        for (std::size_t k = 0; k < c; ++k) {
            pools_[k] = members[k];
            if (pools_[k].size() >= per_batch_ || members[k].empty())
                continue;
            std::vector<std::size_t> order(c);
            std::iota(order.begin(), order.end(), 0);
            std::vector<double> d(c);
            for (std::size_t j = 0; j < c; ++j)
                d[j] = detail::sq_dist(centroids.row(k), centroids.row(j));
            std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return d[a] < d[b]; });
            for (const auto j : order) {
                if (j == k)
                    continue;
                pools_[k].insert(pools_[k].end(), members[j].begin(), members[j].end());
                if (pools_[k].size() >= per_batch_)
                    break;
            }
        }
        for (std::size_t k = 0; k < c; ++k)
            if (pools_[k].size() >= 2)
                eligible_.push_back(static_cast<int>(k));
        if (eligible_.empty())
            throw invalid_argument_error("batcher: need at least two regions to form a batch");
    }

    /// Unclustered batching over all `n` regions.
    static ClusteredBatcher uniform(std::size_t n, int quadruplets_per_batch)
    {
        std::vector<int> zeros(n, 0);
        ClusteredBatcher b(zeros, Matrix<double>(1, 1), quadruplets_per_batch);
        b.uniform_ = true;
        return b;
    }

    Batch next(Rng& gen)
    {
        int cluster = eligible_.front();
        if (eligible_.size() > 1) {
            do
                cluster = eligible_[uniform_index(gen, eligible_.size())];
            while (cluster == last_);
        }
        last_ = cluster;
        const auto& pool = pools_[static_cast<std::size_t>(cluster)];
        Batch b;
        b.cluster_id = uniform_ ? -1 : cluster;
        for (const auto i : sample_without_replacement(pool.size(), per_batch_, gen))
            b.regions.push_back(pool[i]);
        return b;
    }

    const std::vector<std::size_t>& pool(int cluster) const { return pools_.at(static_cast<std::size_t>(cluster)); }
    std::size_t num_clusters() const { return pools_.size(); }

private:
    std::size_t per_batch_;
    std::vector<std::vector<std::size_t>> pools_;
    std::vector<int> eligible_;
    int last_ = -1;
    bool uniform_ = false;
};

/// One augmentation parameter set per configured year.
struct AugmentationPlan {
    std::vector<int> years;
    std::vector<AugmentationParams> params;

    const AugmentationParams& for_year(int year) const
    {
        for (std::size_t i = 0; i < years.size(); ++i)
            if (years[i] == year)
                return params[i];
        throw invalid_argument_error("augmentation plan has no year " + std::to_string(year));
    }

    friend bool operator==(const AugmentationPlan&, const AugmentationPlan&) = default;
};

struct AugmentedBatch {
    std::vector<Image> images;
    AugmentationPlan plan;
};

/// Samples one parameter set per configured year (in configured order) and
/// applies the year's set to every image carrying that year.
inline AugmentedBatch yearwise_augment(std::span<const Image> images, std::span<const int> image_years,
                                       std::span<const int> configured_years, const AugmentationRanges& ranges,
                                       Rng& gen, int jobs = 1)
{
    if (images.size() != image_years.size())
        throw invalid_argument_error("yearwise_augment: one year tag per image required");
    for (const int y : image_years)
        if (std::find(configured_years.begin(), configured_years.end(), y) == configured_years.end())
            throw invalid_argument_error("yearwise_augment: unknown year tag " + std::to_string(y));
    AugmentedBatch out;
    for (const int y : configured_years) {
        out.plan.years.push_back(y);
        out.plan.params.push_back(sample_augmentation(ranges, gen));
    }
    out.images.resize(images.size());
    parallel_for(images.size(), jobs,
                 [&](std::size_t i) { out.images[i] = apply_augmentation(images[i], out.plan.for_year(image_years[i])); });
    return out;
}

/// Ablation counterpart: an independent parameter set per image.
inline std::vector<Image> independent_augment(std::span<const Image> images, const AugmentationRanges& ranges, Rng& gen,
                                              int jobs = 1)
{
    std::vector<AugmentationParams> params;
    params.reserve(images.size());
    for (std::size_t i = 0; i < images.size(); ++i)
        params.push_back(sample_augmentation(ranges, gen));
    std::vector<Image> out(images.size());
    parallel_for(images.size(), jobs, [&](std::size_t i) { out[i] = apply_augmentation(images[i], params[i]); });
    return out;
}

} // namespace orbitloc
