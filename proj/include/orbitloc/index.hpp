#pragma once

// Immutable test-time-augmented index: every database image is embedded at
// 0, 90, 180 and 270 degrees, and queries are matched by exact dot-product
// search over all entries.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <map>
#include <set>
#include <vector>

#include <nlohmann/json.hpp>

#include "errors.hpp"
#include "features.hpp"
#include "geodesy.hpp"
#include "image.hpp"
#include "io.hpp"
#include "parallel.hpp"
#include "train.hpp"

namespace orbitloc {

struct IndexEntry {
    RegionId region;
    int year = 0;
    int rotation = 0;
    friend bool operator==(const IndexEntry&, const IndexEntry&) = default;
};

struct IndexManifest {
    std::uint32_t dim = 0;
    std::uint64_t count = 0;
    std::vector<int> rotations{0, 90, 180, 270};
    std::vector<int> years;
    std::string extractor_fingerprint;
    std::string build_timestamp;

    friend bool operator==(const IndexManifest&, const IndexManifest&) = default;
};

struct Prediction {
    RegionId region;
    int year = 0;
    int rotation = 0;
    double score = 0.0;
    int rank = 0;
    std::size_t entry = 0;
};

/// Estimated query orientation: the rotation that made the matched database
/// entry look like the query (ambiguous modulo the 90 degree steps).
inline int predict_orientation(const Prediction& p) { return p.rotation; }

class TtaIndex {
public:
    TtaIndex() = default;

    TtaIndex(IndexManifest manifest, std::vector<IndexEntry> entries, std::vector<float> values)
        : manifest_(std::move(manifest)), entries_(std::move(entries)), values_(std::move(values))
    {
        manifest_.count = entries_.size();
        if (values_.size() != entries_.size() * manifest_.dim)
            throw corruption_error("index: embedding matrix does not match entry count");
    }

    const IndexManifest& manifest() const { return manifest_; }
    const std::vector<IndexEntry>& entries() const { return entries_; }
    const std::vector<float>& values() const { return values_; }
    std::size_t size() const { return entries_.size(); }
    std::uint32_t dim() const { return manifest_.dim; }
    std::span<const float> row(std::size_t i) const { return {values_.data() + i * manifest_.dim, manifest_.dim}; }

    /// Exact top-N by dot product; ties go to the earlier entry. With
    /// `dedup`, only the best rotation of each (region, year) competes.
    std::vector<Prediction> knn(const Embedding& q, int n, bool dedup = false) const
    {
        if (n < 1)
            throw invalid_argument_error("knn: N must be >= 1");
        if (q.dim() != manifest_.dim)
            throw invalid_argument_error("knn: query dimension " + std::to_string(q.dim()) + " != index dimension " +
                                         std::to_string(manifest_.dim));
        const std::size_t count = entries_.size();
        std::vector<double> scores(count);
        for (std::size_t i = 0; i < count; ++i)
            scores[i] = dot4(q.values().data(), values_.data() + i * manifest_.dim, manifest_.dim);

        std::vector<std::size_t> cand;
        if (dedup) {
            std::map<std::pair<std::uint64_t, int>, std::size_t> best;
            for (std::size_t i = 0; i < count; ++i) {
                auto [it, inserted] = best.try_emplace({pack_region(entries_[i].region), entries_[i].year}, i);
                if (!inserted && scores[i] > scores[it->second])
                    it->second = i;
            }
            cand.reserve(best.size());
            for (const auto& kv : best)
                cand.push_back(kv.second);
        } else {
            cand.resize(count);
            std::iota(cand.begin(), cand.end(), std::size_t{0});
        }
        const auto better = [&](std::size_t a, std::size_t b) {
            return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
        };
        const std::size_t keep = std::min(cand.size(), static_cast<std::size_t>(n));
        std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(keep), cand.end(), better);

        std::vector<Prediction> out;
        out.reserve(keep);
        for (std::size_t r = 0; r < keep; ++r) {
            const auto& e = entries_[cand[r]];
            out.push_back({e.region, e.year, e.rotation, scores[cand[r]], static_cast<int>(r + 1), cand[r]});
        }
        return out;
    }

    FeatureStore to_feature_store() const
    {
        FeatureStore store;
        store.dim = manifest_.dim;
        store.values = values_;
        store.keys.reserve(entries_.size());
        for (const auto& e : entries_)
            store.keys.push_back({pack_region(e.region), static_cast<std::uint16_t>(e.rotation),
                               static_cast<std::uint16_t>(e.year)});
        return store;
    }

    friend bool operator==(const TtaIndex&, const TtaIndex&) = default;

private:
    // Four independent accumulators, combined in a fixed order.
    static double dot4(const float* a, const float* b, std::size_t n)
    {
        double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
        std::size_t i = 0;
        for (; i + 4 <= n; i += 4) {
            s0 += static_cast<double>(a[i]) * b[i];
            s1 += static_cast<double>(a[i + 1]) * b[i + 1];
            s2 += static_cast<double>(a[i + 2]) * b[i + 2];
            s3 += static_cast<double>(a[i + 3]) * b[i + 3];
        }
        for (; i < n; ++i)
            s0 += static_cast<double>(a[i]) * b[i];
        return (s0 + s1) + (s2 + s3);
    }

    IndexManifest manifest_;
    std::vector<IndexEntry> entries_;
    std::vector<float> values_;
};

/// Best-scoring entry per region, restricted to `allowed` when non-empty,
/// at most `n` regions, best first.
inline std::vector<Prediction> top_regions(const TtaIndex& index, const Embedding& q, int n,
                                           std::span<const RegionId> allowed = {})
{
    std::set<RegionId> allow(allowed.begin(), allowed.end());
    std::set<RegionId> seen;
    std::vector<Prediction> out;
    for (auto& p : index.knn(q, static_cast<int>(std::max<std::size_t>(1, index.size())))) {
        if (!allow.empty() && !allow.count(p.region))
            continue;
        if (!seen.insert(p.region).second)
            continue;
        p.rank = static_cast<int>(out.size() + 1);
        out.push_back(p);
        if (static_cast<int>(out.size()) >= n)
            break;
    }
    return out;
}

/// Reference to one database image; the pixels come from a loader.
struct DbImageRef {
    RegionId region;
    int year = 0;
};

using ImageLoader = std::function<Image(const DbImageRef&)>;

/// Embeds every selected image at the four rotations. Entry order is
/// image-major (input order), rotation-minor.
inline TtaIndex build_index(std::span<const DbImageRef> images, const ImageLoader& load, const Embedder& embedder,
                            std::span<const int> years_filter, int jobs = 1, std::string build_timestamp = {})
{
    std::vector<DbImageRef> selected;
    for (const auto& r : images)
        if (years_filter.empty() || std::find(years_filter.begin(), years_filter.end(), r.year) != years_filter.end())
            selected.push_back(r);

    IndexManifest m;
    m.dim = static_cast<std::uint32_t>(embedder.dim);
    m.years.assign(years_filter.begin(), years_filter.end());
    m.extractor_fingerprint = embedder.fingerprint;
    m.build_timestamp = std::move(build_timestamp);

    std::vector<IndexEntry> entries(selected.size() * 4);
    std::vector<float> values(entries.size() * m.dim);
    parallel_for(selected.size(), jobs, [&](std::size_t i) {
        Image img;
        try {
            img = load(selected[i]);
            for (std::size_t k = 0; k < 4; ++k) {
                const int rot = kRotations[k];
                const auto e = embedder.embed(rotate90(img, rot));
                if (e.dim() != m.dim)
                    throw invalid_argument_error("embedder dimension mismatch");
                entries[i * 4 + k] = {selected[i].region, selected[i].year, rot};
                std::copy(e.values().begin(), e.values().end(), values.begin() + static_cast<std::ptrdiff_t>((i * 4 + k) * m.dim));
            }
        } catch (const std::exception& ex) {
            throw format_error("build_index: image " + selected[i].region.str() + "@" +
                               std::to_string(selected[i].year) + ": " + ex.what());
        }
    });
    return TtaIndex(std::move(m), std::move(entries), std::move(values));
}

// ---------------------------------------------------------------------------
// Persistence: <dir>/manifest.json + <dir>/features.emb1

inline nlohmann::json manifest_to_json(const IndexManifest& m)
{
    return nlohmann::json{{"format", "orbitloc-index-v1"},
                          {"dim", m.dim},
                          {"count", m.count},
                          {"rotations", m.rotations},
                          {"years", m.years},
                          {"extractor_fingerprint", m.extractor_fingerprint},
                          {"build_timestamp", m.build_timestamp}};
}

inline void save_index(const TtaIndex& index, const fs::path& dir)
{
    fs::create_directories(dir);
    save_feature_store(dir / "features.emb1", index.to_feature_store());
    write_text_atomic(dir / "manifest.json", manifest_to_json(index.manifest()).dump(2) + "\n");
}

/// Loads an index; when `expected_fingerprint` is non-empty it must match
/// the manifest.
inline TtaIndex load_index(const fs::path& dir, const std::string& expected_fingerprint = {})
{
    if (!fs::exists(dir / "manifest.json"))
        throw missing_artifact_error("no index at " + dir.string() + " (run `orbitloc index` first)");
    IndexManifest m;
    try {
        const auto j = nlohmann::json::parse(read_text(dir / "manifest.json"));
        m.dim = j.at("dim").get<std::uint32_t>();
        m.count = j.at("count").get<std::uint64_t>();
        m.rotations = j.at("rotations").get<std::vector<int>>();
        m.years = j.at("years").get<std::vector<int>>();
        m.extractor_fingerprint = j.at("extractor_fingerprint").get<std::string>();
        m.build_timestamp = j.value("build_timestamp", "");
    } catch (const nlohmann::json::exception& e) {
        throw corruption_error(std::string("index manifest: ") + e.what());
    }
    if (!expected_fingerprint.empty() && expected_fingerprint != m.extractor_fingerprint)
        throw incompatible_error("index built with extractor '" + m.extractor_fingerprint + "', expected '" +
                                 expected_fingerprint + "'");
    auto store = load_feature_store(dir / "features.emb1");
    if (store.size() != m.count || (m.count > 0 && store.dim != m.dim))
        throw corruption_error("index: feature store disagrees with manifest");
    std::vector<IndexEntry> entries;
    entries.reserve(store.size());
    for (const auto& k : store.keys)
        entries.push_back({unpack_region(k.id), k.year, k.rotation_deg});
    return TtaIndex(std::move(m), std::move(entries), std::move(store.values));
}

} // namespace orbitloc
