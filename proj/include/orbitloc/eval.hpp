#pragma once

// Recall@N with the non-zero-overlap success criterion, naive baselines and
// binned diagnostics.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "database.hpp"
#include "errors.hpp"
#include "geodesy.hpp"
#include "index.hpp"
#include "parallel.hpp"
#include "random.hpp"

namespace orbitloc {

struct QueryOutcome {
    std::string id;
    int first_correct_rank = 0; // 1-based; 0 when no prediction is correct
    double distance_from_nadir_km = 0.0;
    double area_sqkm = 0.0;
    std::optional<RegionId> top_region;
    int top_rotation = 0;

    bool hit_at(int n) const { return first_correct_rank > 0 && first_correct_rank <= n; }
};

struct RecallReport {
    std::string name;
    std::vector<int> ns{1, 10, 100};
    std::vector<double> recall; // percent, aligned with ns
    std::vector<QueryOutcome> per_query; // empty for the random baseline
    std::size_t num_queries = 0;
    std::string config_fingerprint;

    double at(int n) const
    {
        for (std::size_t i = 0; i < ns.size(); ++i)
            if (ns[i] == n)
                return recall[i];
        throw invalid_argument_error("report has no R@" + std::to_string(n));
    }
};

/// True iff the predicted region's polygon overlaps the ground truth.
inline bool prediction_correct(const RegionId& predicted, const Footprint& truth, const GridSpec& grid = {})
{
    return footprints_overlap(region_polygon(predicted, grid), truth);
}

inline void fill_recall(RecallReport& rep)
{
    rep.recall.assign(rep.ns.size(), 0.0);
    if (rep.per_query.empty())
        return;
    for (std::size_t k = 0; k < rep.ns.size(); ++k) {
        std::size_t hits = 0;
        for (const auto& q : rep.per_query)
            hits += q.hit_at(rep.ns[k]) ? 1 : 0;
        rep.recall[k] = 100.0 * static_cast<double>(hits) / static_cast<double>(rep.per_query.size());
    }
}

/// Scores ranked predictions (one list per query, best first). Year and
/// rotation of a prediction play no role, only its region polygon.
inline RecallReport score(std::span<const std::vector<Prediction>> predictions, std::span<const QueryRecord> truths,
                          std::vector<int> ns = {1, 10, 100}, const GridSpec& grid = {}, int jobs = 1)
{
    if (predictions.size() != truths.size())
        throw invalid_argument_error("score: one prediction list per query required");
    if (ns.empty() || std::any_of(ns.begin(), ns.end(), [](int n) { return n < 1; }))
        throw invalid_argument_error("score: N values must be >= 1");
    std::sort(ns.begin(), ns.end());
    RecallReport rep;
    rep.ns = ns;
    rep.per_query.resize(truths.size());
    rep.num_queries = truths.size();
    parallel_for(truths.size(), jobs, [&](std::size_t q) {
        const auto& t = truths[q];
        try {
            t.footprint.validate();
        } catch (const error& e) {
            throw invalid_argument_error("score: query " + t.id + " has no usable ground truth (" + e.what() + ")");
        }
        QueryOutcome& o = rep.per_query[q];
        o.id = t.id;
        o.area_sqkm = t.area_sqkm;
        o.distance_from_nadir_km = haversine_km(t.nadir, t.footprint.center_or_centroid());
        const auto& preds = predictions[q];
        if (!preds.empty()) {
            o.top_region = preds.front().region;
            o.top_rotation = preds.front().rotation;
        }
        const std::size_t limit = std::min<std::size_t>(preds.size(), static_cast<std::size_t>(ns.back()));
        for (std::size_t r = 0; r < limit; ++r)
            if (prediction_correct(preds[r].region, t.footprint, grid)) {
                o.first_correct_rank = static_cast<int>(r + 1);
                break;
            }
    });
    fill_recall(rep);
    return rep;
}

/// Predicts the coarsest-zoom region containing the nadir (nearest centre
/// among ties). Empty when no region contains it.
inline std::vector<Prediction> nadir_baseline(const QueryRecord& query, std::span<const RegionId> regions,
                                              const GridSpec& grid = {})
{
    const RegionId* best = nullptr;
    double best_d = std::numeric_limits<double>::infinity();
    if (std::abs(query.nadir.lat) > kMercatorMaxLat)
        return {};
    for (const auto& r : regions) {
        if (best && r.zoom > best->zoom)
            continue;
        if (!footprint_contains(region_polygon(r, grid), query.nadir))
            continue;
        const double d = haversine_km(region_center(r, grid), query.nadir);
        if (!best || r.zoom < best->zoom || d < best_d) {
            best = &r;
            best_d = d;
        }
    }
    if (!best)
        return {};
    return {Prediction{*best, 0, 0, 1.0, 1, 0}};
}

/// Probability that N uniform draws without replacement from M regions hit
/// at least one of the c correct ones: 1 - C(M-c, N) / C(M, N).
inline double analytic_random_recall(std::size_t m, std::size_t c, std::size_t n)
{
    if (n >= m)
        return c > 0 ? 1.0 : 0.0;
    if (c == 0)
        return 0.0;
    if (m - c < n)
        return 1.0;
    double miss = 1.0;
    for (std::size_t i = 0; i < n; ++i)
        miss *= static_cast<double>(m - c - i) / static_cast<double>(m - i);
    return 1.0 - miss;
}

/// Monte-Carlo Recall@N of uniform random guessing over `db_regions`,
/// averaged over `trials`. Each trial draws one random permutation prefix
/// per query, so the N-samples are nested.
inline RecallReport random_baseline(std::span<const RegionId> db_regions, std::span<const QueryRecord> queries,
                                    std::vector<int> ns, Rng& gen, int trials, const GridSpec& grid = {})
{
    if (trials < 1)
        throw invalid_argument_error("random_baseline: trials must be >= 1");
    std::sort(ns.begin(), ns.end());
    RecallReport rep;
    rep.name = "random";
    rep.ns = ns;
    rep.recall.assign(ns.size(), 0.0);
    rep.num_queries = queries.size();
    if (queries.empty() || db_regions.empty())
        return rep;
    const std::size_t m = db_regions.size();
    std::vector<std::vector<char>> correct(queries.size(), std::vector<char>(m, 0));
    for (std::size_t q = 0; q < queries.size(); ++q)
        for (std::size_t i = 0; i < m; ++i)
            correct[q][i] = prediction_correct(db_regions[i], queries[q].footprint, grid) ? 1 : 0;

    const std::size_t nmax = std::min<std::size_t>(m, static_cast<std::size_t>(ns.back()));
    std::vector<double> hits(ns.size(), 0.0);
    for (int t = 0; t < trials; ++t)
        for (std::size_t q = 0; q < queries.size(); ++q) {
            const auto draw = sample_without_replacement(m, nmax, gen);
            std::size_t first = 0;
            for (std::size_t r = 0; r < draw.size(); ++r)
                if (correct[q][draw[r]]) {
                    first = r + 1;
                    break;
                }
            for (std::size_t k = 0; k < ns.size(); ++k)
                if (first > 0 && first <= static_cast<std::size_t>(ns[k]))
                    hits[k] += 1.0;
        }
    for (std::size_t k = 0; k < ns.size(); ++k)
        rep.recall[k] = 100.0 * hits[k] / (static_cast<double>(trials) * static_cast<double>(queries.size()));
    return rep;
}

/// Closed-form counterpart of random_baseline for the same inputs.
inline std::vector<double> expected_random_recall(std::span<const RegionId> db_regions,
                                                  std::span<const QueryRecord> queries, std::span<const int> ns,
                                                  const GridSpec& grid = {})
{
    std::vector<double> out(ns.size(), 0.0);
    if (queries.empty())
        return out;
    for (const auto& q : queries) {
        std::size_t c = 0;
        for (const auto& r : db_regions)
            c += prediction_correct(r, q.footprint, grid) ? 1 : 0;
        for (std::size_t k = 0; k < ns.size(); ++k)
            out[k] += analytic_random_recall(db_regions.size(), c, static_cast<std::size_t>(ns[k]));
    }
    for (auto& v : out)
        v = 100.0 * v / static_cast<double>(queries.size());
    return out;
}

// ---------------------------------------------------------------------------
// Binned diagnostics

enum class BinKey { distance_from_nadir, area };

inline const char* to_string(BinKey k) { return k == BinKey::area ? "area_sqkm" : "distance_from_nadir_km"; }

struct BinnedReport {
    BinKey key = BinKey::distance_from_nadir;
    std::vector<double> edges;               // bins [e_i, e_{i+1}); outer bins absorb the tails
    std::vector<std::size_t> counts;
    std::vector<std::optional<double>> recall_at_1; // empty bins carry no value
};

inline std::vector<double> log_spaced_edges(double lo, double hi, int bins)
{
    if (!(lo > 0 && hi > lo) || bins < 1)
        throw invalid_argument_error("log_spaced_edges: need 0 < lo < hi and bins >= 1");
    std::vector<double> e;
    for (int i = 0; i <= bins; ++i)
        e.push_back(lo * std::pow(hi / lo, static_cast<double>(i) / bins));
    return e;
}

inline std::vector<double> linear_edges(double lo, double hi, int bins)
{
    if (!(hi > lo) || bins < 1)
        throw invalid_argument_error("linear_edges: need lo < hi and bins >= 1");
    std::vector<double> e;
    for (int i = 0; i <= bins; ++i)
        e.push_back(lo + (hi - lo) * i / bins);
    return e;
}

inline BinnedReport binned_recall(std::span<const QueryOutcome> outcomes, BinKey key, std::vector<double> edges)
{
    if (edges.size() < 2 || !std::is_sorted(edges.begin(), edges.end()))
        throw invalid_argument_error("binned_recall: need >= 2 ascending edges");
    BinnedReport rep{key, edges, std::vector<std::size_t>(edges.size() - 1, 0), {}};
    std::vector<std::size_t> hits(edges.size() - 1, 0);
    for (const auto& o : outcomes) {
        const double v = key == BinKey::area ? o.area_sqkm : o.distance_from_nadir_km;
        auto it = std::upper_bound(edges.begin(), edges.end(), v);
        std::size_t b = it == edges.begin() ? 0 : static_cast<std::size_t>(it - edges.begin()) - 1;
        b = std::min(b, rep.counts.size() - 1);
        ++rep.counts[b];
        hits[b] += o.hit_at(1) ? 1 : 0;
    }
    for (std::size_t b = 0; b < rep.counts.size(); ++b)
        rep.recall_at_1.push_back(rep.counts[b] ? std::optional<double>(100.0 * hits[b] / rep.counts[b]) : std::nullopt);
    return rep;
}

// ---------------------------------------------------------------------------
// Output

inline nlohmann::json report_to_json(const RecallReport& r)
{
    nlohmann::json recall = nlohmann::json::object();
    for (std::size_t k = 0; k < r.ns.size(); ++k)
        recall["R@" + std::to_string(r.ns[k])] = r.recall[k];
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& q : r.per_query) {
        nlohmann::json row = {{"id", q.id},
                              {"first_correct_rank", q.first_correct_rank},
                              {"distance_from_nadir_km", q.distance_from_nadir_km},
                              {"area_sqkm", q.area_sqkm}};
        if (q.top_region) {
            row["top_region"] = q.top_region->str();
            row["orientation_deg"] = q.top_rotation;
        }
        rows.push_back(row);
    }
    return {{"name", r.name},
            {"config_fingerprint", r.config_fingerprint},
            {"num_queries", r.num_queries},
            {"recall", recall},
            {"queries", rows}};
}

inline nlohmann::json binned_to_json(const BinnedReport& b)
{
    nlohmann::json bins = nlohmann::json::array();
    for (std::size_t i = 0; i < b.counts.size(); ++i)
        bins.push_back({{"lo", b.edges[i]},
                        {"hi", b.edges[i + 1]},
                        {"count", b.counts[i]},
                        {"R@1", b.recall_at_1[i] ? nlohmann::json(*b.recall_at_1[i]) : nlohmann::json(nullptr)}});
    return {{"key", to_string(b.key)}, {"bins", bins}};
}

inline std::string format_recall_table(std::span<const RecallReport> reports)
{
    std::ostringstream os;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%-24s %8s", "method", "queries");
    os << buf;
    const auto& ns = reports.empty() ? std::vector<int>{} : reports.front().ns;
    for (const int n : ns) {
        std::snprintf(buf, sizeof buf, " %7s", ("R@" + std::to_string(n)).c_str());
        os << buf;
    }
    os << '\n';
    for (const auto& r : reports) {
        std::snprintf(buf, sizeof buf, "%-24s %8zu", r.name.c_str(), r.num_queries);
        os << buf;
        for (const double v : r.recall) {
            std::snprintf(buf, sizeof buf, " %7.1f", v);
            os << buf;
        }
        os << '\n';
    }
    return os.str();
}

inline std::string format_binned_table(const BinnedReport& b)
{
    std::ostringstream os;
    char buf[96];
    os << to_string(b.key) << '\n';
    for (std::size_t i = 0; i < b.counts.size(); ++i) {
        if (b.recall_at_1[i])
            std::snprintf(buf, sizeof buf, "  [%10.1f, %10.1f) n=%-6zu R@1=%5.1f\n", b.edges[i], b.edges[i + 1],
                          b.counts[i], *b.recall_at_1[i]);
        else
            std::snprintf(buf, sizeof buf, "  [%10.1f, %10.1f) n=%-6zu R@1=  n/a\n", b.edges[i], b.edges[i + 1],
                          b.counts[i]);
        os << buf;
    }
    return os.str();
}

/// Line chart of per-bin R@1 (bin midpoints on x, log axis for area).
inline std::string binned_to_svg(const BinnedReport& b, const std::string& title)
{
    const double w = 640, h = 400, ml = 60, mr = 20, mt = 40, mb = 50;
    const bool logx = b.key == BinKey::area && b.edges.front() > 0;
    auto tx = [&](double v) {
        const double lo = logx ? std::log(b.edges.front()) : b.edges.front();
        const double hi = logx ? std::log(b.edges.back()) : b.edges.back();
        const double x = logx ? std::log(v) : v;
        return ml + (x - lo) / (hi - lo) * (w - ml - mr);
    };
    auto ty = [&](double r) { return mt + (1.0 - r / 100.0) * (h - mt - mb); };
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << w / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\">" << title
       << "</text>\n";
    os << "<line x1=\"" << ml << "\" y1=\"" << h - mb << "\" x2=\"" << w - mr << "\" y2=\"" << h - mb
       << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << h - mb
       << "\" stroke=\"black\"/>\n";
    for (int r = 0; r <= 100; r += 25)
        os << "<text x=\"" << ml - 8 << "\" y=\"" << ty(r) + 4 << "\" text-anchor=\"end\" font-size=\"11\">" << r
           << "</text>\n";
    os << "<text x=\"" << w / 2 << "\" y=\"" << h - 12 << "\" text-anchor=\"middle\" font-size=\"12\">"
       << (b.key == BinKey::area ? "Area (sq. km)" : "Distance from nadir (km)") << "</text>\n";
    os << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < b.counts.size(); ++i) {
        if (!b.recall_at_1[i])
            continue;
        const double mid = logx ? std::sqrt(b.edges[i] * b.edges[i + 1]) : (b.edges[i] + b.edges[i + 1]) / 2;
        os << tx(mid) << ',' << ty(*b.recall_at_1[i]) << ' ';
    }
    os << "\"/>\n</svg>\n";
    return os.str();
}

} // namespace orbitloc
