#pragma once

// Run configuration, working-directory layout and the steps behind each CLI
// verb. Every artifact is written atomically; seeded runs produce identical
// reports.

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "database.hpp"
#include "errors.hpp"
#include "eval.hpp"
#include "features.hpp"
#include "image.hpp"
#include "index.hpp"
#include "io.hpp"
#include "synthetic.hpp"
#include "tile_fetch.hpp"
#include "train.hpp"

namespace orbitloc {

using json = nlohmann::json;

struct RunConfig {
    std::string source = "synthetic"; // or "tiles"
    TileEndpoint endpoint;
    SyntheticConfig synthetic;
    TilingConfig tiling{{10}, 60.0, {2018, 2019, 2020, 2021}, 64, GridSpec{4}};
    VisibilityParams visibility;
    ExtractorConfig extractor;
    TrainConfig train;
    std::vector<int> index_years{2021};
    std::vector<int> recall_ns{1, 10, 100};
    int random_trials = 100;
    fs::path workdir = "orbitloc-run";
    fs::path cache_dir; // empty: <workdir>/cache
    std::uint64_t seed = 1;
    int jobs = 1;

    RunConfig()
    {
        train.clusters = {20, 251, 2021};
        train.batch = {8, 4};
        train.optimizer.lr = 1e-3;
        train.optimizer.iterations = 1000;
    }

    fs::path cache() const { return cache_dir.empty() ? workdir / "cache" : cache_dir; }

    /// Pushes the shared settings (seed, years, grid, jobs) into the parts.
    void finalize()
    {
        synthetic.seed = seed;
        synthetic.years = tiling.years;
        synthetic.image_px = tiling.image_px;
        synthetic.grid = tiling.grid;
        train.years = tiling.years;
        train.grid = tiling.grid;
        train.batch.images_per_quadruplet = static_cast<int>(tiling.years.size());
        train.seed = seed;
        train.jobs = jobs;
        if (source != "synthetic" && source != "tiles")
            throw config_error("source must be \"synthetic\" or \"tiles\", got \"" + source + "\"");
        tiling.validate();
        extractor.validate();
        visibility.validate();
        if (source == "tiles")
            endpoint.validate();
        else
            synthetic.validate();
        for (const int y : index_years)
            if (std::find(tiling.years.begin(), tiling.years.end(), y) == tiling.years.end())
                throw config_error("index year " + std::to_string(y) + " is not a configured year");
        if (recall_ns.empty() || random_trials < 1 || jobs < 1)
            throw config_error("recall_ns, random_trials and jobs must be non-empty / positive");
    }
};

namespace detail {

/// Rejects keys outside `allowed` so that typos do not pass silently.
inline void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where)
{
    if (!j.is_object())
        throw config_error(where + ": expected an object");
    for (const auto& [k, v] : j.items()) {
        bool ok = false;
        for (const char* a : allowed)
            ok = ok || k == a;
        if (!ok)
            throw config_error(where + ": unknown key \"" + k + "\"");
    }
}

template <typename T>
void read(const json& j, const char* key, T& out)
{
    if (j.contains(key))
        out = j.at(key).get<T>();
}

} // namespace detail

inline RunConfig run_config_from_json(const json& j)
{
    RunConfig c;
    try {
        using detail::read;
        detail::check_keys(j,
                           {"source", "endpoint", "synthetic", "tiling", "visibility", "extractor", "train",
                            "index_years", "recall_ns", "random_trials", "workdir", "cache_dir", "seed", "jobs"},
                           "config");
        read(j, "source", c.source);
        if (j.contains("endpoint")) {
            const auto& e = j["endpoint"];
            detail::check_keys(e, {"url_template", "max_retries", "backoff_ms", "parallelism", "timeout_s", "tile_px"},
                               "endpoint");
            read(e, "url_template", c.endpoint.url_template);
            read(e, "max_retries", c.endpoint.max_retries);
            if (e.contains("backoff_ms"))
                c.endpoint.backoff = std::chrono::milliseconds(e["backoff_ms"].get<int>());
            read(e, "parallelism", c.endpoint.parallelism);
            read(e, "timeout_s", c.endpoint.timeout_s);
            read(e, "tile_px", c.endpoint.tile_px);
        }
        if (j.contains("synthetic")) {
            const auto& s = j["synthetic"];
            detail::check_keys(s,
                               {"num_regions", "num_queries", "zooms", "lat_limit_deg", "min_site_size",
                                "max_site_size", "min_site_separation_km", "min_crop", "max_crop",
                                "max_nadir_offset_km"},
                               "synthetic");
            read(s, "num_regions", c.synthetic.num_regions);
            read(s, "num_queries", c.synthetic.num_queries);
            read(s, "zooms", c.synthetic.zooms);
            read(s, "lat_limit_deg", c.synthetic.lat_limit_deg);
            read(s, "min_site_size", c.synthetic.min_site_size);
            read(s, "max_site_size", c.synthetic.max_site_size);
            read(s, "min_site_separation_km", c.synthetic.min_site_separation_km);
            read(s, "min_crop", c.synthetic.min_crop);
            read(s, "max_crop", c.synthetic.max_crop);
            read(s, "max_nadir_offset_km", c.synthetic.max_nadir_offset_km);
        }
        if (j.contains("tiling")) {
            const auto& t = j["tiling"];
            detail::check_keys(t, {"zooms", "lat_limit_deg", "years", "image_px", "span_tiles"}, "tiling");
            read(t, "zooms", c.tiling.zooms);
            read(t, "lat_limit_deg", c.tiling.lat_limit_deg);
            read(t, "years", c.tiling.years);
            read(t, "image_px", c.tiling.image_px);
            read(t, "span_tiles", c.tiling.grid.span_tiles);
        }
        if (j.contains("visibility")) {
            const auto& v = j["visibility"];
            detail::check_keys(v, {"earth_radius_km", "orbit_altitude_km", "search_radius_km"}, "visibility");
            read(v, "earth_radius_km", c.visibility.earth_radius_km);
            read(v, "orbit_altitude_km", c.visibility.orbit_altitude_km);
            read(v, "search_radius_km", c.visibility.search_radius_km);
        }
        if (j.contains("extractor")) {
            const auto& e = j["extractor"];
            detail::check_keys(e, {"dim", "grid", "seed"}, "extractor");
            read(e, "dim", c.extractor.dim);
            read(e, "grid", c.extractor.grid);
            read(e, "seed", c.extractor.seed);
        }
        if (j.contains("train")) {
            const auto& t = j["train"];
            detail::check_keys(t,
                               {"clusters", "refresh_every", "reference_year", "quadruplets_per_batch", "alpha",
                                "beta", "lambda", "lr", "iterations", "clustered_batches", "year_wise_aug",
                                "neutral_aware", "head_dim", "augmentation"},
                               "train");
            read(t, "clusters", c.train.clusters.num_clusters);
            read(t, "refresh_every", c.train.clusters.refresh_every);
            read(t, "reference_year", c.train.clusters.reference_year);
            read(t, "quadruplets_per_batch", c.train.batch.quadruplets_per_batch);
            read(t, "alpha", c.train.loss.alpha);
            read(t, "beta", c.train.loss.beta);
            read(t, "lambda", c.train.loss.lambda);
            read(t, "lr", c.train.optimizer.lr);
            read(t, "iterations", c.train.optimizer.iterations);
            read(t, "clustered_batches", c.train.ablation.clustered_batches);
            read(t, "year_wise_aug", c.train.ablation.year_wise_aug);
            read(t, "neutral_aware", c.train.ablation.neutral_aware);
            read(t, "head_dim", c.train.head_dim);
            if (t.contains("augmentation")) {
                const auto& a = t["augmentation"];
                detail::check_keys(a, {"brightness", "contrast", "saturation", "hue", "rotation_deg", "perspective"},
                                   "train.augmentation");
                auto& r = c.train.augmentation;
                read(a, "brightness", r.brightness);
                read(a, "contrast", r.contrast);
                read(a, "saturation", r.saturation);
                read(a, "hue", r.hue);
                read(a, "rotation_deg", r.rotation_deg);
                read(a, "perspective", r.perspective);
            }
        }
        read(j, "index_years", c.index_years);
        read(j, "recall_ns", c.recall_ns);
        read(j, "random_trials", c.random_trials);
        if (j.contains("workdir"))
            c.workdir = j["workdir"].get<std::string>();
        if (j.contains("cache_dir"))
            c.cache_dir = j["cache_dir"].get<std::string>();
        read(j, "seed", c.seed);
        read(j, "jobs", c.jobs);
    } catch (const json::exception& e) {
        throw config_error(std::string("config: ") + e.what());
    }
    return c;
}

inline RunConfig load_run_config(const fs::path& path)
{
    if (!fs::exists(path))
        throw config_error("config file not found: " + path.string());
    try {
        return run_config_from_json(json::parse(read_text(path)));
    } catch (const json::parse_error& e) {
        throw config_error("config " + path.string() + ": " + e.what());
    }
}

/// Everything that influences results (paths and parallelism excluded).
inline json run_config_to_json(const RunConfig& c)
{
    const auto& t = c.train;
    const auto& a = t.augmentation;
    return {
        {"source", c.source},
        {"endpoint",
         {{"url_template", c.endpoint.url_template}, {"tile_px", c.endpoint.tile_px}}},
        {"synthetic",
         {{"num_regions", c.synthetic.num_regions},
          {"num_queries", c.synthetic.num_queries},
          {"zooms", c.synthetic.zooms},
          {"lat_limit_deg", c.synthetic.lat_limit_deg},
          {"min_site_size", c.synthetic.min_site_size},
          {"max_site_size", c.synthetic.max_site_size},
          {"min_site_separation_km", c.synthetic.min_site_separation_km},
          {"min_crop", c.synthetic.min_crop},
          {"max_crop", c.synthetic.max_crop},
          {"max_nadir_offset_km", c.synthetic.max_nadir_offset_km}}},
        {"tiling",
         {{"zooms", c.tiling.zooms},
          {"lat_limit_deg", c.tiling.lat_limit_deg},
          {"years", c.tiling.years},
          {"image_px", c.tiling.image_px},
          {"span_tiles", c.tiling.grid.span_tiles}}},
        {"visibility",
         {{"earth_radius_km", c.visibility.earth_radius_km},
          {"orbit_altitude_km", c.visibility.orbit_altitude_km},
          {"search_radius_km", c.visibility.search_radius_km}}},
        {"extractor", {{"dim", c.extractor.dim}, {"grid", c.extractor.grid}, {"seed", c.extractor.seed}}},
        {"train",
         {{"clusters", t.clusters.num_clusters},
          {"refresh_every", t.clusters.refresh_every},
          {"reference_year", t.clusters.reference_year},
          {"quadruplets_per_batch", t.batch.quadruplets_per_batch},
          {"alpha", t.loss.alpha},
          {"beta", t.loss.beta},
          {"lambda", t.loss.lambda},
          {"lr", t.optimizer.lr},
          {"iterations", t.optimizer.iterations},
          {"clustered_batches", t.ablation.clustered_batches},
          {"year_wise_aug", t.ablation.year_wise_aug},
          {"neutral_aware", t.ablation.neutral_aware},
          {"head_dim", t.head_dim},
          {"augmentation",
           {{"brightness", a.brightness},
            {"contrast", a.contrast},
            {"saturation", a.saturation},
            {"hue", a.hue},
            {"rotation_deg", a.rotation_deg},
            {"perspective", a.perspective}}}}},
        {"index_years", c.index_years},
        {"recall_ns", c.recall_ns},
        {"random_trials", c.random_trials},
        {"seed", c.seed},
    };
}

inline std::string config_fingerprint(const RunConfig& c)
{
    const auto text = run_config_to_json(c).dump();
    std::uint64_t h = 1469598103934665603ull;
    for (const unsigned char ch : text) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// ---------------------------------------------------------------------------
// Working directory

struct Workspace {
    fs::path root;

    fs::path regions() const { return root / "regions.json"; }
    fs::path db_image(const RegionId& r, int year) const
    {
        return root / "db" / std::to_string(year) /
               (std::to_string(r.zoom) + "_" + std::to_string(r.ix) + "_" + std::to_string(r.iy) + ".ppm");
    }
    fs::path catalog() const { return root / "queries.jsonl"; }
    fs::path query_dir() const { return root / "queries"; }
    fs::path features() const { return root / "features.emb1"; }
    fs::path head() const { return root / "head.bin"; }
    fs::path train_log() const { return root / "train_log.jsonl"; }
    fs::path index() const { return root / "index"; }
    fs::path evalset(const std::string& name) const { return root / "evalsets" / (name + ".json"); }
    fs::path reports() const { return root / "reports"; }
};

using Logger = std::function<void(const std::string&)>;

inline Logger stderr_logger()
{
    return [](const std::string& m) { std::cerr << m << '\n'; };
}

struct RegionList {
    std::vector<RegionId> regions;
    std::vector<int> years;
};

inline void save_region_list(const fs::path& p, const RegionList& l)
{
    json regions = json::array();
    for (const auto& r : l.regions)
        regions.push_back({r.zoom, r.ix, r.iy});
    write_text_atomic(p, json{{"years", l.years}, {"regions", regions}}.dump() + "\n");
}

inline RegionList load_region_list(const fs::path& p)
{
    if (!fs::exists(p))
        throw missing_artifact_error("no region list at " + p.string() + " (run `orbitloc build-db` first)");
    try {
        const auto j = json::parse(read_text(p));
        RegionList l;
        l.years = j.at("years").get<std::vector<int>>();
        for (const auto& r : j.at("regions"))
            l.regions.push_back({r.at(0).get<int>(), r.at(1).get<std::int64_t>(), r.at(2).get<std::int64_t>()});
        return l;
    } catch (const json::exception& e) {
        throw corruption_error("region list " + p.string() + ": " + e.what());
    }
}

inline ImageLoader workspace_loader(const Workspace& ws)
{
    return [ws](const DbImageRef& ref) {
        const auto p = ws.db_image(ref.region, ref.year);
        if (!fs::exists(p))
            throw missing_artifact_error("missing database image " + p.string());
        return decode_image(read_file(p));
    };
}

/// Query image `<dir>/<id>.{ppm,jpg,jpeg,png}`.
inline Image load_query_image(const fs::path& dir, const std::string& id)
{
    for (const char* ext : {".ppm", ".jpg", ".jpeg", ".png"}) {
        const auto p = dir / (id + ext);
        if (fs::exists(p))
            return decode_image(read_file(p));
    }
    throw missing_artifact_error("no image for query " + id + " in " + dir.string());
}

// ---------------------------------------------------------------------------
// Steps

struct BuildDbOptions {
    std::optional<GeoPoint> poi; // tiles source: keep regions near this point
    double radius_km = 0.0;      // 0: twice the visible distance
    std::size_t max_regions = 0; // 0: no limit
};

/// Synthetic source: generates the world, writes database images, the query
/// catalog and query images. Tiles source: enumerates regions and downloads
/// each image through the tile cache.
inline RegionList build_db(const RunConfig& cfg, const BuildDbOptions& opt = {}, const Logger& log = {},
                           HttpTransport transport = {})
{
    Workspace ws{cfg.workdir};
    RegionList list{{}, cfg.tiling.years};
    if (cfg.source == "synthetic") {
        const auto world = make_synthetic_world(cfg.synthetic, cfg.jobs);
        list.regions = world.regions;
        for (std::size_t i = 0; i < world.regions.size(); ++i)
            for (const int y : cfg.tiling.years)
                write_file_atomic(ws.db_image(world.regions[i], y), encode_ppm(world.render_region(world.regions[i], y)));
        for (const auto& q : world.queries)
            write_file_atomic(ws.query_dir() / (q.record.id + ".ppm"), encode_ppm(q.image));
        write_text_atomic(ws.catalog(), serialize_query_catalog(world.query_records()));
        if (log)
            log("synthetic world: " + std::to_string(world.regions.size()) + " regions, " +
                std::to_string(world.queries.size()) + " queries");
    } else {
        auto regions = enumerate_regions(cfg.tiling);
        if (opt.poi) {
            const double radius = opt.radius_km > 0 ? opt.radius_km
                                                    : 2.0 * visible_distance(cfg.visibility.earth_radius_km,
                                                                             cfg.visibility.orbit_altitude_km);
            std::erase_if(regions, [&](const RegionId& r) {
                return haversine_km(region_center(r, cfg.tiling.grid), *opt.poi) > radius;
            });
        }
        if (opt.max_regions > 0 && regions.size() > opt.max_regions)
            regions.resize(opt.max_regions);
        list.regions = regions;
        TileFetcher fetcher(cfg.endpoint, cfg.cache(), std::move(transport));
        std::vector<std::pair<RegionId, int>> wanted;
        for (const auto& r : regions)
            for (const int y : cfg.tiling.years)
                wanted.push_back({r, y});
        if (log)
            log("fetching " + std::to_string(wanted.size()) + " region images");
        parallel_for(wanted.size(), cfg.endpoint.parallelism, [&](std::size_t i) {
            const auto& [r, y] = wanted[i];
            const auto img = fetch_region_image(fetcher, r, y, cfg.tiling.grid, cfg.tiling.image_px);
            write_file_atomic(ws.db_image(r, y), encode_ppm(img));
        });
        if (log)
            log(std::to_string(fetcher.network_requests()) + " network requests");
    }
    save_region_list(ws.regions(), list);
    return list;
}

/// Eval set from the workspace catalog (or `catalog`). Without a POI the
/// set holds every query and every region.
inline EvalSet build_evalset_step(const RunConfig& cfg, const std::string& name, const std::optional<GeoPoint>& poi,
                                  const fs::path& catalog = {}, bool area_filter = false)
{
    Workspace ws{cfg.workdir};
    const auto list = load_region_list(ws.regions());
    auto records = ingest_query_catalog(catalog.empty() ? ws.catalog() : catalog);
    if (area_filter)
        records = filter_queries_by_area(records);
    EvalSet es;
    if (poi) {
        es = build_eval_set(name, *poi, records, list.regions, cfg.visibility, cfg.tiling.grid);
    } else {
        es = EvalSet{name, GeoPoint{0, 0}, records, list.regions};
    }
    write_text_atomic(ws.evalset(name), eval_set_to_json(es).dump() + "\n");
    return es;
}

inline EvalSet load_evalset(const RunConfig& cfg, const std::string& name)
{
    Workspace ws{cfg.workdir};
    if (!fs::exists(ws.evalset(name)))
        throw missing_artifact_error("no eval set \"" + name + "\" (run `orbitloc build-evalset` first)");
    try {
        return eval_set_from_json(json::parse(read_text(ws.evalset(name))));
    } catch (const json::parse_error& e) {
        throw corruption_error("eval set " + name + ": " + e.what());
    }
}

/// Extractor plus the trained head when one exists (unless `untrained`).
struct LoadedEmbedder {
    Extractor extractor;
    std::optional<LinearHead> head;

    Embedder embedder() const { return head ? Embedder::from(extractor, *head) : Embedder::from(extractor); }
};

inline LoadedEmbedder load_embedder(const RunConfig& cfg, bool untrained)
{
    LoadedEmbedder e{Extractor(cfg.extractor), std::nullopt};
    const Workspace ws{cfg.workdir};
    if (!untrained && fs::exists(ws.head())) {
        e.head = load_head(ws.head());
        if (e.head->weights.cols != static_cast<std::size_t>(cfg.extractor.dim))
            throw incompatible_error("head expects " + std::to_string(e.head->weights.cols) +
                                     "-dim features, extractor produces " + std::to_string(cfg.extractor.dim));
    }
    return e;
}

/// Embeds every database image (unrotated) into an EMB1 feature store.
inline FeatureStore extract_step(const RunConfig& cfg, bool untrained = false)
{
    Workspace ws{cfg.workdir};
    const auto list = load_region_list(ws.regions());
    const auto le = load_embedder(cfg, untrained);
    const auto em = le.embedder();
    const auto loader = workspace_loader(ws);
    FeatureStore store;
    store.dim = static_cast<std::uint32_t>(em.dim);
    std::vector<DbImageRef> refs;
    for (const auto& r : list.regions)
        for (const int y : list.years)
            refs.push_back({r, y});
    std::vector<Embedding> embs(refs.size());
    parallel_for(refs.size(), cfg.jobs, [&](std::size_t i) { embs[i] = em.embed(loader(refs[i])); });
    for (std::size_t i = 0; i < refs.size(); ++i)
        store.add({pack_region(refs[i].region), 0, static_cast<std::uint16_t>(refs[i].year)}, embs[i]);
    save_feature_store(ws.features(), store);
    return store;
}

inline std::string train_log_line(const TrainLogEntry& e)
{
    return json{{"iteration", e.iteration}, {"loss", e.loss}, {"cluster_id", e.cluster_id}, {"lr", e.lr}}.dump();
}

inline TrainResult train_step(const RunConfig& cfg, const Logger& log = {})
{
    Workspace ws{cfg.workdir};
    const auto list = load_region_list(ws.regions());
    const auto loader = workspace_loader(ws);
    std::vector<TrainingQuadruplet> data(list.regions.size());
    parallel_for(list.regions.size(), cfg.jobs, [&](std::size_t i) {
        data[i].region = list.regions[i];
        for (const int y : cfg.train.years)
            data[i].images.push_back(loader({list.regions[i], y}));
    });
    const Extractor ex(cfg.extractor);
    const int every = std::max(1, cfg.train.optimizer.iterations / 10);
    auto res = train_linear_head(data, ex, cfg.train, [&](const TrainLogEntry& e) {
        if (log && (e.iteration % every == 0 || e.iteration + 1 == cfg.train.optimizer.iterations))
            log("iter " + std::to_string(e.iteration) + " loss " + std::to_string(e.loss));
    });
    std::string lines;
    for (const auto& e : res.log)
        lines += train_log_line(e) + "\n";
    write_text_atomic(ws.train_log(), lines);
    save_head(ws.head(), res.head);
    return res;
}

/// Build timestamp for manifests: SOURCE_DATE_EPOCH when set, else now.
inline std::string build_timestamp_now()
{
    using namespace std::chrono;
    if (const char* e = std::getenv("SOURCE_DATE_EPOCH"))
        return format_rfc3339(Timestamp(seconds(std::strtoll(e, nullptr, 10))));
    return format_rfc3339(time_point_cast<milliseconds>(system_clock::now()));
}

inline TtaIndex index_step(const RunConfig& cfg, bool untrained = false)
{
    Workspace ws{cfg.workdir};
    const auto list = load_region_list(ws.regions());
    const auto le = load_embedder(cfg, untrained);
    std::vector<DbImageRef> refs;
    for (const auto& r : list.regions)
        for (const int y : list.years)
            refs.push_back({r, y});
    auto idx = build_index(refs, workspace_loader(ws), le.embedder(), cfg.index_years, cfg.jobs, build_timestamp_now());
    save_index(idx, ws.index());
    return idx;
}

inline std::vector<Prediction> query_step(const RunConfig& cfg, const Image& image, int top, bool untrained = false)
{
    Workspace ws{cfg.workdir};
    const auto le = load_embedder(cfg, untrained);
    const auto em = le.embedder();
    const auto idx = load_index(ws.index(), em.fingerprint);
    return top_regions(idx, em.embed(image), top);
}

struct EvalOutcome {
    std::vector<RecallReport> reports; // model, nadir, random
    BinnedReport by_distance, by_area;
};

inline std::string eval_text(const EvalOutcome& o)
{
    return format_recall_table(o.reports) + "\n" + format_binned_table(o.by_distance) + "\n" +
           format_binned_table(o.by_area);
}

inline json eval_json(const EvalOutcome& o)
{
    json reps = json::array();
    for (const auto& r : o.reports)
        reps.push_back(report_to_json(r));
    return {{"reports", reps}, {"by_distance", binned_to_json(o.by_distance)}, {"by_area", binned_to_json(o.by_area)}};
}

/// Evaluates the index on an eval set and writes reports/<name>.{json,txt}.
inline EvalOutcome eval_step(const RunConfig& cfg, const std::string& name, bool untrained = false,
                             const fs::path& query_images = {})
{
    Workspace ws{cfg.workdir};
    const auto es = load_evalset(cfg, name);
    const auto le = load_embedder(cfg, untrained);
    const auto em = le.embedder();
    const auto idx = load_index(ws.index(), em.fingerprint);
    const auto img_dir = query_images.empty() ? ws.query_dir() : query_images;
    const int nmax = *std::max_element(cfg.recall_ns.begin(), cfg.recall_ns.end());

    std::vector<std::vector<Prediction>> preds(es.queries.size()), nadir(es.queries.size());
    parallel_for(es.queries.size(), cfg.jobs, [&](std::size_t q) {
        preds[q] = top_regions(idx, em.embed(load_query_image(img_dir, es.queries[q].id)), nmax, es.db_regions);
        nadir[q] = nadir_baseline(es.queries[q], es.db_regions, cfg.tiling.grid);
    });
    EvalOutcome o;
    const auto fp = config_fingerprint(cfg);
    auto model = score(preds, es.queries, cfg.recall_ns, cfg.tiling.grid, cfg.jobs);
    model.name = le.head ? "trained" : "baseline-extractor";
    model.config_fingerprint = fp;
    auto nad = score(nadir, es.queries, cfg.recall_ns, cfg.tiling.grid, cfg.jobs);
    nad.name = "nadir";
    nad.config_fingerprint = fp;
    Rng gen(cfg.seed);
    auto rnd = random_baseline(es.db_regions, es.queries, cfg.recall_ns, gen, cfg.random_trials, cfg.tiling.grid);
    rnd.config_fingerprint = fp;
    o.by_distance = binned_recall(model.per_query, BinKey::distance_from_nadir, linear_edges(0, 2500, 10));
    o.by_area = binned_recall(model.per_query, BinKey::area, log_spaced_edges(5000, 900000, 8));
    o.reports = {std::move(model), std::move(nad), std::move(rnd)};

    write_text_atomic(ws.reports() / (name + ".json"), eval_json(o).dump(2) + "\n");
    write_text_atomic(ws.reports() / (name + ".txt"), eval_text(o));
    return o;
}

/// Writes <stem>_distance.svg and <stem>_area.svg from an eval report.
inline std::vector<fs::path> plot_step(const fs::path& report_json, const fs::path& out_dir)
{
    if (!fs::exists(report_json))
        throw missing_artifact_error("no report at " + report_json.string());
    json j;
    try {
        j = json::parse(read_text(report_json));
    } catch (const json::parse_error& e) {
        throw corruption_error("report " + report_json.string() + ": " + e.what());
    }
    auto binned = [&](const char* key, BinKey k) {
        BinnedReport b;
        b.key = k;
        try {
            const auto& bins = j.at(key).at("bins");
            for (const auto& bin : bins) {
                if (b.edges.empty())
                    b.edges.push_back(bin.at("lo").get<double>());
                b.edges.push_back(bin.at("hi").get<double>());
                b.counts.push_back(bin.at("count").get<std::size_t>());
                const auto& r = bin.at("R@1");
                b.recall_at_1.push_back(r.is_null() ? std::nullopt : std::optional<double>(r.get<double>()));
            }
        } catch (const json::exception& e) {
            throw format_error("report " + report_json.string() + ": " + e.what());
        }
        return b;
    };
    const auto stem = report_json.stem().string();
    const fs::path a = out_dir / (stem + "_distance.svg"), b = out_dir / (stem + "_area.svg");
    write_text_atomic(a, binned_to_svg(binned("by_distance", BinKey::distance_from_nadir), "R@1 vs distance from nadir"));
    write_text_atomic(b, binned_to_svg(binned("by_area", BinKey::area), "R@1 vs footprint area"));
    return {a, b};
}

struct BenchRow {
    std::string name;
    AblationToggles toggles;
    double final_loss = 0.0;
    RecallReport report;
};

/// Trains and evaluates each ablation variant in a scratch copy of the
/// workspace and writes reports/bench.{json,txt}. Requires build-db and an
/// eval set named `evalset`.
inline std::vector<BenchRow> bench_step(const RunConfig& cfg, const std::string& evalset, const Logger& log = {})
{
    const std::vector<std::pair<std::string, AblationToggles>> variants{
        {"full", {true, true, true}},
        {"no-clustered-batches", {false, true, true}},
        {"no-year-wise-aug", {true, false, true}},
        {"no-neutral-aware", {true, true, false}},
    };
    Workspace ws{cfg.workdir};
    std::vector<BenchRow> rows;
    auto run_variant = [&](const std::string& name, std::optional<AblationToggles> toggles) {
        RunConfig c = cfg;
        const fs::path dir = cfg.workdir / "bench" / name;
        c.workdir = dir;
        fs::create_directories(dir / "evalsets");
        // share the database and queries with the main workspace
        for (const auto& sub : {"db", "queries"})
            if (!fs::exists(dir / sub))
                fs::create_directory_symlink(fs::absolute(ws.root / sub), dir / sub);
        fs::copy_file(ws.regions(), Workspace{dir}.regions(), fs::copy_options::overwrite_existing);
        fs::copy_file(ws.evalset(evalset), Workspace{dir}.evalset(evalset), fs::copy_options::overwrite_existing);
        BenchRow row{name, toggles.value_or(AblationToggles{}), 0.0, {}};
        if (toggles) {
            c.train.ablation = *toggles;
            const auto res = train_step(c);
            row.final_loss = smoothed_loss_endpoints(res.log, 50).second;
        } else {
            fs::remove(Workspace{dir}.head());
        }
        index_step(c, !toggles);
        auto o = eval_step(c, evalset, !toggles);
        row.report = o.reports.front();
        row.report.name = name;
        if (log)
            log(name + ": R@10 " + std::to_string(row.report.at(10)));
        return row;
    };
    rows.push_back(run_variant("untrained", std::nullopt));
    for (const auto& [name, t] : variants)
        rows.push_back(run_variant(name, t));

    std::vector<RecallReport> reps;
    json j = json::array();
    for (const auto& r : rows) {
        reps.push_back(r.report);
        json recall = json::object();
        for (std::size_t k = 0; k < r.report.ns.size(); ++k)
            recall["R@" + std::to_string(r.report.ns[k])] = r.report.recall[k];
        j.push_back({{"name", r.name},
                     {"clustered_batches", r.toggles.clustered_batches},
                     {"year_wise_aug", r.toggles.year_wise_aug},
                     {"neutral_aware", r.toggles.neutral_aware},
                     {"final_smoothed_loss", r.final_loss},
                     {"recall", recall}});
    }
    write_text_atomic(ws.reports() / "bench.json",
                      json{{"config_fingerprint", config_fingerprint(cfg)}, {"variants", j}}.dump(2) + "\n");
    write_text_atomic(ws.reports() / "bench.txt", format_recall_table(reps));
    return rows;
}

} // namespace orbitloc
