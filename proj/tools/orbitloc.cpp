// orbitloc: command-line front end for the localisation pipeline.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "orbitloc/pipeline.hpp"

using namespace orbitloc;

namespace {

std::optional<GeoPoint> parse_point(const std::string& s)
{
    if (s.empty())
        return std::nullopt;
    const auto comma = s.find(',');
    if (comma == std::string::npos)
        throw invalid_argument_error("expected LAT,LON, got \"" + s + "\"");
    try {
        return GeoPoint::make(std::stod(s.substr(0, comma)), std::stod(s.substr(comma + 1)));
    } catch (const std::logic_error&) {
        throw invalid_argument_error("expected LAT,LON, got \"" + s + "\"");
    }
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Astronaut photography localisation: database, training, index and evaluation"};
    app.require_subcommand(1);

    std::string config_path, cache_dir, workdir;
    std::optional<std::uint64_t> seed;
    std::optional<int> jobs;
    app.add_option("--config", config_path, "JSON run configuration");
    app.add_option("--seed", seed, "Global seed");
    app.add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);
    app.add_option("--cache-dir", cache_dir, "Tile cache directory");
    app.add_option("--workdir", workdir, "Working directory for artifacts");

    auto* build_db = app.add_subcommand("build-db", "Build the region database (synthetic world or tile download)");
    std::string db_poi;
    double db_radius = 0;
    std::size_t db_max = 0;
    build_db->add_option("--poi", db_poi, "Tiles source: keep regions near LAT,LON");
    build_db->add_option("--radius-km", db_radius, "Radius around --poi (default: twice the visible distance)");
    build_db->add_option("--max-regions", db_max, "Cap on the number of regions");

    auto* build_evalset = app.add_subcommand("build-evalset", "Select queries and database regions for one POI");
    std::string es_name = "default", es_poi, es_catalog;
    bool es_area = false;
    build_evalset->add_option("--name", es_name, "Eval set name");
    build_evalset->add_option("--poi", es_poi, "LAT,LON; omit to use every query and region");
    build_evalset->add_option("--catalog", es_catalog, "Query catalog JSONL (default: workspace catalog)");
    build_evalset->add_flag("--area-filter", es_area, "Keep only footprints of 5000 to 900000 sq km");

    bool untrained = false;
    auto* extract = app.add_subcommand("extract", "Embed database images into an EMB1 feature store");
    extract->add_flag("--untrained", untrained, "Ignore a trained head");

    auto* train = app.add_subcommand("train", "Train the embedding head");
    std::optional<int> iterations;
    train->add_option("--iterations", iterations, "Override the iteration count");

    auto* index = app.add_subcommand("index", "Build the rotation-augmented index");
    index->add_flag("--untrained", untrained, "Ignore a trained head");

    auto* query = app.add_subcommand("query", "Localise one image");
    std::string q_image;
    int q_top = 10;
    query->add_option("--image", q_image, "Image file (PPM, JPEG or PNG)")->required();
    query->add_option("--top", q_top, "Number of regions to return")->check(CLI::PositiveNumber);
    query->add_flag("--untrained", untrained, "Ignore a trained head");

    auto* eval = app.add_subcommand("eval", "Score an eval set and write reports");
    std::string ev_name = "default", ev_images;
    eval->add_option("--evalset", ev_name, "Eval set name");
    eval->add_option("--query-images", ev_images, "Directory of <id>.{ppm,jpg,png} query images");
    eval->add_flag("--untrained", untrained, "Ignore a trained head");

    auto* bench = app.add_subcommand("bench", "Train and score every ablation variant");
    std::string bench_set = "default";
    bench->add_option("--evalset", bench_set, "Eval set name");

    auto* plot = app.add_subcommand("plot", "Render recall curves of a report as SVG");
    std::string plot_report, plot_out;
    plot->add_option("--report", plot_report, "Report JSON written by eval")->required();
    plot->add_option("--out", plot_out, "Output directory (default: next to the report)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : static_cast<int>(error_category::invalid_argument);
    }

    try {
        RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
        if (seed)
            cfg.seed = *seed;
        if (jobs)
            cfg.jobs = *jobs;
        if (!cache_dir.empty())
            cfg.cache_dir = cache_dir;
        if (!workdir.empty())
            cfg.workdir = workdir;
        if (iterations)
            cfg.train.optimizer.iterations = *iterations;
        cfg.finalize();
        const auto log = stderr_logger();

        if (*build_db) {
            const auto list = orbitloc::build_db(cfg, {parse_point(db_poi), db_radius, db_max}, log);
            std::cout << list.regions.size() << " regions x " << list.years.size() << " years in " << cfg.workdir
                      << "\n";
        } else if (*build_evalset) {
            const auto es = build_evalset_step(cfg, es_name, parse_point(es_poi), es_catalog, es_area);
            if (es.queries.empty() || es.db_regions.empty())
                log("warning: eval set " + es.name + " is empty");
            std::cout << "eval set " << es.name << ": " << es.queries.size() << " queries, " << es.db_regions.size()
                      << " database regions\n";
        } else if (*extract) {
            const auto store = extract_step(cfg, untrained);
            std::cout << store.size() << " embeddings of dim " << store.dim << "\n";
        } else if (*train) {
            const auto res = train_step(cfg, log);
            const auto [first, last] = smoothed_loss_endpoints(res.log, 50);
            std::printf("smoothed loss %.6f -> %.6f over %zu iterations\n", first, last, res.log.size());
        } else if (*index) {
            const auto idx = index_step(cfg, untrained);
            std::cout << idx.size() << " index entries (" << idx.manifest().extractor_fingerprint << ")\n";
        } else if (*query) {
            const auto img = decode_image(read_file(q_image));
            json out = json::array();
            for (const auto& p : query_step(cfg, img, q_top, untrained)) {
                const auto c = region_center(p.region, cfg.tiling.grid);
                out.push_back({{"rank", p.rank},
                               {"region", p.region.str()},
                               {"year", p.year},
                               {"orientation_deg", predict_orientation(p)},
                               {"score", p.score},
                               {"center_lat", c.lat},
                               {"center_lon", c.lon}});
            }
            std::cout << out.dump(2) << "\n";
        } else if (*eval) {
            const auto o = eval_step(cfg, ev_name, untrained, ev_images);
            std::cout << eval_text(o);
        } else if (*bench) {
            const auto rows = bench_step(cfg, bench_set, log);
            std::vector<RecallReport> reps;
            for (const auto& r : rows)
                reps.push_back(r.report);
            std::cout << format_recall_table(reps);
        } else if (*plot) {
            const fs::path report(plot_report);
            const fs::path out = plot_out.empty() ? report.parent_path() : fs::path(plot_out);
            for (const auto& p : plot_step(report, out))
                std::cout << p.string() << "\n";
        }
        return 0;
    } catch (const orbitloc::error& e) {
        std::cerr << "orbitloc: " << e.what() << "\n";
        return static_cast<int>(e.category());
    } catch (const fs::filesystem_error& e) {
        std::cerr << "orbitloc: " << e.what() << "\n";
        return static_cast<int>(error_category::data);
    } catch (const std::exception& e) {
        std::cerr << "orbitloc: internal error: " << e.what() << "\n";
        return 1;
    }
}
