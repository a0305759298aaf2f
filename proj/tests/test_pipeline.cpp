#include <gtest/gtest.h>

#include <atomic>
#include <cstdlib>
#include <set>
#include <sys/wait.h>

#include "orbitloc/pipeline.hpp"

using namespace orbitloc;

namespace {

const fs::path kRoot = fs::temp_directory_path() / ("orbitloc_test_pipeline_" + std::to_string(::getpid()));

struct CliResult {
    int code = -1;
    std::string out, err;
};

CliResult cli(const std::string& args)
{
    fs::create_directories(kRoot);
    const auto out = kRoot / "stdout.txt", err = kRoot / "stderr.txt";
    const std::string cmd = "SOURCE_DATE_EPOCH=1700000000 '" + std::string(ORBITLOC_CLI) + "' " + args + " >'" +
                            out.string() + "' 2>'" + err.string() + "'";
    const int raw = std::system(cmd.c_str());
    CliResult r;
    r.code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    r.out = read_text(out);
    r.err = read_text(err);
    return r;
}

// Small synthetic run that finishes in seconds.
fs::path small_config(const std::string& name, const std::string& extra = "")
{
    const auto p = kRoot / (name + ".json");
    fs::create_directories(kRoot);
    write_text_atomic(p, R"({"synthetic": {"num_regions": 40, "num_queries": 24},
        "tiling": {"image_px": 32},
        "extractor": {"dim": 64, "grid": 4},
        "train": {"iterations": 30, "clusters": 4, "refresh_every": 11, "quadruplets_per_batch": 4},
        "recall_ns": [1, 5, 10], "random_trials": 20)" + extra + "}");
    return p;
}

std::string run_flow(const fs::path& config, const fs::path& work, int jobs)
{
    const std::string base = "--config '" + config.string() + "' --workdir '" + work.string() + "' --jobs " +
                             std::to_string(jobs) + " ";
    for (const char* step : {"build-db", "build-evalset", "train", "index", "eval"}) {
        const auto r = cli(base + step);
        EXPECT_EQ(r.code, 0) << step << ": " << r.err;
    }
    return read_text(work / "reports" / "default.json");
}

bool has_temp_files(const fs::path& dir)
{
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.path().filename().string().find(".tmp.") != std::string::npos)
            return true;
    return false;
}

class Pipeline : public ::testing::Test {
protected:
    static void TearDownTestSuite() { fs::remove_all(kRoot); }
};

} // namespace

TEST_F(Pipeline, SeededRunsGiveByteIdenticalReports)
{
    const auto cfg = small_config("det");
    const auto a = run_flow(cfg, kRoot / "run_a", 1);
    const auto b = run_flow(cfg, kRoot / "run_b", 2);
    ASSERT_FALSE(a.empty());
    EXPECT_EQ(a, b);
    EXPECT_EQ(read_text(kRoot / "run_a" / "train_log.jsonl"), read_text(kRoot / "run_b" / "train_log.jsonl"));
    EXPECT_FALSE(has_temp_files(kRoot / "run_a"));

    const auto j = json::parse(a);
    EXPECT_EQ(j["reports"][0]["name"], "trained");
    EXPECT_EQ(j["reports"][0]["num_queries"], 24);
    EXPECT_EQ(j["reports"][2]["name"], "random");
    std::size_t total = 0;
    for (const auto& bin : j["by_area"]["bins"])
        total += bin["count"].get<std::size_t>();
    EXPECT_EQ(total, 24u);

    // seed changes the world
    const auto c = cli("--config '" + cfg.string() + "' --workdir '" + (kRoot / "run_c").string() + "' --seed 2 build-db");
    EXPECT_EQ(c.code, 0);
    EXPECT_NE(read_text(kRoot / "run_c" / "regions.json"), read_text(kRoot / "run_a" / "regions.json"));
}

TEST_F(Pipeline, StepsAfterFlow)
{
    const auto cfg = small_config("after");
    const auto work = kRoot / "after";
    run_flow(cfg, work, 1);
    const std::string base = "--config '" + cfg.string() + "' --workdir '" + work.string() + "' ";

    const auto q = cli(base + "query --top 3 --image '" + (work / "queries" / "SYN-00000.ppm").string() + "'");
    ASSERT_EQ(q.code, 0) << q.err;
    const auto preds = json::parse(q.out);
    ASSERT_EQ(preds.size(), 3u);
    EXPECT_EQ(preds[0]["rank"], 1);
    EXPECT_GE(preds[0]["score"].get<double>(), preds[1]["score"].get<double>());

    const auto p = cli(base + "plot --report '" + (work / "reports" / "default.json").string() + "'");
    ASSERT_EQ(p.code, 0) << p.err;
    EXPECT_TRUE(fs::exists(work / "reports" / "default_distance.svg"));
    EXPECT_TRUE(fs::exists(work / "reports" / "default_area.svg"));

    const auto x = cli(base + "extract");
    ASSERT_EQ(x.code, 0) << x.err;
    const auto store = load_feature_store(work / "features.emb1");
    EXPECT_EQ(store.size(), 40u * 4);
    EXPECT_EQ(decode_feature_store(encode_feature_store(store)), store);

    // Stale index: retrained head no longer matches the stored fingerprint.
    const auto t = cli(base + "train --iterations 5");
    ASSERT_EQ(t.code, 0) << t.err;
    const auto stale = cli(base + "eval");
    EXPECT_EQ(stale.code, 6) << stale.err;
    EXPECT_NE(stale.err.find("extractor"), std::string::npos);
}

TEST_F(Pipeline, ExitCodesByCategory)
{
    EXPECT_EQ(cli("").code, 2);
    EXPECT_EQ(cli("no-such-verb").code, 2);
    const auto work = kRoot / "codes";
    const auto cfg = small_config("codes");
    EXPECT_EQ(cli("--config '" + cfg.string() + "' --workdir '" + work.string() + "' build-evalset --poi 91,0").code, 2);

    const auto missing = cli("--workdir '" + work.string() + "' eval");
    EXPECT_EQ(missing.code, 4);
    EXPECT_NE(missing.err.find("orbitloc build-evalset"), std::string::npos) << missing.err;
    const auto no_index = cli("--workdir '" + work.string() + "' query --image /nonexistent.ppm");
    EXPECT_EQ(no_index.code, 4);
    const auto no_report = cli("plot --report '" + (work / "none.json").string() + "'");
    EXPECT_EQ(no_report.code, 4);

    EXPECT_EQ(cli("--config /nonexistent/config.json build-db").code, 3);
}

TEST_F(Pipeline, MissingArtifactNamesProducingCommand)
{
    const auto cfg = small_config("artifacts");
    const auto work = kRoot / "artifacts";
    const std::string base = "--config '" + cfg.string() + "' --workdir '" + work.string() + "' ";
    ASSERT_EQ(cli(base + "build-db").code, 0);
    const auto e = cli(base + "eval");
    EXPECT_EQ(e.code, 4);
    EXPECT_NE(e.err.find("build-evalset"), std::string::npos) << e.err;
    ASSERT_EQ(cli(base + "build-evalset").code, 0);
    const auto i = cli(base + "eval");
    EXPECT_EQ(i.code, 4);
    EXPECT_NE(i.err.find("orbitloc index"), std::string::npos) << i.err;
}

TEST_F(Pipeline, ConfigValidatedBeforeSideEffects)
{
    const auto work = kRoot / "invalid";
    const auto bad_key = small_config("badkey", R"(, "trian": {})");
    const auto r = cli("--config '" + bad_key.string() + "' --workdir '" + work.string() + "' build-db");
    EXPECT_EQ(r.code, 3);
    EXPECT_NE(r.err.find("trian"), std::string::npos);
    EXPECT_FALSE(fs::exists(work));

    const auto bad_value = small_config("badval", R"(, "index_years": [1990])");
    EXPECT_EQ(cli("--config '" + bad_value.string() + "' --workdir '" + work.string() + "' build-db").code, 3);
    EXPECT_FALSE(fs::exists(work));
    const auto bad_px = small_config("badpx", R"(, "extractor": {"dim": 100000})");
    EXPECT_EQ(cli("--config '" + bad_px.string() + "' --workdir '" + work.string() + "' build-db").code, 3);
    EXPECT_FALSE(fs::exists(work));
}

TEST_F(Pipeline, EmptyEvalSetWarns)
{
    const auto cfg = small_config("empty");
    const auto work = kRoot / "empty";
    const std::string base = "--config '" + cfg.string() + "' --workdir '" + work.string() + "' ";
    ASSERT_EQ(cli(base + "build-db").code, 0);
    write_text_atomic(kRoot / "empty_catalog.jsonl", "");
    const auto r = cli(base + "build-evalset --name none --catalog '" + (kRoot / "empty_catalog.jsonl").string() + "'");
    EXPECT_EQ(r.code, 0);
    EXPECT_NE(r.err.find("warning"), std::string::npos) << r.err;
    EXPECT_NE(r.out.find("0 queries"), std::string::npos);
}

TEST(PipelineConfig, JsonRoundTripKeepsFingerprint)
{
    RunConfig c;
    c.train.optimizer.iterations = 77;
    c.extractor.dim = 128;
    c.index_years = {2019, 2021};
    c.finalize();
    RunConfig back = run_config_from_json(run_config_to_json(c));
    back.finalize();
    EXPECT_EQ(config_fingerprint(back), config_fingerprint(c));
    RunConfig other = c;
    other.seed = 2;
    other.finalize();
    EXPECT_NE(config_fingerprint(other), config_fingerprint(c));
    RunConfig moved = c;
    moved.workdir = "/elsewhere";
    moved.jobs = 4;
    EXPECT_EQ(config_fingerprint(moved), config_fingerprint(c));
    EXPECT_THROW(run_config_from_json(json{{"train", {{"lr", "fast"}}}}), config_error);
}

TEST(PipelineTiles, RerunningBuildDbFetchesNothingNew)
{
    const auto work = kRoot / "tiles";
    fs::remove_all(work);
    RunConfig cfg;
    cfg.source = "tiles";
    cfg.workdir = work;
    cfg.endpoint.url_template = "http://tiles.invalid/{year}/{z}/{x}/{y}.ppm";
    cfg.endpoint.tile_px = 16;
    cfg.endpoint.parallelism = 4;
    cfg.tiling.image_px = 32;
    cfg.tiling.zooms = {8};
    cfg.finalize();
    std::atomic<int> calls{0};
    HttpTransport transport = [&](const std::string& url) {
        ++calls;
        Image tile(16, 16);
        std::fill(tile.rgb.begin(), tile.rgb.end(), static_cast<std::uint8_t>(url.size()));
        const auto bytes = encode_ppm(tile);
        return HttpResponse{200, std::string(bytes.begin(), bytes.end()), ""};
    };
    BuildDbOptions opt{GeoPoint{45, 7}, 400, 3};
    const auto list = build_db(cfg, opt, {}, transport);
    ASSERT_EQ(list.regions.size(), 3u);
    // overlapping regions share tiles: one download per distinct tile
    std::set<TileKey> distinct;
    for (const auto& r : list.regions)
        for (const int y : cfg.tiling.years)
            for (const auto& k : region_tiles(r, y, cfg.tiling.grid))
                distinct.insert(k);
    EXPECT_EQ(calls.load(), static_cast<int>(distinct.size()));
    const auto again = build_db(cfg, opt, {}, transport);
    EXPECT_EQ(again.regions, list.regions);
    EXPECT_EQ(calls.load(), static_cast<int>(distinct.size()));
    const auto img = decode_image(read_file(Workspace{work}.db_image(list.regions[0], 2021)));
    EXPECT_EQ(img.width, 32);
    for (const auto& r : list.regions)
        EXPECT_LE(haversine_km(region_center(r, cfg.tiling.grid), GeoPoint{45, 7}), 400.0);
    EXPECT_FALSE(has_temp_files(work));
    fs::remove_all(work);
}
