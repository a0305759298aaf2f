#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "orbitloc/database.hpp"
#include "orbitloc/random.hpp"
#include "orbitloc/synthetic.hpp"

using namespace orbitloc;

namespace {

QueryRecord make_record(const std::string& id, double lat, double lon, double area)
{
    QueryRecord r;
    r.id = id;
    r.nadir = GeoPoint::make(lat, lon);
    r.timestamp = parse_rfc3339("2020-05-01T12:00:00Z");
    const double d = 0.5;
    r.footprint.corners = {GeoPoint::make(lat + d, lon - d), GeoPoint::make(lat + d, lon + d),
                           GeoPoint::make(lat - d, lon + d), GeoPoint::make(lat - d, lon - d)};
    r.footprint.center = GeoPoint::make(lat, lon);
    r.area_sqkm = area;
    return r;
}

std::string valid_line()
{
    return R"({"id":"ISS001-E-1","nadir_lat":10,"nadir_lon":20,"timestamp":"2001-02-03T04:05:06Z",)"
           R"("corners":[11,19,11,21,9,21,9,19],"center_lat":10,"center_lon":20,"area_sqkm":49000})";
}

} // namespace

TEST(Enumerate, CountMatchesBruteForce)
{
    TilingConfig cfg;
    cfg.zooms = {6, 7};
    cfg.lat_limit_deg = 60;
    std::size_t oracle = 0;
    for (const int z : cfg.zooms)
        for (std::int64_t iy = 0; iy < cfg.grid.cells(z); ++iy)
            for (std::int64_t ix = 0; ix < cfg.grid.cells(z); ++ix)
                oracle += std::abs(region_center({z, ix, iy}, cfg.grid).lat) <= 60.0;
    const auto regions = enumerate_regions(cfg);
    EXPECT_EQ(regions.size(), oracle);
    for (const auto& r : regions)
        EXPECT_LE(std::abs(region_center(r, cfg.grid).lat), 60.0);
}

TEST(Enumerate, MaskAndValidation)
{
    TilingConfig cfg;
    cfg.zooms = {6};
    EXPECT_TRUE(enumerate_regions(cfg, [](const GeoPoint&) { return false; }).empty());
    const auto east = enumerate_regions(cfg, [](const GeoPoint& p) { return p.lon > 0; });
    for (const auto& r : east)
        EXPECT_GT(region_center(r).lon, 0);
    cfg.zooms.clear();
    EXPECT_THROW(enumerate_regions(cfg), invalid_argument_error);
}

TEST(Quadruplets, FourImagesPerRegion)
{
    TilingConfig cfg;
    std::vector<RegionId> regions;
    for (int i = 0; i < 500; ++i)
        regions.push_back({10, i, 7});
    const auto q = build_quadruplets(regions, cfg);
    std::size_t refs = 0;
    for (const auto& x : q) {
        refs += x.images.size();
        ASSERT_EQ(x.images.size(), 4u);
        for (std::size_t y = 0; y < 4; ++y)
            EXPECT_EQ(x.images[y], (ImageRef{x.region, cfg.years[y]}));
    }
    EXPECT_EQ(refs, 2000u);
}

TEST(Timestamp, ParseAndFormat)
{
    const auto t = parse_rfc3339("2021-03-04T05:06:07.250+02:00");
    EXPECT_EQ(format_rfc3339(t), "2021-03-04T03:06:07.250Z");
    EXPECT_EQ(format_rfc3339(parse_rfc3339("1999-12-31T23:59:59Z")), "1999-12-31T23:59:59Z");
    EXPECT_THROW(parse_rfc3339("2021-03-04 05:06:07"), format_error);
    EXPECT_THROW(parse_rfc3339("2021-02-30T00:00:00Z"), format_error);
}

TEST(Catalog, AreaFilterKeepsInRange)
{
    std::vector<QueryRecord> recs;
    for (int i = 0; i < 100; ++i) {
        double area = 10000 + i * 1000;
        if (i < 15)
            area = 100 + i;           // below 5000
        else if (i < 30)
            area = 2e6 + i;           // above 900000
        recs.push_back(make_record("q" + std::to_string(i), 0, i, area));
    }
    EXPECT_EQ(filter_queries_by_area(recs).size(), 70u);
}

TEST(Catalog, EmptyFileGivesEmptyList)
{
    EXPECT_TRUE(parse_query_catalog("").empty());
    EXPECT_TRUE(parse_query_catalog("\n  \n").empty());
}

TEST(Catalog, ErrorsNameLineAndField)
{
    std::string bad = valid_line();
    bad.replace(bad.find("\"area_sqkm\":49000"), 17, "\"area_sqkm\":\"x\"");
    try {
        parse_query_catalog(valid_line() + "\n" + bad + "\n");
        FAIL() << "expected format_error";
    } catch (const format_error& e) {
        const std::string w = e.what();
        EXPECT_NE(w.find("line 2"), std::string::npos) << w;
        EXPECT_NE(w.find("area_sqkm"), std::string::npos) << w;
    }
    std::string missing = valid_line();
    missing.replace(missing.find("\"nadir_lat\":10,"), 15, "");
    try {
        parse_query_catalog(missing);
        FAIL() << "expected format_error";
    } catch (const format_error& e) {
        EXPECT_NE(std::string(e.what()).find("nadir_lat"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("line 1"), std::string::npos);
    }
    EXPECT_THROW(parse_query_catalog("{not json"), format_error);
}

TEST(Catalog, RoundTrip)
{
    std::vector<QueryRecord> recs{make_record("a", 10, 20, 5e4), make_record("b", -30, 170, 7e5)};
    recs[1].focal_length_mm = 800;
    recs[0].timestamp = parse_rfc3339("2015-06-07T08:09:10.123Z");
    const auto text = serialize_query_catalog(recs);
    const auto back = parse_query_catalog(text);
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(serialize_query_catalog(back), text);
    for (std::size_t i = 0; i < 2; ++i) {
        EXPECT_EQ(back[i].id, recs[i].id);
        EXPECT_EQ(back[i].timestamp, recs[i].timestamp);
        EXPECT_EQ(back[i].nadir, recs[i].nadir);
        EXPECT_EQ(back[i].footprint.corners, recs[i].footprint.corners);
        EXPECT_EQ(back[i].focal_length_mm, recs[i].focal_length_mm);
    }
}

TEST(EvalSet, RadiusInvariants)
{
    Rng g(9);
    std::vector<QueryRecord> recs;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        // area-uniform on the sphere within the Mercator band
        const double lat = std::asin(2 * unit_uniform(g) - 1) * 180 / std::numbers::pi;
        if (std::abs(lat) > 80)
            continue;
        recs.push_back(make_record(std::to_string(i), lat, unit_uniform(g) * 360 - 180, 1e4));
    }
    TilingConfig tc;
    tc.zooms = {7};
    const auto regions = enumerate_regions(tc);
    const GeoPoint poi{30, 10};
    const VisibilityParams vis;
    const auto es = build_eval_set("t", poi, recs, regions, vis);
    for (const auto& q : es.queries)
        EXPECT_LE(haversine_km(q.nadir, poi), vis.search_radius_km);
    const double dbr = 2 * visible_distance(vis.earth_radius_km, vis.orbit_altitude_km);
    std::size_t in_db = 0;
    for (const auto& r : regions)
        in_db += haversine_km(region_center(r), poi) <= dbr;
    EXPECT_EQ(es.db_regions.size(), in_db);
    for (const auto& r : es.db_regions)
        EXPECT_LE(haversine_km(region_center(r), poi), dbr);

    // Expected count: density times spherical cap area.
    const double r = vis.earth_radius_km;
    const double cap = 2 * std::numbers::pi * r * r * (1 - std::cos(vis.search_radius_km / r));
    const double expected = n * cap / (4 * std::numbers::pi * r * r);
    EXPECT_NEAR(static_cast<double>(es.queries.size()), expected, 4 * std::sqrt(expected));

    const auto back = eval_set_from_json(eval_set_to_json(es));
    EXPECT_EQ(back.queries.size(), es.queries.size());
    EXPECT_EQ(back.db_regions, es.db_regions);
}

TEST(SyntheticWorld, EveryQueryOverlapsSomeRegion)
{
    SyntheticConfig cfg;
    cfg.num_regions = 60;
    cfg.num_queries = 1000;
    cfg.image_px = 16;
    const auto w = make_synthetic_world(cfg);
    ASSERT_EQ(w.queries.size(), 1000u);
    for (const auto& q : w.queries) {
        bool any = false;
        for (const auto& r : w.regions)
            if (footprints_overlap(region_polygon(r, cfg.grid), q.record.footprint)) {
                any = true;
                break;
            }
        EXPECT_TRUE(any) << q.record.id;
        EXPECT_LE(haversine_km(q.record.nadir, *q.record.footprint.center), cfg.max_nadir_offset_km + 1e-6);
    }
}

TEST(SyntheticWorld, DeterministicAndYearDependent)
{
    SyntheticConfig cfg;
    cfg.num_regions = 20;
    cfg.num_queries = 5;
    cfg.image_px = 16;
    const auto a = make_synthetic_world(cfg), b = make_synthetic_world(cfg);
    EXPECT_EQ(a.regions, b.regions);
    EXPECT_EQ(a.queries[3].image, b.queries[3].image);
    EXPECT_NE(a.render_region(a.regions[0], 2018), a.render_region(a.regions[0], 2021));
}
