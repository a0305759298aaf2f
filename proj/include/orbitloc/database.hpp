#pragma once

// Region grid enumeration, year quadruplets, the JSONL query catalog and
// POI-centred evaluation sets.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "errors.hpp"
#include "geodesy.hpp"
#include "io.hpp"

namespace orbitloc {

struct TilingConfig {
    std::vector<int> zooms{9, 10, 11};
    double lat_limit_deg = 60.0;
    std::vector<int> years{2018, 2019, 2020, 2021};
    int image_px = 1024;
    GridSpec grid{4};

    void validate() const
    {
        if (zooms.empty())
            throw invalid_argument_error("tiling: zoom set is empty");
        for (const int z : zooms)
            if (z < 0 || z > 24 || (1 << z) < grid.span_tiles)
                throw config_error("tiling: zoom " + std::to_string(z) + " too coarse for the region span");
        if (years.empty())
            throw config_error("tiling: no years configured");
        if (std::set<int>(years.begin(), years.end()).size() != years.size())
            throw config_error("tiling: years must be distinct");
        if (image_px < 1 || (image_px & (image_px - 1)) != 0)
            throw config_error("tiling: image_px must be a positive power of two");
        if (!(lat_limit_deg > 0 && lat_limit_deg <= kMercatorMaxLat))
            throw config_error("tiling: latitude limit must be in (0, 85.05]");
        grid.validate();
    }
};

/// Predicate selecting which region centres enter the database.
using LandMask = std::function<bool(const GeoPoint&)>;

inline LandMask accept_all() { return [](const GeoPoint&) { return true; }; }

/// Every half-stride region whose centre lies within the latitude band and
/// passes the mask, ordered by (zoom, iy, ix).
inline std::vector<RegionId> enumerate_regions(const TilingConfig& cfg, const LandMask& mask = accept_all())
{
    if (cfg.zooms.empty())
        throw invalid_argument_error("enumerate_regions: empty zoom set");
    cfg.validate();
    std::vector<int> zooms = cfg.zooms;
    std::sort(zooms.begin(), zooms.end());
    zooms.erase(std::unique(zooms.begin(), zooms.end()), zooms.end());

    const double y_top = mercator_forward({cfg.lat_limit_deg, 0}).y;
    const double y_bot = mercator_forward({-cfg.lat_limit_deg, 0}).y;
    std::vector<RegionId> out;
    for (const int z : zooms) {
        const std::int64_t n = cfg.grid.cells(z);
        const double half = cfg.grid.side(z) / 2;
        for (std::int64_t iy = 0; iy < n; ++iy) {
            const double yc = static_cast<double>(iy + 1) * half;
            if (yc < y_top || yc > y_bot)
                continue;
            const double lat = mercator_inverse({0.5, yc}).lat;
            for (std::int64_t ix = 0; ix < n; ++ix) {
                const double lon = (static_cast<double>(ix + 1) * half) * 360.0 - 180.0;
                if (mask(GeoPoint::make(lat, lon)))
                    out.push_back({z, ix, iy});
            }
        }
    }
    return out;
}

struct ImageRef {
    RegionId region;
    int year = 0;
    friend bool operator==(const ImageRef&, const ImageRef&) = default;
};

struct Quadruplet {
    RegionId region;
    std::vector<ImageRef> images; // one per configured year, in order
};

inline std::vector<Quadruplet> build_quadruplets(std::span<const RegionId> regions, const TilingConfig& cfg)
{
    std::vector<Quadruplet> out;
    out.reserve(regions.size());
    for (const auto& r : regions) {
        Quadruplet q{r, {}};
        for (const int y : cfg.years)
            q.images.push_back({r, y});
        out.push_back(std::move(q));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Timestamps (RFC 3339, stored as UTC milliseconds)

using Timestamp = std::chrono::sys_time<std::chrono::milliseconds>;

inline Timestamp parse_rfc3339(const std::string& s)
{
    int Y, M, D, h, m, sec, n = 0;
    if (std::sscanf(s.c_str(), "%4d-%2d-%2d%*1[Tt ]%2d:%2d:%2d%n", &Y, &M, &D, &h, &m, &sec, &n) != 6)
        throw format_error("bad RFC 3339 timestamp: " + s);
    std::size_t pos = static_cast<std::size_t>(n);
    int ms = 0;
    if (pos < s.size() && s[pos] == '.') {
        ++pos;
        int digits = 0;
        while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) {
            if (digits < 3)
                ms = ms * 10 + (s[pos] - '0');
            ++digits;
            ++pos;
        }
        if (digits == 0)
            throw format_error("bad fractional seconds: " + s);
        for (; digits < 3; ++digits)
            ms *= 10;
    }
    int offset_min = 0;
    if (pos < s.size() && (s[pos] == 'Z' || s[pos] == 'z')) {
        ++pos;
    } else if (pos < s.size() && (s[pos] == '+' || s[pos] == '-')) {
        int oh, om;
        if (std::sscanf(s.c_str() + pos + 1, "%2d:%2d", &oh, &om) != 2)
            throw format_error("bad UTC offset: " + s);
        offset_min = (s[pos] == '-' ? -1 : 1) * (oh * 60 + om);
        pos += 6;
    } else {
        throw format_error("timestamp lacks a UTC offset: " + s);
    }
    if (pos != s.size())
        throw format_error("trailing characters in timestamp: " + s);
    using namespace std::chrono;
    const year_month_day ymd{year{Y}, month{static_cast<unsigned>(M)}, day{static_cast<unsigned>(D)}};
    if (!ymd.ok() || h > 23 || m > 59 || sec > 60)
        throw format_error("invalid calendar date: " + s);
    return sys_days{ymd} + hours{h} + minutes{m} + seconds{sec} + milliseconds{ms} - minutes{offset_min};
}

/// Canonical UTC form: YYYY-MM-DDTHH:MM:SS[.mmm]Z.
inline std::string format_rfc3339(Timestamp t)
{
    using namespace std::chrono;
    const auto day = floor<days>(t);
    const year_month_day ymd{day};
    const long long ms = (t - day).count();
    char buf[40];
    const long long secs = ms / 1000;
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02lld:%02lld:%02lld", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()), secs / 3600, (secs / 60) % 60,
                  secs % 60);
    std::string out = buf;
    if (ms % 1000 != 0) {
        std::snprintf(buf, sizeof buf, ".%03lld", ms % 1000);
        out += buf;
    }
    return out + "Z";
}

// ---------------------------------------------------------------------------
// Query catalog

struct QueryRecord {
    std::string id;
    GeoPoint nadir;
    Timestamp timestamp{};
    Footprint footprint;
    double area_sqkm = 0.0;
    std::optional<double> focal_length_mm;
};

inline QueryRecord parse_query_record(const nlohmann::json& j)
{
    auto need = [&](const char* key) -> const nlohmann::json& {
        if (!j.contains(key) || j.at(key).is_null())
            throw format_error(std::string("missing required field '") + key + "'");
        return j.at(key);
    };
    auto num = [&](const char* key) {
        const auto& v = need(key);
        if (!v.is_number())
            throw format_error(std::string("field '") + key + "' must be a number");
        return v.get<double>();
    };
    QueryRecord r;
    const auto& id = need("id");
    r.id = id.is_string() ? id.get<std::string>() : id.dump();
    r.nadir = GeoPoint::make(num("nadir_lat"), num("nadir_lon"));
    const auto& ts = need("timestamp");
    if (!ts.is_string())
        throw format_error("field 'timestamp' must be a string");
    r.timestamp = parse_rfc3339(ts.get<std::string>());
    const auto& c = need("corners");
    if (!c.is_array() || c.size() != 8)
        throw format_error("field 'corners' must hold 8 numbers");
    for (std::size_t i = 0; i < 4; ++i) {
        if (!c[2 * i].is_number() || !c[2 * i + 1].is_number())
            throw format_error("field 'corners' must hold 8 numbers");
        r.footprint.corners[i] = GeoPoint::make(c[2 * i].get<double>(), c[2 * i + 1].get<double>());
    }
    r.footprint.center = GeoPoint::make(num("center_lat"), num("center_lon"));
    r.area_sqkm = num("area_sqkm");
    if (!(r.area_sqkm > 0))
        throw format_error("field 'area_sqkm' must be > 0");
    if (j.contains("focal_length_mm") && !j.at("focal_length_mm").is_null()) {
        if (!j.at("focal_length_mm").is_number())
            throw format_error("field 'focal_length_mm' must be a number");
        r.focal_length_mm = j.at("focal_length_mm").get<double>();
    }
    r.footprint.validate();
    return r;
}

inline nlohmann::json query_record_to_json(const QueryRecord& r)
{
    nlohmann::json corners = nlohmann::json::array();
    for (const auto& p : r.footprint.corners) {
        corners.push_back(p.lat);
        corners.push_back(p.lon);
    }
    const auto c = r.footprint.center_or_centroid();
    nlohmann::json j = {{"id", r.id},
                        {"nadir_lat", r.nadir.lat},
                        {"nadir_lon", r.nadir.lon},
                        {"timestamp", format_rfc3339(r.timestamp)},
                        {"corners", corners},
                        {"center_lat", c.lat},
                        {"center_lon", c.lon},
                        {"area_sqkm", r.area_sqkm}};
    if (r.focal_length_mm)
        j["focal_length_mm"] = *r.focal_length_mm;
    return j;
}

/// Parses JSONL text; blank lines are skipped. Errors name the 1-based line.
inline std::vector<QueryRecord> parse_query_catalog(const std::string& text)
{
    std::vector<QueryRecord> out;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos)
            continue;
        try {
            out.push_back(parse_query_record(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw format_error("catalog line " + std::to_string(lineno) + ": malformed JSON (" + e.what() + ")");
        } catch (const error& e) {
            throw format_error("catalog line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

inline std::vector<QueryRecord> ingest_query_catalog(const fs::path& path) { return parse_query_catalog(read_text(path)); }

inline std::string serialize_query_catalog(std::span<const QueryRecord> records)
{
    std::string out;
    for (const auto& r : records)
        out += query_record_to_json(r).dump() + "\n";
    return out;
}

inline std::vector<QueryRecord> filter_queries_by_area(std::span<const QueryRecord> records, double min_sqkm = 5000.0,
                                                       double max_sqkm = 900000.0)
{
    std::vector<QueryRecord> out;
    for (const auto& r : records)
        if (r.area_sqkm >= min_sqkm && r.area_sqkm <= max_sqkm)
            out.push_back(r);
    return out;
}

// ---------------------------------------------------------------------------
// Evaluation sets

struct EvalSet {
    std::string name;
    GeoPoint poi;
    std::vector<QueryRecord> queries;
    std::vector<RegionId> db_regions;
};

/// Queries whose nadir lies within the search radius of the POI, database
/// regions whose centre lies within twice the visible distance.
inline EvalSet build_eval_set(const std::string& name, const GeoPoint& poi, std::span<const QueryRecord> records,
                              std::span<const RegionId> regions, const VisibilityParams& vis, const GridSpec& grid = {})
{
    vis.validate();
    EvalSet es{name, poi, {}, {}};
    for (const auto& r : records)
        if (haversine_km(r.nadir, poi, vis.earth_radius_km) <= vis.search_radius_km)
            es.queries.push_back(r);
    const double db_radius = 2.0 * visible_distance(vis.earth_radius_km, vis.orbit_altitude_km);
    for (const auto& r : regions)
        if (haversine_km(region_center(r, grid), poi, vis.earth_radius_km) <= db_radius)
            es.db_regions.push_back(r);
    return es;
}

inline nlohmann::json eval_set_to_json(const EvalSet& es)
{
    nlohmann::json regions = nlohmann::json::array();
    for (const auto& r : es.db_regions)
        regions.push_back({r.zoom, r.ix, r.iy});
    nlohmann::json queries = nlohmann::json::array();
    for (const auto& q : es.queries)
        queries.push_back(query_record_to_json(q));
    return {{"name", es.name}, {"poi", {es.poi.lat, es.poi.lon}}, {"queries", queries}, {"db_regions", regions}};
}

inline EvalSet eval_set_from_json(const nlohmann::json& j)
{
    try {
        EvalSet es;
        es.name = j.at("name").get<std::string>();
        es.poi = GeoPoint::make(j.at("poi").at(0).get<double>(), j.at("poi").at(1).get<double>());
        for (const auto& q : j.at("queries"))
            es.queries.push_back(parse_query_record(q));
        for (const auto& r : j.at("db_regions"))
            es.db_regions.push_back({r.at(0).get<int>(), r.at(1).get<std::int64_t>(), r.at(2).get<std::int64_t>()});
        return es;
    } catch (const nlohmann::json::exception& e) {
        throw format_error(std::string("eval set: ") + e.what());
    }
}

} // namespace orbitloc
