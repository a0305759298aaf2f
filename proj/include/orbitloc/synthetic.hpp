#pragma once

// Procedural stand-in for the imagery sources: a seeded texture defined on
// the Mercator plane, a sparse set of database regions grouped in small
// overlapping sites, and astronaut-style queries cut from the same texture.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <set>
#include <string>
#include <vector>

#include "augment.hpp"
#include "database.hpp"
#include "errors.hpp"
#include "geodesy.hpp"
#include "image.hpp"
#include "index.hpp"
#include "parallel.hpp"
#include "random.hpp"
#include "train.hpp"

namespace orbitloc {

struct SyntheticConfig {
    int num_regions = 500;
    int num_queries = 400;
    std::vector<int> years{2018, 2019, 2020, 2021};
    std::vector<int> zooms{10};
    int image_px = 64;
    double lat_limit_deg = 50.0;
    int min_site_size = 2;
    int max_site_size = 5;
    double min_site_separation_km = 600.0;
    // query crop side as a fraction of the region side
    double min_crop = 0.5;
    double max_crop = 1.0;
    double max_nadir_offset_km = 800.0;
    AugmentationRanges query_jitter{0.25, 0.25, 0.25, 0.04, 0.0, 0.08};
    GridSpec grid;
    std::uint64_t seed = 1;

    void validate() const
    {
        if (num_regions < 2 || num_queries < 0 || years.empty() || zooms.empty() || image_px < 8)
            throw config_error("synthetic: invalid sizes");
        if (min_site_size < 1 || max_site_size < min_site_size || max_site_size > 9)
            throw config_error("synthetic: site sizes must satisfy 1 <= min <= max <= 9");
        if (!(min_crop > 0 && max_crop >= min_crop && max_crop <= 1.0))
            throw config_error("synthetic: crop fractions must lie in (0, 1]");
        if (!(lat_limit_deg > 0 && lat_limit_deg < 80))
            throw config_error("synthetic: latitude limit must lie in (0, 80)");
        grid.validate();
    }
};

namespace detail {

inline std::uint64_t mix64(std::uint64_t z)
{
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline double lattice(std::int64_t x, std::int64_t y, std::uint64_t seed)
{
    const auto h = mix64(seed ^ mix64(static_cast<std::uint64_t>(x) * 0x632be59bd9b4e019ull ^
                                      static_cast<std::uint64_t>(y)));
    return static_cast<double>(h >> 11) * 0x1.0p-53;
}

/// Smooth value noise with `freq` lattice cells per unit, periodic in x.
inline double value_noise(double x, double y, std::int64_t freq, std::uint64_t seed)
{
    const double fx = x * static_cast<double>(freq), fy = y * static_cast<double>(freq);
    const double x0 = std::floor(fx), y0 = std::floor(fy);
    const double tx = fx - x0, ty = fy - y0;
    const double sx = tx * tx * (3 - 2 * tx), sy = ty * ty * (3 - 2 * ty);
    auto wrap = [&](std::int64_t i) { return ((i % freq) + freq) % freq; };
    const auto ix = static_cast<std::int64_t>(x0), iy = static_cast<std::int64_t>(y0);
    const double a = lattice(wrap(ix), iy, seed), b = lattice(wrap(ix + 1), iy, seed);
    const double c = lattice(wrap(ix), iy + 1, seed), d = lattice(wrap(ix + 1), iy + 1, seed);
    return (a + (b - a) * sx) + ((c + (d - c) * sx) - (a + (b - a) * sx)) * sy;
}

inline double fbm(double x, double y, std::int64_t base_freq, int octaves, std::uint64_t seed)
{
    double sum = 0, amp = 1, norm = 0;
    std::int64_t f = base_freq;
    for (int o = 0; o < octaves; ++o) {
        sum += amp * value_noise(x, y, f, seed + static_cast<std::uint64_t>(o) * 7919);
        norm += amp;
        amp *= 0.55;
        f *= 2;
    }
    return sum / norm;
}

} // namespace detail

/// The ground texture. Year-to-year differences are a global tint, a
/// brightness shift and a sparse layer of changed land cover.
class SyntheticTexture {
public:
    explicit SyntheticTexture(std::uint64_t seed) : seed_(seed) {}

    std::array<double, 3> sample(double x, double y, int year) const
    {
        const double e = detail::fbm(x, y, 256, 7, seed_);
        const double m = detail::fbm(x, y, 512, 5, seed_ ^ 0xabcdefull);
        const double fine = detail::fbm(x, y, 8192, 3, seed_ ^ 0x1234567ull);
        std::array<double, 3> c;
        if (e < 0.45) {
            const double depth = (0.45 - e) / 0.45;
            c = {20 + 40 * (1 - depth), 60 + 60 * (1 - depth), 110 + 80 * (1 - depth)};
        } else if (e > 0.68) {
            const double t = std::min(1.0, (e - 0.68) / 0.12);
            c = {120 + 110 * t, 115 + 115 * t, 110 + 120 * t};
        } else {
            const std::array<double, 3> desert{200, 175, 120}, forest{40, 100, 45};
            const double t = std::clamp((m - 0.35) / 0.3, 0.0, 1.0);
            for (int k = 0; k < 3; ++k)
                c[k] = desert[k] + (forest[k] - desert[k]) * t;
        }
        for (auto& v : c)
            v *= 0.8 + 0.4 * fine;

        const auto ys = detail::mix64(seed_ ^ static_cast<std::uint64_t>(year) * 0x9e37ull);
        if (e >= 0.45 && detail::fbm(x, y, 2048, 2, ys) > 0.68) {
            // fields and clearings that differ per year
            c = {150 + 40 * fine, 140 + 30 * fine, 60 + 20 * fine};
        }
        const double bright = 0.9 + 0.2 * detail::lattice(year, 1, ys);
        const std::array<double, 3> tint{0.94 + 0.12 * detail::lattice(year, 2, ys),
                                         0.94 + 0.12 * detail::lattice(year, 3, ys),
                                         0.94 + 0.12 * detail::lattice(year, 4, ys)};
        for (int k = 0; k < 3; ++k)
            c[k] = std::clamp(c[k] * bright * tint[k], 0.0, 255.0);
        return c;
    }

    /// Renders a square patch of the Mercator plane. (cx, cy) is the patch
    /// centre, `side` its width, `angle_deg` a counter-clockwise rotation of
    /// the patch on the ground. One sample per pixel centre.
    Image render(double cx, double cy, double side, double angle_deg, int px, int year) const
    {
        Image img(px, px);
        const double a = angle_deg * std::numbers::pi / 180.0;
        const double ca = std::cos(a), sa = std::sin(a);
        for (int v = 0; v < px; ++v)
            for (int u = 0; u < px; ++u) {
                const double lu = ((u + 0.5) / px - 0.5) * side;
                const double lv = ((v + 0.5) / px - 0.5) * side;
                // image y points south like Mercator y
                const double gx = cx + ca * lu + sa * lv;
                const double gy = cy - sa * lu + ca * lv;
                const auto c = sample(gx - std::floor(gx), gy, year);
                for (int k = 0; k < 3; ++k)
                    img.px(u, v)[k] = to_u8(c[k]);
            }
        return img;
    }

private:
    std::uint64_t seed_;
};

struct SyntheticQuery {
    QueryRecord record;
    Image image;
    int year = 0;
    RegionId source_region; // region the crop was cut from
};

struct SyntheticWorld {
    SyntheticConfig config;
    SyntheticTexture texture{0};
    std::vector<RegionId> regions;
    std::vector<int> site_of_region;
    std::vector<std::pair<RegionId, std::size_t>> regions_sorted;
    std::vector<SyntheticQuery> queries;
    std::vector<Image> db_cache; // region-major, year-minor

    Image render_region(const RegionId& r, int year) const
    {
        const auto it = std::lower_bound(regions_sorted.begin(), regions_sorted.end(), std::pair{r, std::size_t{0}});
        const auto yit = std::find(config.years.begin(), config.years.end(), year);
        if (!db_cache.empty() && it != regions_sorted.end() && it->first == r && yit != config.years.end())
            return db_cache[it->second * config.years.size() + static_cast<std::size_t>(yit - config.years.begin())];
        const auto b = region_box(r, config.grid);
        const auto c = b.center();
        return texture.render(c.x, c.y, b.x1 - b.x0, 0.0, config.image_px, year);
    }

    ImageLoader loader() const
    {
        return [this](const DbImageRef& ref) { return render_region(ref.region, ref.year); };
    }

    std::vector<DbImageRef> db_images(std::span<const int> years) const
    {
        std::vector<DbImageRef> out;
        for (const auto& r : regions)
            for (const int y : years)
                out.push_back({r, y});
        return out;
    }

    std::vector<TrainingQuadruplet> training_data() const
    {
        std::vector<TrainingQuadruplet> out(regions.size());
        for (std::size_t i = 0; i < regions.size(); ++i) {
            out[i].region = regions[i];
            for (const int y : config.years)
                out[i].images.push_back(render_region(regions[i], y));
        }
        return out;
    }

    std::vector<QueryRecord> query_records() const
    {
        std::vector<QueryRecord> out;
        for (const auto& q : queries)
            out.push_back(q.record);
        return out;
    }
};

namespace detail {

inline std::int64_t clamp_cell(std::int64_t v, std::int64_t n) { return std::clamp<std::int64_t>(v, 0, n - 1); }

/// Footprint of a rotated square patch, corners in image order TL, TR, BR, BL.
inline Footprint patch_footprint(double cx, double cy, double side, double angle_deg)
{
    const double a = angle_deg * std::numbers::pi / 180.0;
    const double ca = std::cos(a), sa = std::sin(a);
    const std::array<std::array<double, 2>, 4> local{{{-0.5, -0.5}, {0.5, -0.5}, {0.5, 0.5}, {-0.5, 0.5}}};
    Footprint f;
    for (std::size_t i = 0; i < 4; ++i) {
        const double lu = local[i][0] * side, lv = local[i][1] * side;
        f.corners[i] = mercator_inverse({cx + ca * lu + sa * lv, cy - sa * lu + ca * lv});
    }
    f.center = mercator_inverse({cx, cy});
    return f;
}

/// Point at `dist_km` from `p` along initial bearing `bearing_rad`.
inline GeoPoint destination(const GeoPoint& p, double dist_km, double bearing_rad)
{
    const double d = dist_km / kEarthRadiusKm;
    const double la = deg2rad(p.lat), lo = deg2rad(p.lon);
    const double la2 = std::asin(std::sin(la) * std::cos(d) + std::cos(la) * std::sin(d) * std::cos(bearing_rad));
    const double lo2 =
        lo + std::atan2(std::sin(bearing_rad) * std::sin(d) * std::cos(la), std::cos(d) - std::sin(la) * std::sin(la2));
    return GeoPoint::make(rad2deg(la2), rad2deg(lo2));
}

} // namespace detail

/// Builds the world: sites are scattered at least `min_site_separation_km`
/// apart; each holds a few mutually overlapping half-stride neighbours.
inline SyntheticWorld make_synthetic_world(const SyntheticConfig& cfg, int jobs = 1)
{
    cfg.validate();
    SyntheticWorld w;
    w.config = cfg;
    w.texture = SyntheticTexture(detail::mix64(cfg.seed));
    Rng gen(cfg.seed);

    std::vector<GeoPoint> site_centres;
    std::set<RegionId> used;
    const double s_lo = std::sin(deg2rad(-cfg.lat_limit_deg)), s_hi = std::sin(deg2rad(cfg.lat_limit_deg));
    int site = 0;
    int attempts = 0;
    while (static_cast<int>(w.regions.size()) < cfg.num_regions) {
        if (++attempts > 100000)
            throw config_error("synthetic: cannot place " + std::to_string(cfg.num_regions) + " regions");
        // area-uniform site centre
        const double lat = rad2deg(std::asin(s_lo + (s_hi - s_lo) * unit_uniform(gen)));
        const double lon = -180.0 + 360.0 * unit_uniform(gen);
        const auto centre = GeoPoint::make(lat, lon);
        const int zoom = cfg.zooms[uniform_index(gen, cfg.zooms.size())];
        const int size = cfg.min_site_size +
                         static_cast<int>(uniform_index(gen, static_cast<std::size_t>(cfg.max_site_size - cfg.min_site_size + 1)));
        if (std::any_of(site_centres.begin(), site_centres.end(),
                        [&](const GeoPoint& c) { return haversine_km(c, centre) < cfg.min_site_separation_km; }))
            continue;

        const auto m = mercator_forward(centre);
        const double half = cfg.grid.side(zoom) / 2;
        const std::int64_t n = cfg.grid.cells(zoom);
        const std::int64_t bx = detail::clamp_cell(static_cast<std::int64_t>(std::floor(m.x / half)) - 1, n);
        const std::int64_t by = detail::clamp_cell(static_cast<std::int64_t>(std::floor(m.y / half)) - 1, n);
        std::array<std::array<int, 2>, 8> offs{{{1, 0}, {0, 1}, {1, 1}, {-1, 0}, {0, -1}, {-1, -1}, {1, -1}, {-1, 1}}};
        shuffle(std::span<std::array<int, 2>>(offs), gen);
        std::vector<RegionId> members{{zoom, bx, by}};
        for (const auto& o : offs) {
            if (static_cast<int>(members.size()) >= size)
                break;
            const RegionId r{zoom, bx + o[0], by + o[1]};
            if (region_in_grid(r, cfg.grid))
                members.push_back(r);
        }
        for (const auto& r : members) {
            if (static_cast<int>(w.regions.size()) >= cfg.num_regions)
                break;
            if (!used.insert(r).second)
                continue;
            w.regions.push_back(r);
            w.site_of_region.push_back(site);
        }
        site_centres.push_back(centre);
        ++site;
    }

    for (std::size_t i = 0; i < w.regions.size(); ++i)
        w.regions_sorted.push_back({w.regions[i], i});
    std::sort(w.regions_sorted.begin(), w.regions_sorted.end());
    std::vector<Image> cache(w.regions.size() * cfg.years.size());
    parallel_for(w.regions.size(), jobs, [&](std::size_t i) {
        for (std::size_t y = 0; y < cfg.years.size(); ++y)
            cache[i * cfg.years.size() + y] = w.render_region(w.regions[i], cfg.years[y]);
    });
    w.db_cache = std::move(cache);

    const auto base_time = parse_rfc3339("2022-01-01T00:00:00Z");
    for (int qi = 0; qi < cfg.num_queries; ++qi) {
        const auto& src = w.regions[uniform_index(gen, w.regions.size())];
        const auto b = region_box(src, cfg.grid);
        const double side = b.x1 - b.x0;
        const double frac = cfg.min_crop + (cfg.max_crop - cfg.min_crop) * unit_uniform(gen);
        const double crop = frac * side;
        const double slack = (side - crop) / 2;
        const double cx = b.center().x + slack * (2 * unit_uniform(gen) - 1);
        const double cy = b.center().y + slack * (2 * unit_uniform(gen) - 1);
        const double angle = 360.0 * unit_uniform(gen);
        const int year = cfg.years[uniform_index(gen, cfg.years.size())];

        SyntheticQuery q;
        q.year = year;
        q.source_region = src;
        auto img = w.texture.render(cx, cy, crop, angle, cfg.image_px, year);
        auto jitter = sample_augmentation(cfg.query_jitter, gen);
        q.image = apply_augmentation(img, jitter);

        auto& rec = q.record;
        char id[32];
        std::snprintf(id, sizeof id, "SYN-%05d", qi);
        rec.id = id;
        rec.footprint = detail::patch_footprint(cx, cy, crop, angle);
        rec.nadir = detail::destination(*rec.footprint.center, cfg.max_nadir_offset_km * unit_uniform(gen),
                                        2 * std::numbers::pi * unit_uniform(gen));
        rec.timestamp = base_time + std::chrono::milliseconds(static_cast<std::int64_t>(uniform_index(gen, 86400000ull * 365)));
        const double lat_c = rec.footprint.center->lat;
        const double km_per_unit = 2 * std::numbers::pi * kEarthRadiusKm * std::cos(deg2rad(lat_c));
        rec.area_sqkm = (crop * km_per_unit) * (crop * km_per_unit);
        rec.focal_length_mm = 400.0;
        w.queries.push_back(std::move(q));
    }
    return w;
}

} // namespace orbitloc
