#pragma once

// Geometry and projection math: visibility distance, spherical Web Mercator,
// the half-stride region grid, footprint overlap and region relations.
//
// All polygon work happens in the normalized Mercator plane ([0,1]^2, y grows
// southwards as in XYZ tiling). Every function here is pure.

#include <algorithm>
#include <array>
#include <cmath>
#include <compare>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"

namespace orbitloc {

inline constexpr double kEarthRadiusKm = 6371.0;
inline constexpr double kIssAltitudeKm = 450.0;
inline constexpr double kSearchRadiusKm = 2500.0;
// atan(sinh(pi)) in degrees.
inline constexpr double kMercatorMaxLat = 85.05112877980659;

struct GeoPoint {
    double lat = 0.0;
    double lon = 0.0;

    /// Validates latitude and wraps longitude into [-180, 180).
    static GeoPoint make(double lat, double lon)
    {
        if (!std::isfinite(lat) || !std::isfinite(lon))
            throw invalid_argument_error("non-finite coordinate");
        if (lat < -90.0 || lat > 90.0)
            throw out_of_range_error("latitude out of range: " + std::to_string(lat));
        double l = std::fmod(lon + 180.0, 360.0);
        if (l < 0.0)
            l += 360.0;
        return GeoPoint{lat, l - 180.0};
    }

    friend bool operator==(const GeoPoint&, const GeoPoint&) = default;
};

struct VisibilityParams {
    double earth_radius_km = kEarthRadiusKm;
    double orbit_altitude_km = kIssAltitudeKm;
    double search_radius_km = kSearchRadiusKm;

    void validate() const;
};

/// Ground distance to the horizon seen from altitude h above a sphere of
/// radius R: sqrt(2Rh + h^2).
inline double visible_distance(double radius_km, double altitude_km)
{
    if (!std::isfinite(radius_km) || !std::isfinite(altitude_km) || radius_km <= 0.0 || altitude_km < 0.0)
        throw invalid_argument_error("visible_distance: need finite radius > 0 and altitude >= 0");
    return std::sqrt(2.0 * radius_km * altitude_km + altitude_km * altitude_km);
}

inline void VisibilityParams::validate() const
{
    if (!std::isfinite(search_radius_km) || search_radius_km <= 0.0)
        throw config_error("visibility: search_radius_km must be > 0");
    const double d = visible_distance(earth_radius_km, orbit_altitude_km);
    if (search_radius_km < d - 100.0)
        throw config_error("visibility: search radius is far below the visible distance");
}

inline double deg2rad(double d) { return d * std::numbers::pi / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / std::numbers::pi; }

/// Great-circle distance on a sphere.
inline double haversine_km(const GeoPoint& a, const GeoPoint& b, double radius_km = kEarthRadiusKm)
{
    const double p1 = deg2rad(a.lat), p2 = deg2rad(b.lat);
    const double dp = p2 - p1;
    const double dl = deg2rad(b.lon - a.lon);
    const double s = std::sin(dp / 2) * std::sin(dp / 2) + std::cos(p1) * std::cos(p2) * std::sin(dl / 2) * std::sin(dl / 2);
    return 2.0 * radius_km * std::asin(std::min(1.0, std::sqrt(s)));
}

// ---------------------------------------------------------------------------
// Web Mercator

struct MercatorPoint {
    double x = 0.0;
    double y = 0.0;
    friend bool operator==(const MercatorPoint&, const MercatorPoint&) = default;
};

inline MercatorPoint mercator_forward(const GeoPoint& p)
{
    if (std::abs(p.lat) > kMercatorMaxLat + 1e-9)
        throw out_of_range_error("latitude beyond Mercator cap: " + std::to_string(p.lat));
    const double lat = std::clamp(p.lat, -kMercatorMaxLat, kMercatorMaxLat);
    const double x = (p.lon + 180.0) / 360.0;
    const double y = 0.5 - std::asinh(std::tan(deg2rad(lat))) / (2.0 * std::numbers::pi);
    return {x, y};
}

/// Inverse projection. x outside [0,1] is accepted and wrapped in longitude.
inline GeoPoint mercator_inverse(const MercatorPoint& m)
{
    const double lon = m.x * 360.0 - 180.0;
    const double lat = rad2deg(std::atan(std::sinh(std::numbers::pi * (1.0 - 2.0 * m.y))));
    return GeoPoint::make(lat, lon);
}

// ---------------------------------------------------------------------------
// Region grid

/// Geographic extent of one region, measured in XYZ tiles of its own zoom.
/// With 256 px tiles a 1024 px region image spans 4 tiles.
struct GridSpec {
    int span_tiles = 4;

    double side(int zoom) const { return std::ldexp(static_cast<double>(span_tiles), -zoom); }
    /// Number of half-stride positions along one axis at `zoom`.
    std::int64_t cells(int zoom) const
    {
        return (std::int64_t{1} << (zoom + 1)) / span_tiles - 1;
    }
    void validate() const
    {
        if (span_tiles < 1 || (span_tiles & (span_tiles - 1)) != 0)
            throw config_error("grid: span_tiles must be a positive power of two");
    }
};

struct RegionId {
    int zoom = 0;
    std::int64_t ix = 0;
    std::int64_t iy = 0;

    friend auto operator<=>(const RegionId&, const RegionId&) = default;

    std::string str() const
    {
        std::ostringstream os;
        os << zoom << '/' << ix << '/' << iy;
        return os.str();
    }
};

/// Packs a region into 64 bits: 8 bits zoom, 28 bits ix, 28 bits iy.
inline std::uint64_t pack_region(const RegionId& r)
{
    return (static_cast<std::uint64_t>(r.zoom) << 56) | (static_cast<std::uint64_t>(r.ix) << 28) |
           static_cast<std::uint64_t>(r.iy);
}

inline RegionId unpack_region(std::uint64_t v)
{
    constexpr std::uint64_t mask = (std::uint64_t{1} << 28) - 1;
    return RegionId{static_cast<int>(v >> 56), static_cast<std::int64_t>((v >> 28) & mask),
                    static_cast<std::int64_t>(v & mask)};
}

struct MercatorBox {
    double x0, y0, x1, y1;
    double area() const { return (x1 - x0) * (y1 - y0); }
    MercatorPoint center() const { return {(x0 + x1) / 2, (y0 + y1) / 2}; }
};

inline bool region_in_grid(const RegionId& r, const GridSpec& grid = {})
{
    if (r.zoom < 0 || r.zoom > 24 || (std::int64_t{1} << r.zoom) < grid.span_tiles)
        return false;
    const auto n = grid.cells(r.zoom);
    return r.ix >= 0 && r.iy >= 0 && r.ix < n && r.iy < n;
}

inline MercatorBox region_box(const RegionId& r, const GridSpec& grid = {})
{
    if (!region_in_grid(r, grid))
        throw invalid_argument_error("region outside grid: " + r.str());
    const double s = grid.side(r.zoom);
    const double h = s / 2;
    const double x0 = static_cast<double>(r.ix) * h;
    const double y0 = static_cast<double>(r.iy) * h;
    return {x0, y0, x0 + s, y0 + s};
}

inline GeoPoint region_center(const RegionId& r, const GridSpec& grid = {})
{
    return mercator_inverse(region_box(r, grid).center());
}

/// Exact spherical area of the projected square.
inline double region_area_sqkm(const RegionId& r, const GridSpec& grid = {}, double radius_km = kEarthRadiusKm)
{
    const auto b = region_box(r, grid);
    const double lat_top = mercator_inverse({b.x0, b.y0}).lat;
    const double lat_bot = mercator_inverse({b.x0, b.y1}).lat;
    const double dlon = (b.x1 - b.x0) * 2.0 * std::numbers::pi;
    return radius_km * radius_km * dlon * (std::sin(deg2rad(lat_top)) - std::sin(deg2rad(lat_bot)));
}

// ---------------------------------------------------------------------------
// Plane polygons

namespace detail {

using Polygon = std::vector<MercatorPoint>;

inline double cross(const MercatorPoint& o, const MercatorPoint& a, const MercatorPoint& b)
{
    return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

inline double signed_area(std::span<const MercatorPoint> p)
{
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const auto& a = p[i];
        const auto& b = p[(i + 1) % p.size()];
        s += a.x * b.y - b.x * a.y;
    }
    return s / 2;
}

// Sutherland-Hodgman clip of `subject` against a convex CCW `clip` polygon.
inline Polygon clip_convex(Polygon subject, std::span<const MercatorPoint> clip)
{
    for (std::size_t e = 0; e < clip.size() && !subject.empty(); ++e) {
        const auto& a = clip[e];
        const auto& b = clip[(e + 1) % clip.size()];
        Polygon out;
        out.reserve(subject.size() + 2);
        for (std::size_t i = 0; i < subject.size(); ++i) {
            const auto& p = subject[i];
            const auto& q = subject[(i + 1) % subject.size()];
            const double cp = cross(a, b, p);
            const double cq = cross(a, b, q);
            if (cp >= 0)
                out.push_back(p);
            if ((cp >= 0) != (cq >= 0)) {
                const double t = cp / (cp - cq);
                out.push_back({p.x + t * (q.x - p.x), p.y + t * (q.y - p.y)});
            }
        }
        subject = std::move(out);
    }
    return subject;
}

inline bool segments_cross(const MercatorPoint& a, const MercatorPoint& b, const MercatorPoint& c, const MercatorPoint& d)
{
    const double d1 = cross(c, d, a), d2 = cross(c, d, b);
    const double d3 = cross(a, b, c), d4 = cross(a, b, d);
    return ((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) && ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0));
}

/// Splits a simple CCW quadrilateral into two CCW triangles along an
/// interior diagonal.
inline std::array<std::array<MercatorPoint, 3>, 2> triangulate(const std::array<MercatorPoint, 4>& q)
{
    // Diagonal 0-2 is interior iff 1 and 3 lie on opposite sides of it and
    // both triangles keep the polygon's orientation.
    if (cross(q[0], q[1], q[2]) > 0 && cross(q[0], q[2], q[3]) > 0)
        return {{{q[0], q[1], q[2]}, {q[0], q[2], q[3]}}};
    return {{{q[1], q[2], q[3]}, {q[1], q[3], q[0]}}};
}

} // namespace detail

// ---------------------------------------------------------------------------
// Footprints

/// A geographic quadrilateral (region extent or photo ground truth).
struct Footprint {
    std::array<GeoPoint, 4> corners{};
    std::optional<GeoPoint> center;

    /// Corners in the Mercator plane, longitude-unwrapped around corner 0
    /// and re-ordered counter-clockwise.
    std::array<MercatorPoint, 4> plane_quad() const
    {
        std::array<MercatorPoint, 4> q{};
        for (std::size_t i = 0; i < 4; ++i)
            q[i] = mercator_forward(corners[i]);
        for (std::size_t i = 1; i < 4; ++i) {
            while (q[i].x - q[0].x > 0.5)
                q[i].x -= 1.0;
            while (q[0].x - q[i].x > 0.5)
                q[i].x += 1.0;
        }
        if (detail::signed_area(q) < 0)
            std::swap(q[1], q[3]);
        return q;
    }

    double plane_area() const { return std::abs(detail::signed_area(plane_quad())); }

    /// Checks the invariants: simple, non-degenerate quadrilateral.
    void validate() const
    {
        const auto q = plane_quad();
        if (!(std::abs(detail::signed_area(q)) > 1e-18))
            throw invalid_argument_error("degenerate footprint (zero area)");
        if (detail::segments_cross(q[0], q[1], q[2], q[3]) || detail::segments_cross(q[1], q[2], q[3], q[0]))
            throw invalid_argument_error("self-intersecting footprint");
    }

    GeoPoint center_or_centroid() const
    {
        if (center)
            return *center;
        const auto q = plane_quad();
        MercatorPoint c{0, 0};
        for (const auto& p : q) {
            c.x += p.x / 4;
            c.y += p.y / 4;
        }
        return mercator_inverse(c);
    }
};

inline Footprint region_polygon(const RegionId& r, const GridSpec& grid = {})
{
    const auto b = region_box(r, grid);
    Footprint f;
    f.corners = {mercator_inverse({b.x0, b.y0}), mercator_inverse({b.x1, b.y0}), mercator_inverse({b.x1, b.y1}),
                 mercator_inverse({b.x0, b.y1})};
    f.center = mercator_inverse(b.center());
    return f;
}

/// Positive-area intersection in the Mercator plane. Footprints that cross
/// the antimeridian are unwrapped, and each operand is also tested shifted by
/// one world width, which is the same as splitting it at +-180.
inline double intersection_area(const Footprint& a, const Footprint& b)
{
    const auto qa = a.plane_quad();
    const auto qb = b.plane_quad();
    const auto ta = detail::triangulate(qa);
    double total = 0.0;
    for (const double shift : {-1.0, 0.0, 1.0}) {
        auto qs = qb;
        for (auto& p : qs)
            p.x += shift;
        const auto tb = detail::triangulate(qs);
        for (const auto& x : ta)
            for (const auto& y : tb) {
                auto poly = detail::clip_convex(detail::Polygon(x.begin(), x.end()), y);
                if (poly.size() >= 3)
                    total += std::abs(detail::signed_area(poly));
            }
    }
    return total;
}

inline bool footprints_overlap(const Footprint& a, const Footprint& b)
{
    a.validate();
    b.validate();
    const double tol = 1e-9 * std::min(a.plane_area(), b.plane_area());
    return intersection_area(a, b) > tol;
}

/// Point-in-footprint test in the Mercator plane (boundary counts as inside).
inline bool footprint_contains(const Footprint& f, const GeoPoint& p)
{
    const auto q = f.plane_quad();
    const auto m = mercator_forward(p);
    for (const auto t : detail::triangulate(q))
        for (const double shift : {-1.0, 0.0, 1.0}) {
            const MercatorPoint s{m.x + shift, m.y};
            if (detail::cross(t[0], t[1], s) >= 0 && detail::cross(t[1], t[2], s) >= 0 &&
                detail::cross(t[2], t[0], s) >= 0)
                return true;
        }
    return false;
}

// ---------------------------------------------------------------------------
// Relations

enum class Relation : std::uint8_t { positive, neutral, negative };

inline const char* to_string(Relation r)
{
    switch (r) {
    case Relation::positive: return "positive";
    case Relation::neutral: return "neutral";
    case Relation::negative: return "negative";
    }
    return "?";
}

/// Positive for the same region, Neutral when the two squares share
/// positive Mercator area, Negative otherwise.
inline Relation region_relation(const RegionId& a, const RegionId& b, const GridSpec& grid = {})
{
    if (a == b)
        return Relation::positive;
    const auto ba = region_box(a, grid);
    const auto bb = region_box(b, grid);
    const double w = std::min(ba.x1, bb.x1) - std::max(ba.x0, bb.x0);
    const double h = std::min(ba.y1, bb.y1) - std::max(ba.y0, bb.y0);
    return (w > 0 && h > 0) ? Relation::neutral : Relation::negative;
}

/// The neutral-aware indicator: 0 for pairs that intersect without being
/// equal, 1 otherwise.
inline int neutral_aware_indicator(Relation r) { return r == Relation::neutral ? 0 : 1; }

} // namespace orbitloc
