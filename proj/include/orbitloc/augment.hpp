#pragma once

// Raw-RGB augmentations: channel-wise affine colour jitter, arbitrary-angle
// rotation with reflect padding, and a 4-corner perspective warp.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

#include "errors.hpp"
#include "image.hpp"
#include "random.hpp"

namespace orbitloc {

struct AugmentationRanges {
    double brightness = 0.3;
    double contrast = 0.3;
    double saturation = 0.3;
    double hue = 0.05;
    double rotation_deg = 180.0; // angle drawn from [-r, r)
    double perspective = 0.1;    // max corner displacement, fraction of side

    static AugmentationRanges none() { return {0, 0, 0, 0, 0, 0}; }
};

struct AugmentationParams {
    double brightness = 0.0;
    double contrast = 0.0;
    double saturation = 0.0;
    double hue = 0.0;
    double rotation_deg = 0.0;
    // Source-corner displacement (dx, dy) for corners TL, TR, BR, BL, as a
    // fraction of the image side.
    std::array<std::array<double, 2>, 4> corners{};

    friend bool operator==(const AugmentationParams&, const AugmentationParams&) = default;
};

inline AugmentationParams sample_augmentation(const AugmentationRanges& r, Rng& gen)
{
    auto sym = [&](double m) { return m * (2.0 * unit_uniform(gen) - 1.0); };
    AugmentationParams p;
    p.brightness = sym(r.brightness);
    p.contrast = sym(r.contrast);
    p.saturation = sym(r.saturation);
    p.hue = sym(r.hue);
    p.rotation_deg = sym(r.rotation_deg);
    for (auto& c : p.corners)
        for (auto& v : c)
            v = sym(r.perspective);
    return p;
}

inline Image color_jitter(const Image& src, const AugmentationParams& p)
{
    if (p.brightness == 0 && p.contrast == 0 && p.saturation == 0 && p.hue == 0)
        return src;
    const std::size_t npx = static_cast<std::size_t>(src.width) * src.height;
    double mean_gray = 0.0;
    for (std::size_t i = 0; i < npx; ++i) {
        const auto* q = src.rgb.data() + 3 * i;
        mean_gray += 0.299 * q[0] + 0.587 * q[1] + 0.114 * q[2];
    }
    mean_gray = mean_gray * (1.0 + p.brightness) / static_cast<double>(npx);

    // Hue: rotation of the chroma plane in YIQ.
    const double th = 2.0 * std::numbers::pi * p.hue, cs = std::cos(th), sn = std::sin(th);
    Image out(src.width, src.height);
    for (std::size_t i = 0; i < npx; ++i) {
        const auto* q = src.rgb.data() + 3 * i;
        double v[3];
        for (int c = 0; c < 3; ++c)
            v[c] = q[c] * (1.0 + p.brightness);
        for (double& x : v)
            x = (x - mean_gray) * (1.0 + p.contrast) + mean_gray;
        const double g = 0.299 * v[0] + 0.587 * v[1] + 0.114 * v[2];
        for (double& x : v)
            x = (x - g) * (1.0 + p.saturation) + g;
        if (p.hue != 0) {
            const double y = 0.299 * v[0] + 0.587 * v[1] + 0.114 * v[2];
            const double ii = 0.596 * v[0] - 0.274 * v[1] - 0.322 * v[2];
            const double qq = 0.211 * v[0] - 0.523 * v[1] + 0.312 * v[2];
            const double i2 = cs * ii - sn * qq, q2 = sn * ii + cs * qq;
            v[0] = y + 0.956 * i2 + 0.621 * q2;
            v[1] = y - 0.272 * i2 - 0.647 * q2;
            v[2] = y - 1.106 * i2 + 1.703 * q2;
        }
        auto* o = out.rgb.data() + 3 * i;
        for (int c = 0; c < 3; ++c)
            o[c] = to_u8(v[c]);
    }
    return out;
}

/// Counter-clockwise rotation about the image centre, reflect padding.
inline Image rotate_arbitrary(const Image& src, double degrees)
{
    if (degrees == 0)
        return src;
    const double th = -degrees * std::numbers::pi / 180.0;
    const double cs = std::cos(th), sn = std::sin(th);
    const double cx = (src.width - 1) / 2.0, cy = (src.height - 1) / 2.0;
    Image out(src.width, src.height);
    double v[3];
    for (int y = 0; y < src.height; ++y)
        for (int x = 0; x < src.width; ++x) {
            // Image y points down, so a visual CCW turn is a CW turn in
            // array coordinates; pull from the inverse rotation.
            const double dx = x - cx, dy = y - cy;
            const double sx = cx + cs * dx + sn * dy;
            const double sy = cy - sn * dx + cs * dy;
            sample_bilinear(src, sx, sy, v);
            for (int c = 0; c < 3; ++c)
                out.px(x, y)[c] = to_u8(v[c]);
        }
    return out;
}

namespace detail {

// Homography mapping the four `from` points onto `to`, as 9 coefficients
// (h33 = 1), via Gaussian elimination with partial pivoting.
inline std::array<double, 9> homography(const std::array<std::array<double, 2>, 4>& from,
                                        const std::array<std::array<double, 2>, 4>& to)
{
    double a[8][9] = {};
    for (int i = 0; i < 4; ++i) {
        const double x = from[i][0], y = from[i][1], u = to[i][0], v = to[i][1];
        double* r0 = a[2 * i];
        double* r1 = a[2 * i + 1];
        r0[0] = x; r0[1] = y; r0[2] = 1; r0[6] = -u * x; r0[7] = -u * y; r0[8] = u;
        r1[3] = x; r1[4] = y; r1[5] = 1; r1[6] = -v * x; r1[7] = -v * y; r1[8] = v;
    }
    for (int col = 0; col < 8; ++col) {
        int piv = col;
        for (int r = col + 1; r < 8; ++r)
            if (std::abs(a[r][col]) > std::abs(a[piv][col]))
                piv = r;
        if (std::abs(a[piv][col]) < 1e-12)
            throw invalid_argument_error("homography: degenerate corners");
        std::swap(a[piv], a[col]);
        for (int r = 0; r < 8; ++r) {
            if (r == col)
                continue;
            const double f = a[r][col] / a[col][col];
            for (int k = col; k < 9; ++k)
                a[r][k] -= f * a[col][k];
        }
    }
    std::array<double, 9> h{};
    for (int i = 0; i < 8; ++i)
        h[static_cast<std::size_t>(i)] = a[i][8] / a[i][i];
    h[8] = 1.0;
    return h;
}

} // namespace detail

/// Warps so that each output corner samples the source at its corner moved
/// by `corners[i] * side`.
inline Image perspective_warp(const Image& src, const std::array<std::array<double, 2>, 4>& corners)
{
    bool identity = true;
    for (const auto& c : corners)
        identity = identity && c[0] == 0 && c[1] == 0;
    if (identity)
        return src;
    const double w = src.width - 1, h = src.height - 1;
    const std::array<std::array<double, 2>, 4> dst{{{0, 0}, {w, 0}, {w, h}, {0, h}}};
    auto srcc = dst;
    for (std::size_t i = 0; i < 4; ++i) {
        srcc[i][0] += corners[i][0] * src.width;
        srcc[i][1] += corners[i][1] * src.height;
    }
    const auto H = detail::homography(dst, srcc);
    Image out(src.width, src.height);
    double v[3];
    for (int y = 0; y < src.height; ++y)
        for (int x = 0; x < src.width; ++x) {
            const double d = H[6] * x + H[7] * y + H[8];
            const double sx = (H[0] * x + H[1] * y + H[2]) / d;
            const double sy = (H[3] * x + H[4] * y + H[5]) / d;
            sample_bilinear(src, sx, sy, v);
            for (int c = 0; c < 3; ++c)
                out.px(x, y)[c] = to_u8(v[c]);
        }
    return out;
}

/// Colour jitter, then rotation, then perspective.
inline Image apply_augmentation(const Image& src, const AugmentationParams& p)
{
    return perspective_warp(rotate_arbitrary(color_jitter(src, p), p.rotation_deg), p.corners);
}

} // namespace orbitloc
