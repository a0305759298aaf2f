#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"

namespace orbitloc {

/// Interleaved 8-bit RGB raster, row-major.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> rgb;

    Image() = default;
    Image(int w, int h) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, 0) {}

    bool empty() const { return width <= 0 || height <= 0; }
    bool square() const { return width == height && width > 0; }

    std::uint8_t* px(int x, int y) { return rgb.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
    const std::uint8_t* px(int x, int y) const
    {
        return rgb.data() + (static_cast<std::size_t>(y) * width + x) * 3;
    }

    friend bool operator==(const Image&, const Image&) = default;
};

inline constexpr int kRotations[4] = {0, 90, 180, 270};

/// Lossless counter-clockwise rotation of a square image by `degrees`, which
/// must be a multiple of 90.
inline Image rotate90(const Image& src, int degrees)
{
    if (!src.square())
        throw invalid_argument_error("rotate90: image must be square");
    const int k = ((degrees / 90) % 4 + 4) % 4;
    if (degrees % 90 != 0)
        throw invalid_argument_error("rotate90: angle must be a multiple of 90");
    if (k == 0)
        return src;
    const int n = src.width;
    Image dst(n, n);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            int sx = x, sy = y;
            // Destination (x, y) pulls from the source pixel that lands there.
            switch (k) {
            case 1: sx = n - 1 - y; sy = x; break;
            case 2: sx = n - 1 - x; sy = n - 1 - y; break;
            case 3: sx = y; sy = n - 1 - x; break;
            }
            std::copy_n(src.px(sx, sy), 3, dst.px(x, y));
        }
    return dst;
}

/// Reflect-101 index into [0, n).
inline int reflect_index(int i, int n)
{
    if (n == 1)
        return 0;
    const int period = 2 * (n - 1);
    i %= period;
    if (i < 0)
        i += period;
    return i < n ? i : period - i;
}

/// Bilinear sample at continuous pixel coordinates with reflect padding.
/// Pixel centres sit at integer coordinates.
inline void sample_bilinear(const Image& img, double x, double y, double out[3])
{
    const double fx = std::floor(x), fy = std::floor(y);
    const double ax = x - fx, ay = y - fy;
    const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
    const int xa = reflect_index(x0, img.width), xb = reflect_index(x0 + 1, img.width);
    const int ya = reflect_index(y0, img.height), yb = reflect_index(y0 + 1, img.height);
    const auto* p00 = img.px(xa, ya);
    const auto* p10 = img.px(xb, ya);
    const auto* p01 = img.px(xa, yb);
    const auto* p11 = img.px(xb, yb);
    for (int c = 0; c < 3; ++c) {
        const double top = p00[c] + ax * (p10[c] - p00[c]);
        const double bot = p01[c] + ax * (p11[c] - p01[c]);
        out[c] = top + ay * (bot - top);
    }
}

inline std::uint8_t to_u8(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

/// Area-averaging resize for downscaling, bilinear for upscaling.
inline Image resize(const Image& src, int w, int h)
{
    if (src.empty() || w <= 0 || h <= 0)
        throw invalid_argument_error("resize: empty image or target");
    if (src.width == w && src.height == h)
        return src;
    Image dst(w, h);
    if (src.width % w == 0 && src.height % h == 0) {
        const int fx = src.width / w, fy = src.height / h;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                for (int c = 0; c < 3; ++c) {
                    int acc = 0;
                    for (int j = 0; j < fy; ++j)
                        for (int i = 0; i < fx; ++i)
                            acc += src.px(x * fx + i, y * fy + j)[c];
                    dst.px(x, y)[c] = to_u8(static_cast<double>(acc) / (fx * fy));
                }
        return dst;
    }
    const double sx = static_cast<double>(src.width) / w, sy = static_cast<double>(src.height) / h;
    double v[3];
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            sample_bilinear(src, (x + 0.5) * sx - 0.5, (y + 0.5) * sy - 0.5, v);
            for (int c = 0; c < 3; ++c)
                dst.px(x, y)[c] = to_u8(v[c]);
        }
    return dst;
}

// ---------------------------------------------------------------------------
// Binary PPM (P6)

inline std::vector<std::uint8_t> encode_ppm(const Image& img)
{
    const std::string header = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), img.rgb.begin(), img.rgb.end());
    return out;
}

inline bool looks_like_ppm(std::span<const std::uint8_t> data)
{
    return data.size() >= 2 && data[0] == 'P' && data[1] == '6';
}

inline Image decode_ppm(std::span<const std::uint8_t> data)
{
    if (!looks_like_ppm(data))
        throw format_error("not a binary PPM payload");
    std::size_t pos = 2;
    auto next_int = [&]() -> long {
        while (pos < data.size()) {
            if (data[pos] == '#') {
                while (pos < data.size() && data[pos] != '\n')
                    ++pos;
            } else if (std::isspace(data[pos])) {
                ++pos;
            } else {
                break;
            }
        }
        long v = 0;
        bool any = false;
        while (pos < data.size() && std::isdigit(data[pos])) {
            v = v * 10 + (data[pos++] - '0');
            any = true;
            if (v > (1L << 20))
                throw format_error("PPM dimension too large");
        }
        if (!any)
            throw format_error("malformed PPM header");
        return v;
    };
    const long w = next_int(), h = next_int(), maxval = next_int();
    if (maxval != 255 || w <= 0 || h <= 0)
        throw format_error("unsupported PPM (need 8-bit RGB)");
    ++pos; // single whitespace after maxval
    const std::size_t need = static_cast<std::size_t>(w) * h * 3;
    if (data.size() < pos + need)
        throw format_error("truncated PPM payload");
    Image img(static_cast<int>(w), static_cast<int>(h));
    std::copy_n(data.begin() + static_cast<std::ptrdiff_t>(pos), need, img.rgb.begin());
    return img;
}

} // namespace orbitloc
