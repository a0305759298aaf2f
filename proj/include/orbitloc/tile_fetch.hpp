#pragma once

// XYZ tile download with an on-disk cache, retries and bounded parallelism,
// plus assembly of region images from tile mosaics.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <future>
#include <map>
#include <mutex>
#include <span>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <httplib.h>

#include "codec.hpp"
#include "errors.hpp"
#include "geodesy.hpp"
#include "image.hpp"
#include "io.hpp"
#include "parallel.hpp"

namespace orbitloc {

struct TileKey {
    int year = 0;
    int z = 0;
    std::int64_t x = 0;
    std::int64_t y = 0;
    friend auto operator<=>(const TileKey&, const TileKey&) = default;
};

struct TileEndpoint {
    std::string url_template; // e.g. http://host/{year}/{z}/{x}/{y}.jpg
    int max_retries = 4;
    std::chrono::milliseconds backoff{250}; // doubled after each failed attempt
    int parallelism = 8;
    int timeout_s = 30;
    int tile_px = 256;

    void validate() const
    {
        for (const char* key : {"{z}", "{x}", "{y}"})
            if (url_template.find(key) == std::string::npos)
                throw config_error("tile endpoint: template lacks " + std::string(key));
        if (max_retries < 0 || parallelism < 1 || tile_px < 1)
            throw config_error("tile endpoint: retries, parallelism and tile size must be sensible");
    }
};

inline std::string expand_template(std::string tpl, const TileKey& k)
{
    auto sub = [&](const std::string& key, const std::string& val) {
        for (std::size_t p; (p = tpl.find(key)) != std::string::npos;)
            tpl.replace(p, key.size(), val);
    };
    sub("{year}", std::to_string(k.year));
    sub("{z}", std::to_string(k.z));
    sub("{x}", std::to_string(k.x));
    sub("{y}", std::to_string(k.y));
    return tpl;
}

inline fs::path tile_cache_path(const fs::path& cache_dir, const TileKey& k)
{
    return cache_dir / std::to_string(k.year) / std::to_string(k.z) / std::to_string(k.x) /
           (std::to_string(k.y) + ".img");
}

struct HttpResponse {
    int status = 0; // 0: no response (connection failure)
    std::string body;
    std::string error;
};

using HttpTransport = std::function<HttpResponse(const std::string& url)>;

/// Plain-HTTP GET through cpp-httplib.
inline HttpTransport httplib_transport(int timeout_s = 30)
{
    return [timeout_s](const std::string& url) {
        const auto scheme_end = url.find("://");
        if (scheme_end == std::string::npos || url.substr(0, scheme_end) != "http")
            throw config_error("tile endpoint: only http:// URLs are supported, got " + url);
        const auto path_start = url.find('/', scheme_end + 3);
        const std::string host = url.substr(0, path_start);
        const std::string path = path_start == std::string::npos ? "/" : url.substr(path_start);
        httplib::Client cli(host);
        cli.set_connection_timeout(timeout_s);
        cli.set_read_timeout(timeout_s);
        cli.set_follow_location(true);
        HttpResponse out;
        if (auto res = cli.Get(path)) {
            out.status = res->status;
            out.body = std::move(res->body);
        } else {
            out.error = httplib::to_string(res.error());
        }
        return out;
    };
}

struct tile_not_found_error : error {
    explicit tile_not_found_error(const std::string& m) : error(error_category::data, m) {}
};

/// Fetches tiles through the cache. Concurrent requests for one key share a
/// single download, and only that download writes the cache file.
class TileFetcher {
public:
    TileFetcher(TileEndpoint ep, fs::path cache_dir, HttpTransport transport = {})
        : ep_(std::move(ep)), cache_(std::move(cache_dir)),
          transport_(transport ? std::move(transport) : httplib_transport(ep_.timeout_s))
    {
        ep_.validate();
    }

    const TileEndpoint& endpoint() const { return ep_; }
    std::size_t network_requests() const { return requests_.load(); }

    /// Raw payload. `context` names what the tile is for (region, year) and
    /// is carried by every error.
    std::vector<std::uint8_t> fetch(const TileKey& key, const std::string& context)
    {
        const auto path = tile_cache_path(cache_, key);
        if (fs::exists(path))
            return read_file(path);

        std::shared_future<std::vector<std::uint8_t>> fut;
        std::promise<std::vector<std::uint8_t>> mine;
        bool owner = false;
        {
            std::lock_guard lock(mu_);
            auto it = inflight_.find(key);
            if (it == inflight_.end() && fs::exists(path))
                return read_file(path); // finished while we waited for the lock
            if (it == inflight_.end()) {
                fut = mine.get_future().share();
                inflight_.emplace(key, fut);
                owner = true;
            } else {
                fut = it->second;
            }
        }
        if (!owner)
            return fut.get();
        try {
            auto bytes = download(key, context);
            write_file_atomic(path, bytes);
            mine.set_value(bytes);
        } catch (...) {
            mine.set_exception(std::current_exception());
        }
        {
            std::lock_guard lock(mu_);
            inflight_.erase(key);
        }
        return fut.get();
    }

    Image fetch_image(const TileKey& key, const std::string& context)
    {
        const auto bytes = fetch(key, context);
        try {
            return decode_image(bytes);
        } catch (const format_error& e) {
            throw format_error(context + ": tile " + expand_template("{z}/{x}/{y}", key) + ": " + e.what());
        }
    }

private:
    std::vector<std::uint8_t> download(const TileKey& key, const std::string& context)
    {
        const auto url = expand_template(ep_.url_template, key);
        auto delay = ep_.backoff;
        std::string last;
        for (int attempt = 0; attempt <= ep_.max_retries; ++attempt) {
            if (attempt > 0) {
                std::this_thread::sleep_for(delay);
                delay *= 2;
            }
            ++requests_;
            const auto res = transport_(url);
            if (res.status == 200)
                return std::vector<std::uint8_t>(res.body.begin(), res.body.end());
            if (res.status == 404)
                throw tile_not_found_error(context + ": tile not found (404) at " + url);
            const bool retryable = res.status == 0 || res.status == 408 || res.status == 429 || res.status >= 500;
            last = res.status == 0 ? res.error : "HTTP " + std::to_string(res.status);
            if (!retryable)
                throw error(error_category::network, context + ": " + last + " at " + url);
        }
        throw transient_error(context + ": giving up after " + std::to_string(ep_.max_retries + 1) +
                              " attempts (" + last + ") at " + url);
    }

    TileEndpoint ep_;
    fs::path cache_;
    HttpTransport transport_;
    std::mutex mu_;
    std::map<TileKey, std::shared_future<std::vector<std::uint8_t>>> inflight_;
    std::atomic<std::size_t> requests_{0};
};

/// Tiles covering a region. A region whose half-stride offset falls inside
/// a tile (span of one tile) is assembled from the next zoom level.
inline std::vector<TileKey> region_tiles(const RegionId& r, int year, const GridSpec& grid, int* tiles_per_side = nullptr)
{
    if (!region_in_grid(r, grid))
        throw invalid_argument_error("region outside grid: " + r.str());
    const int zf = grid.span_tiles == 1 ? r.zoom + 1 : r.zoom;
    const int t = grid.span_tiles * (grid.span_tiles == 1 ? 2 : 1);
    const std::int64_t x0 = r.ix * t / 2, y0 = r.iy * t / 2;
    std::vector<TileKey> keys;
    for (int dy = 0; dy < t; ++dy)
        for (int dx = 0; dx < t; ++dx)
            keys.push_back({year, zf, x0 + dx, y0 + dy});
    if (tiles_per_side)
        *tiles_per_side = t;
    return keys;
}

/// Downloads (or reads from cache) and stitches one region image, resized
/// to `image_px`.
inline Image fetch_region_image(TileFetcher& fetcher, const RegionId& r, int year, const GridSpec& grid, int image_px)
{
    int t = 0;
    const auto keys = region_tiles(r, year, grid, &t);
    const std::string context = "region " + r.str() + " year " + std::to_string(year);
    const int tp = fetcher.endpoint().tile_px;
    Image mosaic(t * tp, t * tp);
    for (std::size_t i = 0; i < keys.size(); ++i) {
        Image tile = fetcher.fetch_image(keys[i], context);
        if (tile.width != tp || tile.height != tp)
            tile = resize(tile, tp, tp);
        const int ox = static_cast<int>(i % t) * tp, oy = static_cast<int>(i / t) * tp;
        for (int y = 0; y < tp; ++y)
            std::copy_n(tile.px(0, y), static_cast<std::size_t>(tp) * 3, mosaic.px(ox, oy + y));
    }
    return mosaic.width == image_px ? mosaic : resize(mosaic, image_px, image_px);
}

/// Fetches many region images with at most `parallelism` downloads in
/// flight. Output order follows input.
inline std::vector<Image> fetch_region_images(TileFetcher& fetcher, std::span<const std::pair<RegionId, int>> wanted,
                                              const GridSpec& grid, int image_px)
{
    std::vector<Image> out(wanted.size());
    parallel_for(wanted.size(), fetcher.endpoint().parallelism, [&](std::size_t i) {
        out[i] = fetch_region_image(fetcher, wanted[i].first, wanted[i].second, grid, image_px);
    });
    return out;
}

} // namespace orbitloc
