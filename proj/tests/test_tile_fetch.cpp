#include <gtest/gtest.h>

#include <atomic>
#include <thread>

#include "orbitloc/codec.hpp"
#include "orbitloc/tile_fetch.hpp"

using namespace orbitloc;

namespace {

Image gradient_tile(int n, int seed)
{
    Image img(n, n);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            img.px(x, y)[0] = static_cast<std::uint8_t>(x + seed);
            img.px(x, y)[1] = static_cast<std::uint8_t>(y);
            img.px(x, y)[2] = static_cast<std::uint8_t>(seed * 7);
        }
    return img;
}

std::string encode_png(const Image& img)
{
    png_image pi{};
    pi.version = PNG_IMAGE_VERSION;
    pi.width = static_cast<png_uint_32>(img.width);
    pi.height = static_cast<png_uint_32>(img.height);
    pi.format = PNG_FORMAT_RGB;
    png_alloc_size_t size = 0;
    png_image_write_to_memory(&pi, nullptr, &size, 0, img.rgb.data(), 0, nullptr);
    std::string out(size, '\0');
    if (!png_image_write_to_memory(&pi, out.data(), &size, 0, img.rgb.data(), 0, nullptr))
        throw std::runtime_error("png encode failed");
    out.resize(size);
    return out;
}

std::string encode_jpeg(const Image& img, int quality = 95)
{
    jpeg_compress_struct c{};
    jpeg_error_mgr err{};
    c.err = jpeg_std_error(&err);
    jpeg_create_compress(&c);
    unsigned char* buf = nullptr;
    unsigned long size = 0;
    jpeg_mem_dest(&c, &buf, &size);
    c.image_width = static_cast<JDIMENSION>(img.width);
    c.image_height = static_cast<JDIMENSION>(img.height);
    c.input_components = 3;
    c.in_color_space = JCS_RGB;
    jpeg_set_defaults(&c);
    jpeg_set_quality(&c, quality, TRUE);
    jpeg_start_compress(&c, TRUE);
    while (c.next_scanline < c.image_height) {
        JSAMPROW row = const_cast<JSAMPROW>(img.rgb.data() + static_cast<std::size_t>(c.next_scanline) * img.width * 3);
        jpeg_write_scanlines(&c, &row, 1);
    }
    jpeg_finish_compress(&c);
    std::string out(reinterpret_cast<char*>(buf), size);
    jpeg_destroy_compress(&c);
    std::free(buf);
    return out;
}

fs::path temp_dir(const std::string& name)
{
    const auto p = fs::temp_directory_path() / ("orbitloc_test_tiles_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(p);
    return p;
}

TileEndpoint endpoint(const std::string& tpl = "http://tiles.invalid/{year}/{z}/{x}/{y}.png")
{
    TileEndpoint ep;
    ep.url_template = tpl;
    ep.backoff = std::chrono::milliseconds(1);
    ep.max_retries = 3;
    return ep;
}

// In-memory tile source: PNG tiles everywhere except year 1999.
struct FakeServer {
    std::atomic<int> calls{0};
    HttpTransport transport()
    {
        return [this](const std::string& url) {
            ++calls;
            if (url.find("/1999/") != std::string::npos)
                return HttpResponse{404, "", ""};
            return HttpResponse{200, encode_png(gradient_tile(256, static_cast<int>(url.size()))), ""};
        };
    }
};

} // namespace

TEST(Codec, DecodesAllFormats)
{
    const auto img = gradient_tile(32, 3);
    const auto ppm = encode_ppm(img);
    EXPECT_EQ(decode_image(ppm), img);
    const auto png = encode_png(img);
    EXPECT_EQ(sniff_format(std::span(reinterpret_cast<const std::uint8_t*>(png.data()), png.size())),
              ImageFormat::png);
    EXPECT_EQ(decode_image(std::span(reinterpret_cast<const std::uint8_t*>(png.data()), png.size())), img);
    const auto jpg = encode_jpeg(img);
    const auto dj = decode_image(std::span(reinterpret_cast<const std::uint8_t*>(jpg.data()), jpg.size()));
    ASSERT_EQ(dj.width, 32);
    double err = 0;
    for (std::size_t i = 0; i < img.rgb.size(); ++i)
        err += std::abs(int(dj.rgb[i]) - int(img.rgb[i]));
    EXPECT_LT(err / img.rgb.size(), 4.0);
}

TEST(Codec, RejectsGarbage)
{
    const std::vector<std::uint8_t> junk{'h', 'e', 'l', 'l', 'o'};
    EXPECT_THROW(decode_image(junk), format_error);
    std::vector<std::uint8_t> bad_jpeg{0xFF, 0xD8, 0xFF, 0x00, 0x01};
    EXPECT_THROW(decode_image(bad_jpeg), format_error);
    auto ppm = encode_ppm(gradient_tile(8, 1));
    ppm.resize(ppm.size() - 5);
    EXPECT_THROW(decode_image(ppm), format_error);
}

TEST(TileFetch, TemplateAndCachePath)
{
    const TileKey k{2020, 11, 5, 7};
    EXPECT_EQ(expand_template("http://h/{year}/{z}/{x}/{y}.jpg?y={y}", k), "http://h/2020/11/5/7.jpg?y=7");
    EXPECT_EQ(tile_cache_path("/c", k), fs::path("/c/2020/11/5/7.img"));
    EXPECT_THROW(endpoint("http://h/{z}/{x}.png").validate(), config_error);
}

TEST(TileFetch, CacheHitMeansOneNetworkCall)
{
    const auto dir = temp_dir("cache");
    FakeServer srv;
    {
        TileFetcher f(endpoint(), dir, srv.transport());
        const auto a = f.fetch({2021, 10, 1, 2}, "test");
        const auto b = f.fetch({2021, 10, 1, 2}, "test");
        EXPECT_EQ(a, b);
        EXPECT_EQ(f.network_requests(), 1u);
    }
    TileFetcher again(endpoint(), dir, srv.transport());
    again.fetch({2021, 10, 1, 2}, "test");
    EXPECT_EQ(again.network_requests(), 0u);
    EXPECT_EQ(srv.calls.load(), 1);
    fs::remove_all(dir);
}

TEST(TileFetch, ConcurrentRequestsShareOneDownload)
{
    const auto dir = temp_dir("conc");
    std::atomic<int> calls{0};
    TileFetcher f(endpoint(), dir, [&](const std::string&) {
        ++calls;
        std::this_thread::sleep_for(std::chrono::milliseconds(50));
        return HttpResponse{200, encode_png(gradient_tile(8, 1)), ""};
    });
    std::vector<std::thread> ts;
    for (int i = 0; i < 8; ++i)
        ts.emplace_back([&] { f.fetch({2021, 3, 1, 1}, "c"); });
    for (auto& t : ts)
        t.join();
    EXPECT_EQ(calls.load(), 1);
    fs::remove_all(dir);
}

TEST(TileFetch, NotFoundCarriesRegionAndYear)
{
    const auto dir = temp_dir("404");
    FakeServer srv;
    TileFetcher f(endpoint(), dir, srv.transport());
    const RegionId r{10, 17, 33};
    try {
        fetch_region_image(f, r, 1999, GridSpec{4}, 64);
        FAIL();
    } catch (const tile_not_found_error& e) {
        const std::string w = e.what();
        EXPECT_NE(w.find(r.str()), std::string::npos) << w;
        EXPECT_NE(w.find("1999"), std::string::npos) << w;
        EXPECT_EQ(e.category(), error_category::data);
    }
    EXPECT_EQ(f.network_requests(), 1u); // no retry on 404
    fs::remove_all(dir);
}

TEST(TileFetch, RetriesTransientFailures)
{
    const auto dir = temp_dir("retry");
    int n = 0;
    TileFetcher f(endpoint(), dir, [&](const std::string&) {
        return ++n < 3 ? HttpResponse{503, "", ""} : HttpResponse{200, "payload", ""};
    });
    EXPECT_EQ(f.fetch({2021, 1, 0, 0}, "r").size(), 7u);
    EXPECT_EQ(f.network_requests(), 3u);

    TileFetcher dead(endpoint(), dir, [](const std::string&) { return HttpResponse{0, "", "connection refused"}; });
    try {
        dead.fetch({2021, 1, 1, 1}, "region 1/2/3 year 2021");
        FAIL();
    } catch (const transient_error& e) {
        EXPECT_NE(std::string(e.what()).find("region 1/2/3 year 2021"), std::string::npos);
        EXPECT_EQ(e.category(), error_category::network);
    }
    EXPECT_EQ(dead.network_requests(), 4u);
    TileFetcher forbidden(endpoint(), dir, [](const std::string&) { return HttpResponse{403, "", ""}; });
    EXPECT_THROW(forbidden.fetch({2021, 1, 1, 1}, "x"), error);
    EXPECT_EQ(forbidden.network_requests(), 1u);
    fs::remove_all(dir);
}

TEST(TileFetch, FullResolutionRegionBuffer)
{
    const auto dir = temp_dir("1024");
    FakeServer srv;
    TileFetcher f(endpoint(), dir, srv.transport());
    const auto img = fetch_region_image(f, {10, 4, 6}, 2021, GridSpec{4}, 1024);
    EXPECT_EQ(img.width, 1024);
    EXPECT_EQ(img.height, 1024);
    EXPECT_EQ(img.rgb.size(), 1024u * 1024 * 3);
    EXPECT_EQ(f.network_requests(), 16u);
    // Mosaic placement: tile (x0+1, y0) fills pixels [256, 512) of row 0.
    const auto tile = decode_image(f.fetch({2021, 10, 9, 12}, "t"));
    EXPECT_TRUE(std::equal(tile.px(0, 0), tile.px(0, 0) + 3, img.px(256, 0)));
    const auto keys = region_tiles({10, 4, 6}, 2021, GridSpec{4});
    // half-stride index 4 is tile 8; four tiles per side
    EXPECT_EQ(keys.front(), (TileKey{2021, 10, 8, 12}));
    EXPECT_EQ(keys.back(), (TileKey{2021, 10, 11, 15}));
    fs::remove_all(dir);
}

TEST(TileFetch, OneTileRegionsUseNextZoom)
{
    // span 1: region (z, ix, iy) starts at tile ix/2 and is built from the
    // 2x2 children one zoom level up.
    const auto keys = region_tiles({8, 3, 4}, 2021, GridSpec{1});
    ASSERT_EQ(keys.size(), 4u);
    EXPECT_EQ(keys[0], (TileKey{2021, 9, 3, 4}));
    EXPECT_EQ(keys[3], (TileKey{2021, 9, 4, 5}));
}

TEST(TileFetch, RealHttpServer)
{
    httplib::Server svr;
    std::atomic<int> hits{0};
    const auto png = encode_png(gradient_tile(256, 9));
    svr.Get(R"(/(\d+)/(\d+)/(\d+)/(\d+)\.png)", [&](const httplib::Request& req, httplib::Response& res) {
        ++hits;
        if (req.matches[1] == "1999") {
            res.status = 404;
            return;
        }
        res.set_content(png, "image/png");
    });
    const int port = svr.bind_to_any_port("127.0.0.1");
    ASSERT_GT(port, 0);
    std::thread th([&] { svr.listen_after_bind(); });
    svr.wait_until_ready();

    const auto dir = temp_dir("http");
    auto ep = endpoint("http://127.0.0.1:" + std::to_string(port) + "/{year}/{z}/{x}/{y}.png");
    TileFetcher f(ep, dir);
    const auto img = fetch_region_image(f, {10, 4, 6}, 2021, GridSpec{4}, 64);
    EXPECT_EQ(img.width, 64);
    EXPECT_EQ(hits.load(), 16);
    EXPECT_THROW(f.fetch_image({1999, 10, 1, 1}, "old"), tile_not_found_error);
    EXPECT_THROW(TileFetcher(endpoint("https://x/{z}/{x}/{y}"), dir).fetch({2021, 1, 0, 0}, "s"), config_error);

    svr.stop();
    th.join();
    fs::remove_all(dir);
}
