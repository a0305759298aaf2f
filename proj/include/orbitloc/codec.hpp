#pragma once

// Decoding of tile payloads: binary PPM, JPEG (libjpeg) and PNG (libpng).

#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <span>
#include <string>
#include <vector>

#include <jpeglib.h>
#include <png.h>

#include "errors.hpp"
#include "image.hpp"

namespace orbitloc {

enum class ImageFormat { ppm, jpeg, png, unknown };

inline ImageFormat sniff_format(std::span<const std::uint8_t> d)
{
    if (looks_like_ppm(d))
        return ImageFormat::ppm;
    if (d.size() >= 3 && d[0] == 0xFF && d[1] == 0xD8 && d[2] == 0xFF)
        return ImageFormat::jpeg;
    if (d.size() >= 8 && png_sig_cmp(d.data(), 0, 8) == 0)
        return ImageFormat::png;
    return ImageFormat::unknown;
}

namespace detail {

struct JpegError {
    jpeg_error_mgr mgr;
    std::jmp_buf jump;
    char message[JMSG_LENGTH_MAX];
};

inline void jpeg_error_exit(j_common_ptr cinfo)
{
    auto* err = reinterpret_cast<JpegError*>(cinfo->err);
    (*cinfo->err->format_message)(cinfo, err->message);
    std::longjmp(err->jump, 1);
}

} // namespace detail

inline Image decode_jpeg(std::span<const std::uint8_t> data)
{
    jpeg_decompress_struct cinfo{};
    detail::JpegError err{};
    cinfo.err = jpeg_std_error(&err.mgr);
    err.mgr.error_exit = detail::jpeg_error_exit;
    Image img;
    if (setjmp(err.jump)) {
        jpeg_destroy_decompress(&cinfo);
        throw format_error(std::string("jpeg: ") + err.message);
    }
    jpeg_create_decompress(&cinfo);
    jpeg_mem_src(&cinfo, data.data(), static_cast<unsigned long>(data.size()));
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);
    img = Image(static_cast<int>(cinfo.output_width), static_cast<int>(cinfo.output_height));
    while (cinfo.output_scanline < cinfo.output_height) {
        JSAMPROW row = img.rgb.data() + static_cast<std::size_t>(cinfo.output_scanline) * img.width * 3;
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return img;
}

inline Image decode_png(std::span<const std::uint8_t> data)
{
    png_image pi{};
    pi.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&pi, data.data(), data.size()))
        throw format_error(std::string("png: ") + pi.message);
    pi.format = PNG_FORMAT_RGB;
    Image img(static_cast<int>(pi.width), static_cast<int>(pi.height));
    if (!png_image_finish_read(&pi, nullptr, img.rgb.data(), 0, nullptr)) {
        const std::string msg = pi.message;
        png_image_free(&pi);
        throw format_error("png: " + msg);
    }
    return img;
}

inline Image decode_image(std::span<const std::uint8_t> data)
{
    switch (sniff_format(data)) {
    case ImageFormat::ppm:
        return decode_ppm(data);
    case ImageFormat::jpeg:
        return decode_jpeg(data);
    case ImageFormat::png:
        return decode_png(data);
    default:
        throw format_error("unrecognised image payload (" + std::to_string(data.size()) + " bytes)");
    }
}

} // namespace orbitloc
