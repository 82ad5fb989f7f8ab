#include "eir/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <memory>
#include <string>

// jpeglib.h needs FILE and size_t declared first.
#include <jpeglib.h>

#include "eir/error.hpp"

namespace eir::io {

namespace {

using FilePtr = std::unique_ptr<std::FILE, int (*)(std::FILE*)>;

FilePtr open_file(const std::filesystem::path& file, const char* mode) {
    FilePtr fp(std::fopen(file.c_str(), mode), &std::fclose);
    if (!fp) throw DataError("cannot open " + file.string());
    return fp;
}

bool has_png_signature(const std::filesystem::path& file) {
    auto fp = open_file(file, "rb");
    unsigned char sig[8] = {};
    if (std::fread(sig, 1, 8, fp.get()) != 8) return false;
    return png_sig_cmp(sig, 0, 8) == 0;
}

Rgb8 read_png_rgb(const std::filesystem::path& file) {
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, file.c_str()))
        throw DataError("png read failed for " + file.string() + ": " + img.message);
    img.format = PNG_FORMAT_RGB;
    Rgb8 out;
    out.height = static_cast<int>(img.height);
    out.width = static_cast<int>(img.width);
    out.data.resize(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, out.data.data(), 0, nullptr)) {
        std::string msg = img.message;
        png_image_free(&img);
        throw DataError("png decode failed for " + file.string() + ": " + msg);
    }
    return out;
}

struct JpegErrorManager {
    jpeg_error_mgr base;
    std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
    auto* mgr = reinterpret_cast<JpegErrorManager*>(cinfo->err);
    std::longjmp(mgr->jump, 1);
}

Rgb8 read_jpeg(const std::filesystem::path& file) {
    auto fp = open_file(file, "rb");
    jpeg_decompress_struct cinfo;
    JpegErrorManager err;
    cinfo.err = jpeg_std_error(&err.base);
    err.base.error_exit = jpeg_error_exit;
    Rgb8 out;
    if (setjmp(err.jump)) {
        jpeg_destroy_decompress(&cinfo);
        throw DataError("jpeg decode failed for " + file.string());
    }
    jpeg_create_decompress(&cinfo);
    jpeg_stdio_src(&cinfo, fp.get());
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);
    out.height = static_cast<int>(cinfo.output_height);
    out.width = static_cast<int>(cinfo.output_width);
    out.data.resize(static_cast<std::size_t>(out.height) * out.width * 3);
    while (cinfo.output_scanline < cinfo.output_height) {
        JSAMPROW row = out.data.data() + static_cast<std::size_t>(cinfo.output_scanline) * out.width * 3;
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return out;
}

}  // namespace

Rgb8 read_rgb(const std::filesystem::path& file) {
    if (!std::filesystem::exists(file)) throw DataError("missing image " + file.string());
    return has_png_signature(file) ? read_png_rgb(file) : read_jpeg(file);
}

void write_rgb_png(const std::filesystem::path& file, const Rgb8& image) {
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(image.width);
    img.height = static_cast<png_uint_32>(image.height);
    img.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&img, file.c_str(), 0, image.data.data(), 0, nullptr))
        throw DataError("png write failed for " + file.string() + ": " + img.message);
}

void write_gray_png(const std::filesystem::path& file, const Gray8& image) {
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(image.width);
    img.height = static_cast<png_uint_32>(image.height);
    img.format = PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&img, file.c_str(), 0, image.data.data(), 0, nullptr))
        throw DataError("png write failed for " + file.string() + ": " + img.message);
}

Gray8 read_indexed_png(const std::filesystem::path& file) {
    if (!std::filesystem::exists(file)) throw DataError("missing mask " + file.string());
    auto fp = open_file(file, "rb");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw DataError("png init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw DataError("png init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("png decode failed for " + file.string());
    }
    png_init_io(png, fp.get());
    png_read_png(png, info, PNG_TRANSFORM_PACKING | PNG_TRANSFORM_STRIP_16, nullptr);
    const int color_type = png_get_color_type(png, info);
    const int channels = png_get_channels(png, info);
    if (color_type != PNG_COLOR_TYPE_PALETTE && color_type != PNG_COLOR_TYPE_GRAY) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("mask " + file.string() + " is neither indexed nor gray");
    }
    Gray8 out;
    out.height = static_cast<int>(png_get_image_height(png, info));
    out.width = static_cast<int>(png_get_image_width(png, info));
    out.data.resize(static_cast<std::size_t>(out.height) * out.width);
    png_bytepp rows = png_get_rows(png, info);
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x)
            out.data[static_cast<std::size_t>(y) * out.width + x] = rows[y][x * channels];
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

void write_indexed_png(const std::filesystem::path& file, const Gray8& indices,
                       const std::vector<std::array<std::uint8_t, 3>>& palette) {
    auto fp = open_file(file, "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw DataError("png init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw DataError("png init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw DataError("png write failed for " + file.string());
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(indices.width), static_cast<png_uint_32>(indices.height), 8,
                 PNG_COLOR_TYPE_PALETTE, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    std::vector<png_color> colors(palette.size());
    for (std::size_t i = 0; i < palette.size(); ++i) colors[i] = {palette[i][0], palette[i][1], palette[i][2]};
    png_set_PLTE(png, info, colors.data(), static_cast<int>(colors.size()));
    png_write_info(png, info);
    for (int y = 0; y < indices.height; ++y) {
        auto* row = const_cast<png_bytep>(indices.data.data() + static_cast<std::size_t>(y) * indices.width);
        png_write_row(png, row);
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

std::vector<std::array<std::uint8_t, 3>> voc_colormap() {
    std::vector<std::array<std::uint8_t, 3>> map(256);
    for (int i = 0; i < 256; ++i) {
        int r = 0, g = 0, b = 0, c = i;
        for (int j = 0; j < 8; ++j) {
            r |= ((c >> 0) & 1) << (7 - j);
            g |= ((c >> 1) & 1) << (7 - j);
            b |= ((c >> 2) & 1) << (7 - j);
            c >>= 3;
        }
        map[i] = {static_cast<std::uint8_t>(r), static_cast<std::uint8_t>(g), static_cast<std::uint8_t>(b)};
    }
    return map;
}

Rgb8 quantize(const Image& image) {
    Rgb8 out{image.height, image.width, std::vector<std::uint8_t>(image.data.size())};
    for (std::size_t i = 0; i < image.data.size(); ++i) {
        const double v = std::clamp(image.data[i], 0.0, 1.0);
        out.data[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
    return out;
}

Image dequantize(const Rgb8& image) {
    Image out(image.height, image.width);
    for (std::size_t i = 0; i < image.data.size(); ++i) out.data[i] = image.data[i] / 255.0;
    return out;
}

bool on_byte_grid(const Image& image) {
    for (double v : image.data) {
        if (!(v >= 0.0 && v <= 1.0)) return false;
        if (std::lround(v * 255.0) / 255.0 != v) return false;
    }
    return true;
}

}  // namespace eir::io
