#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "eir/tensor.hpp"

namespace eir::io {

/// 8-bit RGB raster.
struct Rgb8 {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> data;
};

/// 8-bit single-channel raster (palette indices or gray levels).
struct Gray8 {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> data;
};

Rgb8 read_rgb(const std::filesystem::path& file);  // png or jpeg
void write_rgb_png(const std::filesystem::path& file, const Rgb8& image);

/// Reads palette indices from an indexed png, or gray levels from a gray png.
Gray8 read_indexed_png(const std::filesystem::path& file);
void write_gray_png(const std::filesystem::path& file, const Gray8& image);
void write_indexed_png(const std::filesystem::path& file, const Gray8& indices,
                       const std::vector<std::array<std::uint8_t, 3>>& palette);

/// The usual 256-entry VOC color map.
std::vector<std::array<std::uint8_t, 3>> voc_colormap();

/// [0,1] -> 0..255, rounding to nearest.
Rgb8 quantize(const Image& image);
Image dequantize(const Rgb8& image);
/// True when every value is exactly k/255 for an integer k.
bool on_byte_grid(const Image& image);

}  // namespace eir::io
