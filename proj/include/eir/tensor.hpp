#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

namespace eir {

using ClassId = std::uint16_t;

inline constexpr ClassId kBackground = 0;
/// Marks pixels that take part in no loss and no metric (void borders of real masks).
inline constexpr ClassId kIgnore = std::numeric_limits<ClassId>::max();

/// RGB image, row-major, interleaved channels, values in [0,1].
struct Image {
    int height = 0;
    int width = 0;
    std::vector<double> data;

    Image() = default;
    Image(int h, int w, double fill = 0.0)
        : height(h), width(w), data(static_cast<std::size_t>(h) * w * 3, fill) {}

    double& at(int y, int x, int c) { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    double at(int y, int x, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    std::size_t pixels() const { return static_cast<std::size_t>(height) * width; }

    bool operator==(const Image&) const = default;
};

template <typename T>
struct Grid {
    int height = 0;
    int width = 0;
    std::vector<T> data;

    Grid() = default;
    Grid(int h, int w, T fill = T{}) : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

    T& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
    const T& at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
    std::size_t pixels() const { return data.size(); }

    bool operator==(const Grid&) const = default;
};

using LabelMap = Grid<ClassId>;
/// Binary mask, 1 = set.
using Mask = Grid<std::uint8_t>;

/// Channel-planar tensor (C, H, W). Used for score, probability and target maps.
struct Tensor3 {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<double> data;

    Tensor3() = default;
    Tensor3(int c, int h, int w, double fill = 0.0)
        : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

    std::size_t plane_size() const { return static_cast<std::size_t>(height) * width; }
    double& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
    double at(int c, int y, int x) const { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
    std::span<double> plane(int c) { return {data.data() + c * plane_size(), plane_size()}; }
    std::span<const double> plane(int c) const { return {data.data() + c * plane_size(), plane_size()}; }

    bool operator==(const Tensor3&) const = default;
};

/// Image (HWC) to network input (CHW).
Tensor3 to_planar(const Image& image);

}  // namespace eir
