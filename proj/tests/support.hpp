#pragma once

// Hand-rolled generators shared by the unit and property tests.

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "eir/memory.hpp"
#include "eir/protocol.hpp"
#include "eir/tensor.hpp"

namespace testing {

using Rng = std::mt19937_64;

inline double uniform(Rng& rng, double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

inline eir::Image random_image(Rng& rng, int h, int w) {
    eir::Image img(h, w);
    for (auto& v : img.data) v = uniform(rng);
    return img;
}

/// Values on the 8-bit grid, so they survive png round trips.
inline eir::Image random_byte_image(Rng& rng, int h, int w) {
    eir::Image img(h, w);
    for (auto& v : img.data) v = uniform_int(rng, 0, 255) / 255.0;
    return img;
}

/// Blobby label map: background plus a few random rectangles of classes 1..max_class.
inline eir::LabelMap random_blob_labels(Rng& rng, int h, int w, int max_class, int rects) {
    eir::LabelMap m(h, w, eir::kBackground);
    for (int r = 0; r < rects; ++r) {
        const auto c = static_cast<eir::ClassId>(uniform_int(rng, 1, max_class));
        const int y0 = uniform_int(rng, 0, h - 1), x0 = uniform_int(rng, 0, w - 1);
        const int y1 = std::min(h - 1, y0 + uniform_int(rng, 0, h / 2));
        const int x1 = std::min(w - 1, x0 + uniform_int(rng, 0, w / 2));
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) m.at(y, x) = c;
    }
    return m;
}

/// Independent pixels, each background with probability p_bg, otherwise 1..max_class.
inline eir::LabelMap random_noise_labels(Rng& rng, int h, int w, int max_class, double p_bg) {
    eir::LabelMap m(h, w, eir::kBackground);
    for (auto& v : m.data)
        if (uniform(rng) >= p_bg) v = static_cast<eir::ClassId>(uniform_int(rng, 1, max_class));
    return m;
}

inline eir::Tensor3 random_distribution(Rng& rng, int k, int h, int w) {
    eir::Tensor3 t(k, h, w);
    const std::size_t n = t.plane_size();
    for (std::size_t i = 0; i < n; ++i) {
        double sum = 0.0;
        for (int c = 0; c < k; ++c) sum += t.data[c * n + i] = uniform(rng, 0.01, 1.0);
        for (int c = 0; c < k; ++c) t.data[c * n + i] /= sum;
    }
    return t;
}

/// Tight random instance: a filled ellipse of class `c` inside an h x w box.
inline eir::InstanceRecord random_record(Rng& rng, eir::ClassId c, int h, int w, const std::string& source) {
    eir::InstanceRecord r;
    r.class_id = c;
    r.source_id = source;
    r.pixels = random_image(rng, h, w);
    r.mask = eir::Mask(h, w, 0);
    const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double a = h > 1 ? (y - cy) / cy : 0.0, b = w > 1 ? (x - cx) / cx : 0.0;
            r.mask.at(y, x) = a * a + b * b <= 1.0;
        }
    // Keep the crop tight: the ellipse touches the midpoints of every side.
    r.mask.at(0, w / 2) = r.mask.at(h - 1, w / 2) = r.mask.at(h / 2, 0) = r.mask.at(h / 2, w - 1) = 1;
    r.contiguity_score = uniform(rng, 0.1, 1.0);
    return r;
}

inline eir::SegSample random_sample(Rng& rng, int h, int w, int max_class, const std::string& id) {
    return {random_image(rng, h, w), random_blob_labels(rng, h, w, max_class, 3), id};
}

/// Fresh scratch directory under the system temp dir, removed on destruction.
struct TempDir {
    std::filesystem::path path;

    explicit TempDir(const std::string& tag) {
        static std::uint64_t counter = 0;
        path = std::filesystem::temp_directory_path() /
               ("eir_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
};

}  // namespace testing
