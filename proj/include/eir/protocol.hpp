#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "eir/tensor.hpp"

namespace eir {

enum class ScheduleMode { overlapped, disjoint };

std::string_view to_string(ScheduleMode mode);
ScheduleMode parse_schedule_mode(std::string_view text);

/// Ordered partition of classes 1..total_classes into learning steps.
class TaskSchedule {
public:
    TaskSchedule(std::vector<std::set<ClassId>> steps, ScheduleMode mode);

    /// Parses "15-1" style shorthand: the first number is the base-step class
    /// count, the second the class count of every incremental step. Longer forms
    /// such as "3-1-1-1" list every step explicitly; a single number is a one-step schedule.
    static TaskSchedule parse(std::string_view shorthand, int total_classes, ScheduleMode mode);

    int num_steps() const { return static_cast<int>(steps_.size()); }
    int total_classes() const { return total_classes_; }
    ScheduleMode mode() const { return mode_; }

    /// Classes introduced at step t (1-based).
    const std::set<ClassId>& step_classes(int t) const;
    /// C_{1:t}; includes neither background nor the ignore sentinel.
    std::set<ClassId> learned_through(int t) const;
    /// C_{t+1:T}.
    std::set<ClassId> future_after(int t) const;
    /// Step (1-based) that introduces `id`, 0 for background.
    int step_of(ClassId id) const;

    const std::vector<std::set<ClassId>>& steps() const { return steps_; }
    std::string shorthand() const;

private:
    std::vector<std::set<ClassId>> steps_;
    ScheduleMode mode_;
    int total_classes_ = 0;
};

struct SegSample {
    Image image;
    LabelMap label;
    std::string id;

    bool operator==(const SegSample&) const = default;
};

struct StepDataset {
    std::vector<SegSample> samples;
    int step_index = 0;
    std::set<ClassId> visible_classes;
    /// Index of every sample in the full dataset it came from.
    std::vector<std::size_t> source_index;
};

struct StepFilter {
    /// Minimum count of new-class pixels for a sample to be selected.
    int min_new_pixels = 1;
};

StepDataset build_step_dataset(const std::vector<SegSample>& full, const TaskSchedule& schedule, int t,
                               StepFilter filter = {});

/// Rewrites every label outside `keep` (and not ignore) to background.
LabelMap relabel(const LabelMap& label, const std::set<ClassId>& keep);

// --- synthetic data ------------------------------------------------------

enum class ShapeKind : std::uint8_t { disk, square, diamond, triangle, ellipse, cross };

std::string_view to_string(ShapeKind kind);

/// Geometry of one object as drawn by the generator; enough to re-rasterize it.
struct ShapeSpec {
    ClassId class_id = 0;
    ShapeKind kind = ShapeKind::disk;
    double center_y = 0.0;
    double center_x = 0.0;
    double radius = 0.0;
};

/// Point-in-shape test used by the generator, evaluated at pixel centers.
bool shape_contains(const ShapeSpec& shape, double y, double x);

struct SyntheticConfig {
    int num_classes = 6;
    int samples_per_class = 20;
    int height = 64;
    int width = 64;
    std::uint64_t seed = 0;
    /// Row-stochastic-ish weights: affinity[i][j] is the relative chance that class
    /// j+1 appears as a companion of a sample whose primary class is i+1. Empty
    /// selects the default pairing of class c with class c + num_classes/2.
    std::vector<std::vector<double>> affinity;
};

struct SyntheticScene {
    SegSample sample;
    /// Shapes in drawing order; every shape is fully visible (shapes never overlap).
    std::vector<ShapeSpec> shapes;
};

std::vector<std::vector<double>> default_affinity(int num_classes);

std::vector<SyntheticScene> generate_synthetic_scenes(const SyntheticConfig& config);
std::vector<SegSample> generate_synthetic_dataset(int num_classes, int samples_per_class, int height, int width,
                                                  std::uint64_t seed);
std::vector<SegSample> generate_synthetic_dataset(const SyntheticConfig& config);

// --- VOC-style folders -----------------------------------------------------

/// Palette index -> class id. Indices mapped to kIgnore become void pixels.
using PaletteTable = std::map<int, ClassId>;

/// Reads `palette.json`: {"0": 0, "1": 1, ..., "255": "ignore"}.
PaletteTable read_palette(const std::filesystem::path& file);
void write_palette(const std::filesystem::path& file, const PaletteTable& table);

/// Loads `images/*.png|jpg` paired with `masks/*.png` by basename, sorted by basename.
std::vector<SegSample> load_voc_format(const std::filesystem::path& root, const PaletteTable& palette);
/// Same, with the palette read from `root/palette.json`.
std::vector<SegSample> load_voc_format(const std::filesystem::path& root);

/// Writes samples as `images/<id>.png`, `masks/<id>.png` (indexed) and `palette.json`.
/// Pixel values must lie on the 8-bit grid for the round trip to be exact.
void save_voc_format(const std::filesystem::path& root, const std::vector<SegSample>& samples, int num_classes);

}  // namespace eir
