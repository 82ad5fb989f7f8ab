#pragma once

#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "eir/memory.hpp"
#include "eir/protocol.hpp"
#include "eir/tensor.hpp"

namespace eir {

struct Rect {
    int top = 0;
    int left = 0;
    int height = 0;
    int width = 0;

    bool contains(int y, int x) const { return y >= top && y < top + height && x >= left && x < left + width; }
    bool operator==(const Rect&) const = default;
};

/// rows x cols tiling of an image; remainder pixels go to the last row / column.
struct RegionGrid {
    int rows = 0;
    int cols = 0;
    std::vector<Rect> regions;  // row-major

    int region_of(int y, int x) const;
};

RegionGrid build_region_grid(int height, int width, int n);

struct Anchor {
    int u = 0;  // row of the top-left corner
    int v = 0;  // column of the top-left corner
    int region_index = 0;
};

struct PlacementPlan {
    int u = 0;
    int v = 0;
    double scale = 1.0;
    int region_index = -1;
    int out_h = 0;  // instance size after scaling
    int out_w = 0;
};

/// Image + per-pixel class distribution after mixup. Channel c is class id c.
struct FusedSample {
    Image image;
    Tensor3 soft_label;
    Mask fused_mask;
    /// 0 on ignore pixels, which feed no loss.
    Mask valid;
    std::set<ClassId> fused_classes;
    std::string id;
};

/// One-hot soft labels over `num_channels` classes, empty fused mask.
FusedSample to_fused(const SegSample& sample, int num_channels);

/// Highest-mass class per pixel (ties to the lower id); kIgnore where invalid.
LabelMap hard_labels(const FusedSample& fused);

/// Picks the free region with the largest background share; ties go to the region
/// whose corner is nearest (0,0), then to the lower index. Throws PlacementSkip when
/// every region is occupied.
Anchor choose_anchor(const LabelMap& label, const RegionGrid& grid, std::span<const int> occupied);

struct FitOptions {
    double min_scale = 0.1;
};

/// Shrink-only scale so that the instance anchored at (u,v) stays inside HxW.
/// Throws PlacementSkip when the scale would fall below min_scale.
PlacementPlan fit_instance(const InstanceRecord& record, int u, int v, int height, int width,
                           FitOptions options = {});

/// Bilinear resize (half-pixel centers) of the crop and nearest resize of its mask.
InstanceRecord resize_instance(const InstanceRecord& record, int out_h, int out_w);

/// Blends the (resized) instance into `sample` at the plan's anchor:
/// x' = λ x + (1-λ) m_p and y' = λ y + (1-λ) onehot(class) on mask pixels.
FusedSample mixup_fuse(const FusedSample& sample, const InstanceRecord& record, const PlacementPlan& plan,
                       double lambda);
FusedSample mixup_fuse(const SegSample& sample, const InstanceRecord& record, const PlacementPlan& plan,
                       double lambda, int num_channels);

struct LambdaPolicy {
    double beta_a = 0.5;
    double beta_b = 0.5;
    /// When set, every instance uses this λ instead of a Beta draw.
    std::optional<double> fixed;

    double draw(std::mt19937_64& rng) const;
};

struct FusionOptions {
    int region_n = 6;
    LambdaPolicy lambda;
    FitOptions fit;
    /// Optional soft overlap rule: drop an instance when more than this fraction of
    /// its pixels would land on already fused pixels. Unset = region exclusion only.
    std::optional<double> max_overlap;
};

struct FusionEvent {
    ClassId class_id = 0;
    std::string source_id;
    int region_index = -1;
    double scale = 0.0;
    double lambda = 0.0;
    bool placed = false;
    std::string reason;  // why the instance was skipped
};

struct FusionResult {
    FusedSample fused;
    std::vector<FusionEvent> log;
};

/// Places `records` in order, each in a region not used by an earlier one.
FusionResult fuse_all(const SegSample& sample, std::span<const InstanceRecord> records, int num_channels,
                      const FusionOptions& options, std::mt19937_64& rng);

}  // namespace eir
