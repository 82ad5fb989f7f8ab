#include "eir/placement.hpp"

#include <algorithm>
#include <cmath>

#include "eir/error.hpp"

namespace eir {

int RegionGrid::region_of(int y, int x) const {
    for (std::size_t i = 0; i < regions.size(); ++i)
        if (regions[i].contains(y, x)) return static_cast<int>(i);
    return -1;
}

RegionGrid build_region_grid(int height, int width, int n) {
    if (n < 1) throw ConfigError("region count must be positive");
    const double aspect = std::log(static_cast<double>(width) / height);
    int best_rows = 0, best_cols = 0;
    double best_gap = INFINITY;
    for (int rows = 1; rows <= n; ++rows) {
        if (n % rows) continue;
        const int cols = n / rows;
        if (rows > height || cols > width) continue;
        const double gap = std::abs(std::log(static_cast<double>(cols) / rows) - aspect);
        // Exact ties (mirror factorizations) go to more columns.
        if (gap < best_gap - 1e-12 || (std::abs(gap - best_gap) <= 1e-12 && cols > best_cols)) {
            best_gap = gap;
            best_rows = rows;
            best_cols = cols;
        }
    }
    if (best_rows == 0)
        throw ConfigError("cannot split a " + std::to_string(height) + "x" + std::to_string(width) + " image into " +
                          std::to_string(n) + " regions");

    RegionGrid grid;
    grid.rows = best_rows;
    grid.cols = best_cols;
    const int rh = height / best_rows, cw = width / best_cols;
    for (int r = 0; r < best_rows; ++r)
        for (int c = 0; c < best_cols; ++c) {
            Rect rect;
            rect.top = r * rh;
            rect.left = c * cw;
            rect.height = r == best_rows - 1 ? height - rect.top : rh;
            rect.width = c == best_cols - 1 ? width - rect.left : cw;
            grid.regions.push_back(rect);
        }
    return grid;
}

FusedSample to_fused(const SegSample& sample, int num_channels) {
    FusedSample f;
    f.image = sample.image;
    f.id = sample.id;
    f.soft_label = Tensor3(num_channels, sample.label.height, sample.label.width);
    f.fused_mask = Mask(sample.label.height, sample.label.width, 0);
    f.valid = Mask(sample.label.height, sample.label.width, 1);
    for (int y = 0; y < sample.label.height; ++y)
        for (int x = 0; x < sample.label.width; ++x) {
            const ClassId c = sample.label.at(y, x);
            if (c == kIgnore) {
                f.valid.at(y, x) = 0;
                f.soft_label.at(kBackground, y, x) = 1.0;
                continue;
            }
            if (c >= num_channels)
                throw ShapeError("label " + std::to_string(c) + " has no channel among " +
                                 std::to_string(num_channels));
            f.soft_label.at(c, y, x) = 1.0;
        }
    return f;
}

LabelMap hard_labels(const FusedSample& fused) {
    const auto& t = fused.soft_label;
    LabelMap out(t.height, t.width, kBackground);
    const std::size_t n = t.plane_size();
    for (std::size_t i = 0; i < n; ++i) {
        if (!fused.valid.data[i]) {
            out.data[i] = kIgnore;
            continue;
        }
        int best = 0;
        for (int c = 1; c < t.channels; ++c)
            if (t.data[c * n + i] > t.data[best * n + i]) best = c;
        out.data[i] = static_cast<ClassId>(best);
    }
    return out;
}

Anchor choose_anchor(const LabelMap& label, const RegionGrid& grid, std::span<const int> occupied) {
    int best = -1;
    long best_bg = 0, best_area = 1;
    long best_dist = 0;
    for (int i = 0; i < static_cast<int>(grid.regions.size()); ++i) {
        if (std::find(occupied.begin(), occupied.end(), i) != occupied.end()) continue;
        const Rect& r = grid.regions[i];
        long bg = 0;
        for (int y = r.top; y < r.top + r.height; ++y)
            for (int x = r.left; x < r.left + r.width; ++x) bg += label.at(y, x) == kBackground;
        const long area = static_cast<long>(r.height) * r.width;
        const long dist = static_cast<long>(r.top) * r.top + static_cast<long>(r.left) * r.left;
        bool better = false;
        if (best < 0) {
            better = true;
        } else {
            const long lhs = bg * best_area, rhs = best_bg * area;
            better = lhs > rhs || (lhs == rhs && dist < best_dist);
        }
        if (better) {
            best = i;
            best_bg = bg;
            best_area = area;
            best_dist = dist;
        }
    }
    if (best < 0) throw PlacementSkip("every region is already occupied");
    return {grid.regions[best].top, grid.regions[best].left, best};
}

PlacementPlan fit_instance(const InstanceRecord& record, int u, int v, int height, int width, FitOptions options) {
    if (u < 0 || u >= height || v < 0 || v >= width) throw ShapeError("anchor lies outside the image");
    const int h = record.height(), w = record.width();
    if (h <= 0 || w <= 0) throw ShapeError("instance is empty");
    const double scale = std::min({1.0, static_cast<double>(height - u) / h, static_cast<double>(width - v) / w});
    if (scale < options.min_scale)
        throw PlacementSkip("instance would shrink to scale " + std::to_string(scale) + " below the minimum");
    PlacementPlan plan;
    plan.u = u;
    plan.v = v;
    plan.scale = scale;
    plan.out_h = std::clamp(static_cast<int>(std::floor(h * scale + 1e-9)), 1, height - u);
    plan.out_w = std::clamp(static_cast<int>(std::floor(w * scale + 1e-9)), 1, width - v);
    return plan;
}

InstanceRecord resize_instance(const InstanceRecord& record, int out_h, int out_w) {
    const int in_h = record.height(), in_w = record.width();
    if (out_h == in_h && out_w == in_w) return record;
    InstanceRecord out;
    out.class_id = record.class_id;
    out.source_id = record.source_id;
    out.contiguity_score = record.contiguity_score;
    out.pixels = Image(out_h, out_w);
    out.mask = Mask(out_h, out_w, 0);
    const double sy = static_cast<double>(in_h) / out_h, sx = static_cast<double>(in_w) / out_w;
    for (int y = 0; y < out_h; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, in_h - 1.0);
        const int y0 = static_cast<int>(fy), y1 = std::min(y0 + 1, in_h - 1);
        const double wy = fy - y0;
        const int ny = std::min(static_cast<int>((y + 0.5) * sy), in_h - 1);
        for (int x = 0; x < out_w; ++x) {
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, in_w - 1.0);
            const int x0 = static_cast<int>(fx), x1 = std::min(x0 + 1, in_w - 1);
            const double wx = fx - x0;
            for (int c = 0; c < 3; ++c) {
                const double top = (1 - wx) * record.pixels.at(y0, x0, c) + wx * record.pixels.at(y0, x1, c);
                const double bottom = (1 - wx) * record.pixels.at(y1, x0, c) + wx * record.pixels.at(y1, x1, c);
                out.pixels.at(y, x, c) = (1 - wy) * top + wy * bottom;
            }
            const int nx = std::min(static_cast<int>((x + 0.5) * sx), in_w - 1);
            out.mask.at(y, x) = record.mask.at(ny, nx);
        }
    }
    return out;
}

FusedSample mixup_fuse(const FusedSample& sample, const InstanceRecord& record, const PlacementPlan& plan,
                       double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("mixup lambda must lie in [0,1]");
    const int H = sample.image.height, W = sample.image.width;
    if (plan.u < 0 || plan.v < 0 || plan.out_h < 1 || plan.out_w < 1 || plan.u + plan.out_h > H ||
        plan.v + plan.out_w > W)
        throw ShapeError("placement extends outside the image");
    if (record.class_id >= sample.soft_label.channels)
        throw ShapeError("instance class " + std::to_string(record.class_id) + " has no label channel");

    const InstanceRecord inst = resize_instance(record, plan.out_h, plan.out_w);
    FusedSample out = sample;
    const int K = out.soft_label.channels;
    for (int a = 0; a < plan.out_h; ++a)
        for (int b = 0; b < plan.out_w; ++b) {
            if (!inst.mask.at(a, b)) continue;
            const int y = plan.u + a, x = plan.v + b;
            for (int c = 0; c < 3; ++c)
                out.image.at(y, x, c) = lambda * out.image.at(y, x, c) + (1.0 - lambda) * inst.pixels.at(a, b, c);
            for (int k = 0; k < K; ++k) {
                const double target = k == record.class_id ? 1.0 : 0.0;
                out.soft_label.at(k, y, x) = lambda * out.soft_label.at(k, y, x) + (1.0 - lambda) * target;
            }
            out.fused_mask.at(y, x) = 1;
        }
    out.fused_classes.insert(record.class_id);
    return out;
}

FusedSample mixup_fuse(const SegSample& sample, const InstanceRecord& record, const PlacementPlan& plan,
                       double lambda, int num_channels) {
    return mixup_fuse(to_fused(sample, num_channels), record, plan, lambda);
}

double LambdaPolicy::draw(std::mt19937_64& rng) const {
    if (fixed) return *fixed;
    std::gamma_distribution<double> ga(beta_a, 1.0), gb(beta_b, 1.0);
    const double x = ga(rng), y = gb(rng);
    return x + y > 0.0 ? x / (x + y) : 0.5;
}

FusionResult fuse_all(const SegSample& sample, std::span<const InstanceRecord> records, int num_channels,
                      const FusionOptions& options, std::mt19937_64& rng) {
    FusionResult result{to_fused(sample, num_channels), {}};
    if (records.empty()) return result;
    const int H = sample.image.height, W = sample.image.width;
    const RegionGrid grid = build_region_grid(H, W, options.region_n);
    std::vector<int> occupied;

    for (const auto& record : records) {
        FusionEvent ev;
        ev.class_id = record.class_id;
        ev.source_id = record.source_id;
        try {
            const Anchor anchor = choose_anchor(sample.label, grid, occupied);
            ev.region_index = anchor.region_index;
            const PlacementPlan plan = [&] {
                auto p = fit_instance(record, anchor.u, anchor.v, H, W, options.fit);
                p.region_index = anchor.region_index;
                return p;
            }();
            ev.scale = plan.scale;
            if (options.max_overlap) {
                const InstanceRecord resized = resize_instance(record, plan.out_h, plan.out_w);
                long area = 0, overlap = 0;
                for (int a = 0; a < plan.out_h; ++a)
                    for (int b = 0; b < plan.out_w; ++b) {
                        if (!resized.mask.at(a, b)) continue;
                        ++area;
                        overlap += result.fused.fused_mask.at(plan.u + a, plan.v + b);
                    }
                if (area > 0 && static_cast<double>(overlap) / area > *options.max_overlap)
                    throw PlacementSkip("overlap with earlier instances above threshold");
            }
            ev.lambda = options.lambda.draw(rng);
            result.fused = mixup_fuse(result.fused, record, plan, ev.lambda);
            occupied.push_back(anchor.region_index);
            ev.placed = true;
        } catch (const PlacementSkip& skip) {
            ev.reason = skip.what();
        }
        result.log.push_back(std::move(ev));
    }
    return result;
}

}  // namespace eir
