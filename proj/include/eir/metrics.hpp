#pragma once

#include <map>
#include <optional>
#include <set>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "eir/protocol.hpp"
#include "eir/tensor.hpp"

namespace eir {

/// Dense confusion counts over classes 0..num_classes-1, rows = ground truth.
class ConfusionAccumulator {
public:
    explicit ConfusionAccumulator(int num_classes);

    /// Ignore pixels in `gt` are skipped; any other out-of-range id throws.
    void add(const LabelMap& pred, const LabelMap& gt);
    void merge(const ConfusionAccumulator& other);

    int num_classes() const { return n_; }
    long count(ClassId gt, ClassId pred) const { return counts_[static_cast<std::size_t>(gt) * n_ + pred]; }
    long true_positive(ClassId c) const;
    long false_positive(ClassId c) const;
    long false_negative(ClassId c) const;
    /// TP / (TP + FP + FN); empty when the class is absent from both maps.
    std::optional<double> iou(ClassId c) const;

private:
    int n_;
    std::vector<long> counts_;
};

/// Acc <- acc + counts(pred, gt).
ConfusionAccumulator confusion_accumulate(const LabelMap& pred, const LabelMap& gt, ConfusionAccumulator acc);

struct GroupedMiou {
    double base = 0.0;
    double inc = 0.0;
    double all = 0.0;
};

struct MetricReport {
    int step = 0;
    std::map<ClassId, std::optional<double>> per_class_iou;
    GroupedMiou grouped;
    double bg_misclass_rate = 0.0;
};

/// base: background + classes of steps <= boundary; inc: the classes learned later
/// (up to `upto_step`); all: both. Undefined IoUs are left out of every mean.
GroupedMiou grouped_miou(const MetricReport& report, const TaskSchedule& schedule, int base_step_boundary,
                         int upto_step);

/// Share of target-class pixels predicted as background (0 when there are none).
double bg_misclass_rate(const LabelMap& pred, const LabelMap& gt, const std::set<ClassId>& target_classes);

/// Running counts for bg_misclass_rate over many images.
struct BackgroundMisclassCounter {
    long target_pixels = 0;
    long as_background = 0;

    void add(const LabelMap& pred, const LabelMap& gt, const std::set<ClassId>& target_classes);
    double rate() const { return target_pixels ? static_cast<double>(as_background) / target_pixels : 0.0; }
};

/// {per_class: {...}, base, inc, all, bg_misclass, step}
nlohmann::json to_json(const MetricReport& report);
MetricReport metric_report_from_json(const nlohmann::json& j);

}  // namespace eir
