#include "eir/metrics.hpp"

#include <nlohmann/json.hpp>

#include "eir/error.hpp"

namespace eir {

ConfusionAccumulator::ConfusionAccumulator(int num_classes)
    : n_(num_classes), counts_(static_cast<std::size_t>(num_classes) * num_classes, 0) {
    if (num_classes < 1) throw ConfigError("confusion matrix needs at least one class");
}

void ConfusionAccumulator::add(const LabelMap& pred, const LabelMap& gt) {
    if (pred.height != gt.height || pred.width != gt.width) throw ShapeError("prediction and ground truth differ");
    for (std::size_t i = 0; i < gt.data.size(); ++i) {
        const ClassId g = gt.data[i];
        if (g == kIgnore) continue;
        const ClassId p = pred.data[i];
        if (g >= n_ || p >= n_) throw ShapeError("class id outside the confusion matrix");
        ++counts_[static_cast<std::size_t>(g) * n_ + p];
    }
}

void ConfusionAccumulator::merge(const ConfusionAccumulator& other) {
    if (other.n_ != n_) throw ShapeError("confusion matrices differ in size");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

long ConfusionAccumulator::true_positive(ClassId c) const { return count(c, c); }

long ConfusionAccumulator::false_positive(ClassId c) const {
    long s = 0;
    for (int g = 0; g < n_; ++g)
        if (g != c) s += count(static_cast<ClassId>(g), c);
    return s;
}

long ConfusionAccumulator::false_negative(ClassId c) const {
    long s = 0;
    for (int p = 0; p < n_; ++p)
        if (p != c) s += count(c, static_cast<ClassId>(p));
    return s;
}

std::optional<double> ConfusionAccumulator::iou(ClassId c) const {
    const long tp = true_positive(c), denom = tp + false_positive(c) + false_negative(c);
    if (denom == 0) return std::nullopt;
    return static_cast<double>(tp) / static_cast<double>(denom);
}

ConfusionAccumulator confusion_accumulate(const LabelMap& pred, const LabelMap& gt, ConfusionAccumulator acc) {
    acc.add(pred, gt);
    return acc;
}

GroupedMiou grouped_miou(const MetricReport& report, const TaskSchedule& schedule, int base_step_boundary,
                         int upto_step) {
    auto mean_of = [&](const std::set<ClassId>& classes) {
        double sum = 0.0;
        int n = 0;
        for (ClassId c : classes) {
            auto it = report.per_class_iou.find(c);
            if (it == report.per_class_iou.end() || !it->second) continue;
            sum += *it->second;
            ++n;
        }
        return n ? sum / n : 0.0;
    };
    std::set<ClassId> base = schedule.learned_through(std::min(base_step_boundary, upto_step));
    base.insert(kBackground);
    std::set<ClassId> inc;
    for (int t = base_step_boundary + 1; t <= upto_step; ++t) {
        const auto& s = schedule.step_classes(t);
        inc.insert(s.begin(), s.end());
    }
    std::set<ClassId> all = base;
    all.insert(inc.begin(), inc.end());
    return {mean_of(base), mean_of(inc), mean_of(all)};
}

void BackgroundMisclassCounter::add(const LabelMap& pred, const LabelMap& gt, const std::set<ClassId>& targets) {
    if (pred.height != gt.height || pred.width != gt.width) throw ShapeError("prediction and ground truth differ");
    for (std::size_t i = 0; i < gt.data.size(); ++i) {
        if (!targets.contains(gt.data[i])) continue;
        ++target_pixels;
        as_background += pred.data[i] == kBackground;
    }
}

double bg_misclass_rate(const LabelMap& pred, const LabelMap& gt, const std::set<ClassId>& target_classes) {
    BackgroundMisclassCounter counter;
    counter.add(pred, gt, target_classes);
    return counter.rate();
}

nlohmann::json to_json(const MetricReport& report) {
    nlohmann::json per_class = nlohmann::json::object();
    for (const auto& [c, v] : report.per_class_iou) per_class[std::to_string(c)] = v ? nlohmann::json(*v) : nlohmann::json(nullptr);
    return {{"per_class", per_class},        {"base", report.grouped.base}, {"inc", report.grouped.inc},
            {"all", report.grouped.all},     {"bg_misclass", report.bg_misclass_rate},
            {"step", report.step}};
}

MetricReport metric_report_from_json(const nlohmann::json& j) {
    MetricReport r;
    r.step = j.at("step").get<int>();
    r.grouped = {j.at("base").get<double>(), j.at("inc").get<double>(), j.at("all").get<double>()};
    r.bg_misclass_rate = j.at("bg_misclass").get<double>();
    for (const auto& [key, value] : j.at("per_class").items()) {
        const auto c = static_cast<ClassId>(std::stoi(key));
        r.per_class_iou[c] = value.is_null() ? std::nullopt : std::optional<double>(value.get<double>());
    }
    return r;
}

}  // namespace eir
