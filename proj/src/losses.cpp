#include "eir/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "eir/error.hpp"

namespace eir {

namespace {

void check_same_shape(const Tensor3& a, const Tensor3& b, const char* what) {
    if (a.channels != b.channels || a.height != b.height || a.width != b.width)
        throw ShapeError(std::string(what) + ": tensor shapes differ");
}

void check_mask(const Tensor3& t, const Mask& m, const char* what) {
    if (t.height != m.height || t.width != m.width) throw ShapeError(std::string(what) + ": mask size differs");
}

enum class Branch { none, old_region, new_region };

struct RskdSetup {
    std::vector<std::uint8_t> in_a;  // per channel: background or old class
    std::vector<std::uint8_t> in_s;  // per channel: background or new class
};

RskdSetup rskd_setup(int k_old, int k_new, const std::set<ClassId>& old_classes,
                     const std::set<ClassId>& new_classes) {
    for (ClassId c : old_classes)
        if (new_classes.contains(c)) throw ShapeError("old and new class sets overlap");
    if (old_classes.contains(kBackground) || new_classes.contains(kBackground))
        throw ShapeError("background is implicit in rskd class sets");
    if (k_new != k_old + static_cast<int>(new_classes.size()))
        throw ShapeError("new model must have exactly one channel per new class more than the old model");
    RskdSetup s{std::vector<std::uint8_t>(k_new, 0), std::vector<std::uint8_t>(k_new, 0)};
    s.in_a[kBackground] = s.in_s[kBackground] = 1;
    for (ClassId c : old_classes) {
        if (c >= k_old) throw ShapeError("old class " + std::to_string(c) + " has no old-model channel");
        s.in_a[c] = 1;
    }
    for (ClassId c : new_classes) {
        if (c >= k_new) throw ShapeError("new class " + std::to_string(c) + " has no channel");
        s.in_s[c] = 1;
    }
    return s;
}

Branch branch_of(ClassId label, const RskdSetup& s) {
    if (label == kIgnore) return Branch::none;
    if (label < s.in_a.size() && s.in_a[label]) return Branch::old_region;
    if (label < s.in_s.size() && s.in_s[label]) return Branch::new_region;
    throw ShapeError("label " + std::to_string(label) + " is neither an old nor a new class");
}

double safe_log(double p) { return std::log(std::max(p, 1e-300)); }

}  // namespace

double mbce(const Tensor3& probs, const Tensor3& targets, const Mask& valid) {
    check_same_shape(probs, targets, "mbce");
    check_mask(probs, valid, "mbce");
    const std::size_t n = probs.plane_size();
    double sum = 0.0;
    long counted = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!valid.data[i]) continue;
        ++counted;
        for (int c = 0; c < probs.channels; ++c) {
            const double p = std::clamp(probs.data[c * n + i], kProbEpsilon, 1.0 - kProbEpsilon);
            const double t = targets.data[c * n + i];
            sum -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
        }
    }
    return counted ? sum / (static_cast<double>(counted) * probs.channels) : 0.0;
}

ScoredLoss mbce_from_scores(const Tensor3& scores, const Tensor3& targets, const Mask& valid) {
    check_same_shape(scores, targets, "mbce");
    check_mask(scores, valid, "mbce");
    const std::size_t n = scores.plane_size();
    long counted = 0;
    for (std::size_t i = 0; i < n; ++i) counted += valid.data[i] != 0;
    ScoredLoss out{0.0, Tensor3(scores.channels, scores.height, scores.width)};
    if (!counted) return out;
    const double norm = 1.0 / (static_cast<double>(counted) * scores.channels);
    for (int c = 0; c < scores.channels; ++c)
        for (std::size_t i = 0; i < n; ++i) {
            if (!valid.data[i]) continue;
            const std::size_t k = c * n + i;
            const double raw = 1.0 / (1.0 + std::exp(-scores.data[k]));
            const double p = std::clamp(raw, kProbEpsilon, 1.0 - kProbEpsilon);
            const double t = targets.data[k];
            out.value -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
            // The clamp is flat outside [ε, 1-ε].
            out.grad.data[k] = (p == raw) ? (raw - t) * norm : 0.0;
        }
    out.value *= norm;
    return out;
}

double rskd(const Tensor3& old_probs, const Tensor3& new_probs, const LabelMap& hard_label,
            const std::set<ClassId>& old_classes, const std::set<ClassId>& new_classes) {
    if (old_probs.height != new_probs.height || old_probs.width != new_probs.width ||
        hard_label.height != new_probs.height || hard_label.width != new_probs.width)
        throw ShapeError("rskd: spatial sizes differ");
    const auto setup = rskd_setup(old_probs.channels, new_probs.channels, old_classes, new_classes);
    const std::size_t n = new_probs.plane_size();
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        switch (branch_of(hard_label.data[i], setup)) {
            case Branch::none: break;
            case Branch::old_region:
                for (int c = 0; c < old_probs.channels; ++c)
                    if (setup.in_a[c]) sum -= old_probs.data[c * n + i] * safe_log(new_probs.data[c * n + i]);
                break;
            case Branch::new_region: {
                double mass = 0.0;
                for (int k = 0; k < new_probs.channels; ++k)
                    if (setup.in_s[k]) mass += new_probs.data[k * n + i];
                sum -= old_probs.data[kBackground * n + i] * safe_log(mass);
                break;
            }
        }
    }
    return sum / static_cast<double>(n);
}

ScoredLoss rskd_from_scores(const Tensor3& old_probs, const Tensor3& new_scores, const LabelMap& hard_label,
                            const std::set<ClassId>& old_classes, const std::set<ClassId>& new_classes) {
    if (old_probs.height != new_scores.height || old_probs.width != new_scores.width ||
        hard_label.height != new_scores.height || hard_label.width != new_scores.width)
        throw ShapeError("rskd: spatial sizes differ");
    const auto setup = rskd_setup(old_probs.channels, new_scores.channels, old_classes, new_classes);
    const int K = new_scores.channels;
    const std::size_t n = new_scores.plane_size();
    const double norm = 1.0 / static_cast<double>(n);
    ScoredLoss out{0.0, Tensor3(K, new_scores.height, new_scores.width)};
    std::vector<double> s(K), p(K);

    for (std::size_t i = 0; i < n; ++i) {
        const Branch branch = branch_of(hard_label.data[i], setup);
        if (branch == Branch::none) continue;
        double m = -INFINITY;
        for (int k = 0; k < K; ++k) {
            s[k] = new_scores.data[k * n + i];
            m = std::max(m, s[k]);
        }
        double z = 0.0;
        for (int k = 0; k < K; ++k) z += std::exp(s[k] - m);
        const double lse = m + std::log(z);
        for (int k = 0; k < K; ++k) p[k] = std::exp(s[k] - lse);

        if (branch == Branch::old_region) {
            double q_total = 0.0;
            for (int c = 0; c < old_probs.channels; ++c) {
                if (!setup.in_a[c]) continue;
                const double q = old_probs.data[c * n + i];
                out.value -= q * (s[c] - lse);
                q_total += q;
            }
            for (int k = 0; k < K; ++k) {
                const double q = (k < old_probs.channels && setup.in_a[k]) ? old_probs.data[k * n + i] : 0.0;
                out.grad.data[k * n + i] = (q_total * p[k] - q) * norm;
            }
        } else {
            const double w = old_probs.data[kBackground * n + i];
            double ms = -INFINITY;
            for (int k = 0; k < K; ++k)
                if (setup.in_s[k]) ms = std::max(ms, s[k]);
            double zs = 0.0;
            for (int k = 0; k < K; ++k)
                if (setup.in_s[k]) zs += std::exp(s[k] - ms);
            const double lse_s = ms + std::log(zs);
            out.value -= w * (lse_s - lse);
            for (int k = 0; k < K; ++k) {
                const double within = setup.in_s[k] ? std::exp(s[k] - lse_s) : 0.0;
                out.grad.data[k * n + i] = w * (p[k] - within) * norm;
            }
        }
    }
    out.value *= norm;
    return out;
}

Tensor3 instance_targets(const InstanceRecord& record, int num_channels) {
    if (record.class_id >= num_channels) throw ShapeError("instance class has no channel");
    Tensor3 t(num_channels, record.height(), record.width());
    for (int y = 0; y < record.height(); ++y)
        for (int x = 0; x < record.width(); ++x)
            t.at(record.mask.at(y, x) ? record.class_id : kBackground, y, x) = 1.0;
    return t;
}

LossBreakdown total_loss(const FusedSample& fused, std::span<const InstanceRecord> instances,
                         const SegPredictor& model, const ModelSnapshot* old_model, double alpha, Parameters* grads,
                         double weight) {
    LossBreakdown out;
    out.alpha = alpha;
    const int K = model.num_outputs();
    if (fused.soft_label.channels != K) throw ShapeError("soft label channels differ from model outputs");

    if (!instances.empty()) {
        const double share = 1.0 / static_cast<double>(instances.size());
        for (const auto& inst : instances) {
            Activations tape;
            const Tensor3 scores = model.forward(inst.pixels, tape);
            const Mask all(inst.height(), inst.width(), 1);
            auto term = mbce_from_scores(scores, instance_targets(inst, K), all);
            out.mbce_instance += share * term.value;
            if (grads) {
                for (auto& g : term.grad.data) g *= weight * share;
                model.backward(tape, term.grad, *grads);
            }
        }
    }

    Activations tape;
    const Tensor3 scores = model.forward(fused.image, tape);
    auto image_term = mbce_from_scores(scores, fused.soft_label, fused.valid);
    out.mbce_image = image_term.value;
    Tensor3 grad = std::move(image_term.grad);

    if (old_model) {
        const int k_old = old_model->num_outputs();
        std::set<ClassId> old_classes, new_classes;
        for (int c = 1; c < k_old; ++c) old_classes.insert(static_cast<ClassId>(c));
        for (int c = k_old; c < K; ++c) new_classes.insert(static_cast<ClassId>(c));
        auto kd = rskd_from_scores(old_model->probabilities(fused.image), scores, hard_labels(fused), old_classes,
                                   new_classes);
        out.rskd = kd.value;
        if (grads && alpha != 0.0)
            for (std::size_t i = 0; i < grad.data.size(); ++i) grad.data[i] += alpha * kd.grad.data[i];
    }
    if (grads) {
        for (auto& g : grad.data) g *= weight;
        model.backward(tape, grad, *grads);
    }
    out.total = out.mbce_instance + out.mbce_image + alpha * out.rskd;
    return out;
}

}  // namespace eir
