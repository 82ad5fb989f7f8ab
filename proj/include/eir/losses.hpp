#pragma once

#include <set>
#include <span>

#include "eir/memory.hpp"
#include "eir/model.hpp"
#include "eir/placement.hpp"
#include "eir/tensor.hpp"

namespace eir {

inline constexpr double kProbEpsilon = 1e-7;

/// Terms of the training objective for one sample.
struct LossBreakdown {
    double mbce_instance = 0.0;
    double mbce_image = 0.0;
    double rskd = 0.0;
    double alpha = 0.0;
    double total = 0.0;
};

/// Mean over valid pixels and all classes of the binary cross-entropy between
/// independent per-class probabilities (clamped to [ε, 1-ε]) and soft targets.
double mbce(const Tensor3& per_class_probs, const Tensor3& targets, const Mask& valid);

/// Region-specific distillation. Pixels whose hard label is background or an old
/// class match the full old distribution; pixels of new classes only tie the new
/// model's (new + background) mass to the old background probability. Normalized by
/// H*W, sign chosen so that the value is a cross-entropy (non-negative).
/// `old_classes` excludes background; channel c scores class c.
double rskd(const Tensor3& old_probs, const Tensor3& new_probs, const LabelMap& hard_label,
            const std::set<ClassId>& old_classes, const std::set<ClassId>& new_classes);

/// Loss value plus its gradient with respect to the raw scores.
struct ScoredLoss {
    double value = 0.0;
    Tensor3 grad;
};

/// mbce on sigmoid(scores).
ScoredLoss mbce_from_scores(const Tensor3& scores, const Tensor3& targets, const Mask& valid);
/// rskd on softmax(scores), computed in log space.
ScoredLoss rskd_from_scores(const Tensor3& old_probs, const Tensor3& new_scores, const LabelMap& hard_label,
                            const std::set<ClassId>& old_classes, const std::set<ClassId>& new_classes);

/// Instance-alone training target: class inside the mask, background outside.
Tensor3 instance_targets(const InstanceRecord& record, int num_channels);

/// Full objective for one fused sample and the raw instances pasted into it:
/// mbce on each instance crop (averaged), mbce on the fused image, alpha * rskd.
/// With no old model the rskd term is zero. When `grads` is given, weight * dL/dθ
/// is accumulated into it.
LossBreakdown total_loss(const FusedSample& fused, std::span<const InstanceRecord> instances,
                         const SegPredictor& model, const ModelSnapshot* old_model, double alpha,
                         Parameters* grads = nullptr, double weight = 1.0);

}  // namespace eir
