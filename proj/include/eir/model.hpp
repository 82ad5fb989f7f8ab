#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "eir/tensor.hpp"

namespace eir {

/// Named list of parameter tensors, flattened per tensor.
struct Parameters {
    std::vector<std::vector<double>> tensors;

    std::size_t count() const;
    Parameters zeros_like() const;
    void set_zero();
    /// this += a * other
    void axpy(double a, const Parameters& other);
    double& flat(std::size_t i);
    double flat(std::size_t i) const;
    bool all_finite() const;

    bool operator==(const Parameters&) const = default;
};

/// Intermediate values recorded by a forward pass for the matching backward pass.
struct Activations {
    std::vector<Tensor3> saved;
};

/// Per-pixel classifier over background + every class seen so far. Channel c
/// scores class id c.
class SegPredictor {
public:
    virtual ~SegPredictor() = default;

    virtual int num_outputs() const = 0;
    /// Raw scores (pre-normalization), shape (num_outputs, H, W).
    virtual Tensor3 forward(const Image& image) const = 0;
    virtual Tensor3 forward(const Image& image, Activations& tape) const = 0;
    /// grads += dL/dθ given dL/d(scores).
    virtual void backward(const Activations& tape, const Tensor3& grad_scores, Parameters& grads) const = 0;

    virtual const Parameters& parameters() const = 0;
    virtual Parameters& parameters() = 0;

    /// Appends output channels for `new_classes`, which must be the next ids in order.
    /// The new channels start with zero weights and bias, so existing channels are untouched.
    virtual void extend_head(const std::set<ClassId>& new_classes) = 0;

    virtual std::unique_ptr<SegPredictor> clone() const = 0;
    virtual int width() const = 0;
};

/// Scores for every image of a batch; all images must share one size.
std::vector<Tensor3> forward_batch(const SegPredictor& model, std::span<const Image> batch);

/// Per-pixel softmax over channels.
Tensor3 softmax(const Tensor3& scores);
/// Element-wise logistic function: independent per-class probabilities for mBCE.
Tensor3 sigmoid(const Tensor3& scores);
/// Argmax over channels, ties to the lower channel.
LabelMap argmax_labels(const Tensor3& scores);

enum class KernelBackend { parallel, reference };

/// Small encoder-decoder: three resolution levels (1, 1/2, 1/4), skip connections,
/// nearest upsampling, 1x1 classifier head.
class ConvSegNet final : public SegPredictor {
public:
    ConvSegNet(int num_outputs, int width, std::uint64_t seed);

    int num_outputs() const override { return num_outputs_; }
    Tensor3 forward(const Image& image) const override;
    Tensor3 forward(const Image& image, Activations& tape) const override;
    void backward(const Activations& tape, const Tensor3& grad_scores, Parameters& grads) const override;
    const Parameters& parameters() const override { return params_; }
    Parameters& parameters() override { return params_; }
    void extend_head(const std::set<ClassId>& new_classes) override;
    std::unique_ptr<SegPredictor> clone() const override;
    int width() const override { return width_; }

    void set_backend(KernelBackend backend) { backend_ = backend; }

private:
    int num_outputs_;
    int width_;
    Parameters params_;
    KernelBackend backend_ = KernelBackend::parallel;
};

/// Freshly initialized ConvSegNet with num_classes + 1 outputs.
std::unique_ptr<SegPredictor> reference_model(int num_classes, int width, std::uint64_t seed = 0);

/// Frozen copy of a predictor.
class ModelSnapshot {
public:
    ModelSnapshot(std::shared_ptr<const SegPredictor> model, int step) : model_(std::move(model)), step_(step) {}

    const SegPredictor& model() const { return *model_; }
    int step() const { return step_; }
    int num_outputs() const { return model_->num_outputs(); }
    Tensor3 probabilities(const Image& image) const { return softmax(model_->forward(image)); }

private:
    std::shared_ptr<const SegPredictor> model_;
    int step_;
};

ModelSnapshot snapshot(const SegPredictor& model, int step);

struct CheckpointMeta {
    int step = 0;
    std::vector<ClassId> classes;  // learned classes, background excluded
    std::uint64_t seed = 0;
};

/// Binary `step_t.ckpt`: magic line, json metadata, raw parameter doubles.
void save_checkpoint(const std::filesystem::path& file, const SegPredictor& model, const CheckpointMeta& meta);
std::unique_ptr<SegPredictor> load_checkpoint(const std::filesystem::path& file, CheckpointMeta* meta = nullptr);

}  // namespace eir
