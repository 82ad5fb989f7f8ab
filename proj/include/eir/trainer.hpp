#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "eir/combination.hpp"
#include "eir/config.hpp"
#include "eir/losses.hpp"
#include "eir/memory.hpp"
#include "eir/metrics.hpp"
#include "eir/model.hpp"
#include "eir/placement.hpp"
#include "eir/protocol.hpp"

namespace eir {

/// Class-balanced store of whole training images for image replay. Each image
/// belongs to the class of its step that covers the most pixels.
class ImageBuffer {
public:
    explicit ImageBuffer(int capacity = 0) : capacity_(capacity) {}

    int capacity() const { return capacity_; }
    const std::map<ClassId, std::vector<SegSample>>& per_class() const { return per_class_; }
    std::size_t size() const;
    bool empty() const { return size() == 0; }
    std::vector<const SegSample*> all() const;

    /// Adds the step's images under quotas re-derived over every learned class.
    void rebalance(const StepDataset& dataset);

private:
    int capacity_;
    std::set<ClassId> learned_;
    std::map<ClassId, std::vector<SegSample>> per_class_;
};

/// One element of a training batch: the image to segment and the raw instances
/// whose standalone loss is added to it.
struct TrainItem {
    FusedSample fused;
    std::vector<InstanceRecord> instances;
    std::vector<FusionEvent> log;
};

/// Read-only state a strategy needs to turn a sample into training items.
struct ReplayContext {
    const RunConfig* config = nullptr;
    const MemoryBuffer* buffer = nullptr;
    const ImageBuffer* images = nullptr;
    int num_channels = 0;
    int step = 1;
    /// Cached for eir; empty ranking for samples without one.
    const std::vector<PotentialClassRanking>* rankings = nullptr;
};

/// Items contributed by one step sample under the configured strategy.
std::vector<TrainItem> make_items(const SegSample& sample, std::size_t sample_index, const ReplayContext& ctx,
                                  std::mt19937_64& rng);

/// Stored whole images added to a batch of `batch_new` step samples.
int replay_count(int batch_new, double ratio);

/// Anchor drawn uniformly among the positions that keep the unscaled instance inside
/// the image (or at 0 along an axis the instance does not fit).
PlacementPlan random_placement(const InstanceRecord& record, int height, int width, const FitOptions& fit,
                               std::mt19937_64& rng);

/// Evaluation on held-out samples after step t: labels of classes not yet learned
/// count as background. bg_misclass covers the classes learned before step t (all
/// learned classes at step 1).
MetricReport evaluate(const SegPredictor& model, const std::vector<SegSample>& test, const TaskSchedule& schedule,
                      int step, int base_step_boundary);

struct EpochLoss {
    int step = 0;
    int epoch = 0;
    double mbce_instance = 0.0;
    double mbce_image = 0.0;
    double rskd = 0.0;
    double total = 0.0;
};

struct FusionLogEntry {
    int step = 0;
    int epoch = 0;
    std::string sample_id;
    FusionEvent event;
};

struct StepState {
    int step = 0;
    const SegPredictor* model = nullptr;
    const MemoryBuffer* buffer = nullptr;
    const ImageBuffer* images = nullptr;
    const MetricReport* report = nullptr;
    const StepDataset* dataset = nullptr;
};

struct TrainHooks {
    std::function<void(const StepState&)> on_step_end;
    std::function<void(const EpochLoss&)> on_epoch_end;
    /// Number of fusion events kept in RunResult::fusion_log (the rest are counted only).
    std::size_t fusion_log_limit = 100000;
};

struct RunResult {
    TaskSchedule schedule;
    std::vector<MetricReport> reports;
    std::vector<EpochLoss> losses;
    std::vector<FusionLogEntry> fusion_log;
    std::size_t fusion_events = 0;
    std::size_t fusion_skips = 0;
    std::unique_ptr<SegPredictor> model;
    MemoryBuffer buffer;
    ImageBuffer images;
};

/// Runs every step of the schedule. Deterministic for a given config and data.
/// Throws DivergenceError when the loss or a parameter stops being finite.
RunResult train_continual(const RunConfig& config, const std::vector<SegSample>& train,
                          const std::vector<SegSample>& test, const TrainHooks& hooks = {});

/// Seeded generator for one (purpose, step, epoch, index) slot of a run.
std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t purpose, std::uint64_t step, std::uint64_t epoch,
                           std::uint64_t index);

}  // namespace eir
