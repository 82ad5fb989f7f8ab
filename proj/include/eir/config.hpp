#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "eir/combination.hpp"
#include "eir/placement.hpp"
#include "eir/protocol.hpp"

namespace eir {

enum class ReplayStrategy { none, image_replay, vanilla_instance, random_copy_paste, eir };

std::string_view to_string(ReplayStrategy s);
ReplayStrategy parse_strategy(std::string_view text);

/// Whether the distillation term is used: `automatic` enables it for eir only.
enum class RskdMode { automatic, on, off };

struct DatasetConfig {
    std::string kind = "synthetic";  // "synthetic" or "voc"
    SyntheticConfig train;
    int test_samples_per_class = 8;
    std::uint64_t test_seed = 1000;
    /// voc: root/train and root/test in images/ masks/ palette.json layout.
    std::filesystem::path root;
    int num_classes = 6;
};

struct RunConfig {
    std::string name = "run";
    std::string schedule = "3-1-1-1";
    ScheduleMode mode = ScheduleMode::overlapped;
    ReplayStrategy strategy = ReplayStrategy::eir;

    int epochs = 20;
    int base_epochs = 20;
    double lr_base = 0.01;
    double lr_inc = 0.001;
    double momentum = 0.9;
    int batch_size = 24;

    int capacity = 60;
    int min_pixels = 16;
    int min_new_pixels = 1;

    double tau = kDefaultTau;
    SelectionOptions selection;
    FusionOptions fusion;

    double alpha = 5.0;
    /// Reserved; read and recorded, consumed by nothing.
    double beta = 0.05;
    RskdMode rskd = RskdMode::automatic;
    /// Stored images per new image in a batch, for image replay.
    double replay_ratio = 1.0 / 3.0;

    int model_width = 8;
    std::uint64_t seed = 0;
    int base_step_boundary = 1;

    DatasetConfig dataset;

    int num_classes() const { return dataset.kind == "voc" ? dataset.num_classes : dataset.train.num_classes; }
    bool uses_rskd() const {
        return rskd == RskdMode::on || (rskd == RskdMode::automatic && strategy == ReplayStrategy::eir);
    }
};

/// Throws ConfigError on unknown keys, wrong types or invalid values.
RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& config);
/// Reads a config file, or the `config` entry of a run manifest.
RunConfig load_run_config(const std::filesystem::path& file);
void validate(const RunConfig& config);

}  // namespace eir
