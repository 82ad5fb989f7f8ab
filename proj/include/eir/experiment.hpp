#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "eir/config.hpp"
#include "eir/trainer.hpp"

namespace eir {

std::string code_version();

struct Datasets {
    std::vector<SegSample> train;
    std::vector<SegSample> test;
};

/// Synthetic data is generated from the config; voc data is read from root/train and root/test.
Datasets load_datasets(const RunConfig& config);

/// Writes train/ and test/ folders in the voc layout.
void write_datasets(const RunConfig& config, const std::filesystem::path& out);

/// Trains and writes into `out`: manifest.json, metrics.json (final step),
/// metrics_history.json, losses.csv, fusion_log.csv, step_<t>.ckpt and
/// buffer/step_<t>/ for every step.
RunResult run_experiment(const RunConfig& config, const std::filesystem::path& out);

struct ComparisonRow {
    std::string run;
    std::string strategy;
    std::uint64_t seed = 0;
    int step = 0;
    double base = 0.0;
    double inc = 0.0;
    double all = 0.0;
    double bg_misclass = 0.0;
};

/// One row per run directory, read from manifest.json and metrics.json.
std::vector<ComparisonRow> compare_runs(const std::vector<std::filesystem::path>& run_dirs);
std::string format_comparison(const std::vector<ComparisonRow>& rows);

struct RegionRow {
    int region_n = 0;
    double base = 0.0;
    double inc = 0.0;
    double all = 0.0;
    double bg_misclass = 0.0;
    std::size_t fusion_events = 0;
    std::size_t fusion_skips = 0;
};

/// Trains `config` with eir once per region count and reports the final step.
std::vector<RegionRow> region_sensitivity(RunConfig config, const std::vector<int>& region_counts);
/// Table with one row per region count; column labels name the class ranges of each group.
std::string format_region_report(const std::vector<RegionRow>& rows, const RunConfig& config);

/// Rebuilds n fused samples of the last step from a finished run (old model and
/// buffer of the previous step) and writes <id>_image.png / <id>_label.png to `out`.
/// Returns the written files.
std::vector<std::filesystem::path> dump_fusions(const std::filesystem::path& run_dir, int n,
                                                const std::filesystem::path& out);

}  // namespace eir
