#include "eir/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <nlohmann/json.hpp>

#include "eir/error.hpp"
#include "eir/image_io.hpp"

#ifndef EIR_VERSION
#define EIR_VERSION "0.0.0"
#endif

namespace eir {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_json(const fs::path& file, const json& j) {
    std::ofstream out(file);
    if (!out) throw DataError("cannot write " + file.string());
    out << j.dump(2) << '\n';
}

json read_json(const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw DataError("cannot open " + file.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw DataError(file.string() + " is not valid json: " + e.what());
    }
}

std::string utc_now() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

std::string ckpt_name(int t) { return "step_" + std::to_string(t) + ".ckpt"; }
fs::path buffer_dir(const fs::path& run, int t) { return run / "buffer" / ("step_" + std::to_string(t)); }

io::Gray8 indices_of(const LabelMap& label) {
    io::Gray8 g{label.height, label.width, std::vector<std::uint8_t>(label.pixels())};
    for (std::size_t i = 0; i < g.data.size(); ++i)
        g.data[i] = label.data[i] == kIgnore ? 255 : static_cast<std::uint8_t>(label.data[i]);
    return g;
}

}  // namespace

std::string code_version() { return "eir " EIR_VERSION; }

Datasets load_datasets(const RunConfig& config) {
    if (config.dataset.kind == "voc") {
        Datasets d{load_voc_format(config.dataset.root / "train"), load_voc_format(config.dataset.root / "test")};
        if (d.train.empty()) throw DataError("no training samples under " + (config.dataset.root / "train").string());
        return d;
    }
    SyntheticConfig test_cfg = config.dataset.train;
    test_cfg.samples_per_class = config.dataset.test_samples_per_class;
    test_cfg.seed = config.dataset.test_seed;
    return {generate_synthetic_dataset(config.dataset.train), generate_synthetic_dataset(test_cfg)};
}

void write_datasets(const RunConfig& config, const fs::path& out) {
    const Datasets d = load_datasets(config);
    save_voc_format(out / "train", d.train, config.num_classes());
    save_voc_format(out / "test", d.test, config.num_classes());
}

RunResult run_experiment(const RunConfig& config, const fs::path& out) {
    fs::create_directories(out);
    const auto started = std::chrono::steady_clock::now();
    json manifest = {{"code_version", code_version()},
                     {"config", to_json(config)},
                     {"seed", config.seed},
                     {"started_at", utc_now()},
                     {"outputs",
                      {{"metrics", "metrics.json"},
                       {"history", "metrics_history.json"},
                       {"losses", "losses.csv"},
                       {"fusion_log", "fusion_log.csv"},
                       {"checkpoints", json::array()},
                       {"buffers", json::array()}}}};
    write_json(out / "manifest.json", manifest);

    const Datasets data = load_datasets(config);
    std::ofstream losses(out / "losses.csv");
    losses << "step,epoch,mbce_inst,mbce_img,rskd,total\n" << std::setprecision(10);

    TrainHooks hooks;
    hooks.on_epoch_end = [&](const EpochLoss& l) {
        losses << l.step << ',' << l.epoch << ',' << l.mbce_instance << ',' << l.mbce_image << ',' << l.rskd << ','
               << l.total << '\n';
    };
    hooks.on_step_end = [&](const StepState& s) {
        CheckpointMeta meta;
        meta.step = s.step;
        for (int c = 1; c < s.model->num_outputs(); ++c) meta.classes.push_back(static_cast<ClassId>(c));
        meta.seed = config.seed;
        save_checkpoint(out / ckpt_name(s.step), *s.model, meta);
        save_buffer(*s.buffer, buffer_dir(out, s.step));
        manifest["outputs"]["checkpoints"].push_back(ckpt_name(s.step));
        manifest["outputs"]["buffers"].push_back(fs::relative(buffer_dir(out, s.step), out).string());
    };
    RunResult result = train_continual(config, data.train, data.test, hooks);

    json history = json::array();
    for (const auto& r : result.reports) history.push_back(to_json(r));
    write_json(out / "metrics_history.json", history);
    write_json(out / "metrics.json", to_json(result.reports.back()));

    std::ofstream fusion(out / "fusion_log.csv");
    fusion << "step,epoch,sample_id,class_id,source_id,region,scale,lambda,placed,reason\n" << std::setprecision(6);
    for (const auto& e : result.fusion_log)
        fusion << e.step << ',' << e.epoch << ',' << e.sample_id << ',' << e.event.class_id << ','
               << e.event.source_id << ',' << e.event.region_index << ',' << e.event.scale << ',' << e.event.lambda
               << ',' << (e.event.placed ? 1 : 0) << ",\"" << e.event.reason << "\"\n";

    manifest["fusion_events"] = result.fusion_events;
    manifest["fusion_skips"] = result.fusion_skips;
    manifest["wall_clock_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    write_json(out / "manifest.json", manifest);
    return result;
}

std::vector<ComparisonRow> compare_runs(const std::vector<fs::path>& run_dirs) {
    std::vector<ComparisonRow> rows;
    for (const auto& dir : run_dirs) {
        const json manifest = read_json(dir / "manifest.json");
        const MetricReport report = metric_report_from_json(read_json(dir / "metrics.json"));
        const json& cfg = manifest.at("config");
        rows.push_back({dir.filename().string(), cfg.at("strategy").get<std::string>(),
                        manifest.at("seed").get<std::uint64_t>(), report.step, report.grouped.base,
                        report.grouped.inc, report.grouped.all, report.bg_misclass_rate});
    }
    return rows;
}

std::string format_comparison(const std::vector<ComparisonRow>& rows) {
    std::ostringstream os;
    char line[256];
    std::snprintf(line, sizeof line, "%-24s %-18s %6s %4s %7s %7s %7s %8s\n", "run", "strategy", "seed", "step",
                  "base", "inc", "all", "bg_mis");
    os << line;
    for (const auto& r : rows) {
        std::snprintf(line, sizeof line, "%-24s %-18s %6llu %4d %7.2f %7.2f %7.2f %8.4f\n", r.run.c_str(),
                      r.strategy.c_str(), static_cast<unsigned long long>(r.seed), r.step, 100.0 * r.base,
                      100.0 * r.inc, 100.0 * r.all, r.bg_misclass);
        os << line;
    }
    return os.str();
}

std::vector<RegionRow> region_sensitivity(RunConfig config, const std::vector<int>& region_counts) {
    config.strategy = ReplayStrategy::eir;
    const Datasets data = load_datasets(config);
    std::vector<RegionRow> rows;
    for (int n : region_counts) {
        config.fusion.region_n = n;
        validate(config);
        const RunResult r = train_continual(config, data.train, data.test);
        const MetricReport& last = r.reports.back();
        rows.push_back({n, last.grouped.base, last.grouped.inc, last.grouped.all, last.bg_misclass_rate,
                        r.fusion_events, r.fusion_skips});
    }
    return rows;
}

std::string format_region_report(const std::vector<RegionRow>& rows, const RunConfig& config) {
    const TaskSchedule schedule = TaskSchedule::parse(config.schedule, config.num_classes(), config.mode);
    const int boundary = std::min(config.base_step_boundary, schedule.num_steps());
    const int last_base = static_cast<int>(schedule.learned_through(boundary).size());
    const std::string base = "0-" + std::to_string(last_base);
    const std::string inc = std::to_string(last_base + 1) + "-" + std::to_string(config.num_classes());
    std::ostringstream os;
    char line[256];
    std::snprintf(line, sizeof line, "%-14s %8s %8s %8s %8s %10s\n", "region_number", base.c_str(), inc.c_str(),
                  "all", "bg_mis", "skipped");
    os << line;
    for (const auto& r : rows) {
        const std::string skipped = std::to_string(r.fusion_skips) + "/" + std::to_string(r.fusion_events);
        std::snprintf(line, sizeof line, "%-14d %8.2f %8.2f %8.2f %8.4f %10s\n", r.region_n, 100.0 * r.base,
                      100.0 * r.inc, 100.0 * r.all, r.bg_misclass, skipped.c_str());
        os << line;
    }
    return os.str();
}

std::vector<fs::path> dump_fusions(const fs::path& run_dir, int n, const fs::path& out) {
    const RunConfig config = load_run_config(run_dir / "manifest.json");
    const TaskSchedule schedule = TaskSchedule::parse(config.schedule, config.num_classes(), config.mode);
    const int T = schedule.num_steps();
    if (T < 2) throw ConfigError("fusions need at least two steps");
    std::shared_ptr<const SegPredictor> old_model = load_checkpoint(run_dir / ckpt_name(T - 1));
    const ModelSnapshot old(old_model, T - 1);
    const MemoryBuffer buffer = load_buffer(buffer_dir(run_dir, T - 1));
    const Datasets data = load_datasets(config);
    const StepDataset ds = build_step_dataset(data.train, schedule, T, {config.min_new_pixels});
    const int K = old.num_outputs() + static_cast<int>(schedule.step_classes(T).size());

    fs::create_directories(out);
    const auto colormap = io::voc_colormap();
    std::vector<fs::path> written;
    for (int i = 0; i < n && i < static_cast<int>(ds.samples.size()); ++i) {
        const SegSample& s = ds.samples[i];
        const auto ranking = rank_potential_classes(old.probabilities(s.image), s.label, config.tau);
        auto rng = stream_rng(config.seed, 99, T, 0, i);
        const auto picked = select_instances(ranking, buffer, config.selection, rng);
        const auto fused = fuse_all(s, picked, K, config.fusion, rng);
        const fs::path image = out / (s.id + "_image.png");
        const fs::path label = out / (s.id + "_label.png");
        io::write_rgb_png(image, io::quantize(fused.fused.image));
        io::write_indexed_png(label, indices_of(hard_labels(fused.fused)), colormap);
        written.push_back(image);
        written.push_back(label);
    }
    return written;
}

}  // namespace eir
