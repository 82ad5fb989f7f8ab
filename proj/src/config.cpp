#include "eir/config.hpp"

#include <fstream>
#include <set>

#include "eir/error.hpp"

namespace eir {

namespace {

using nlohmann::json;

const std::set<std::string> kTopKeys = {
    "name",        "schedule",      "mode",      "strategy",  "epochs",       "base_epochs",    "lr_base",
    "lr_inc",      "momentum",      "batch_size", "capacity", "min_pixels",   "min_new_pixels", "tau",
    "max_instances", "fallback",    "region_n",  "beta_a",    "beta_b",       "fixed_lambda",   "min_scale",
    "max_overlap", "alpha",         "beta",      "rskd",      "replay_ratio", "model_width",    "seed",
    "base_step_boundary", "dataset"};

const std::set<std::string> kDatasetKeys = {"kind",   "num_classes", "samples_per_class", "height",
                                            "width",  "seed",        "affinity",          "test_samples_per_class",
                                            "test_seed", "root"};

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be a json object");
    for (const auto& [key, value] : j.items())
        if (!allowed.contains(key)) throw ConfigError("unknown config key '" + key + "' in " + where);
}

template <class T>
void read(const json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config key '") + key + "': " + e.what());
    }
}

std::string_view to_string(RskdMode m) {
    switch (m) {
        case RskdMode::automatic: return "auto";
        case RskdMode::on: return "on";
        case RskdMode::off: return "off";
    }
    return "auto";
}

RskdMode parse_rskd(std::string_view text) {
    if (text == "auto") return RskdMode::automatic;
    if (text == "on") return RskdMode::on;
    if (text == "off") return RskdMode::off;
    throw ConfigError("rskd must be auto, on or off, got '" + std::string(text) + "'");
}

}  // namespace

std::string_view to_string(ReplayStrategy s) {
    switch (s) {
        case ReplayStrategy::none: return "none";
        case ReplayStrategy::image_replay: return "image_replay";
        case ReplayStrategy::vanilla_instance: return "vanilla_instance";
        case ReplayStrategy::random_copy_paste: return "random_copy_paste";
        case ReplayStrategy::eir: return "eir";
    }
    return "none";
}

ReplayStrategy parse_strategy(std::string_view text) {
    for (auto s : {ReplayStrategy::none, ReplayStrategy::image_replay, ReplayStrategy::vanilla_instance,
                   ReplayStrategy::random_copy_paste, ReplayStrategy::eir})
        if (to_string(s) == text) return s;
    throw ConfigError("unknown strategy '" + std::string(text) + "'");
}

RunConfig run_config_from_json(const json& j) {
    check_keys(j, kTopKeys, "config");
    RunConfig c;
    read(j, "name", c.name);
    read(j, "schedule", c.schedule);
    std::string text;
    if (j.contains("mode")) {
        read(j, "mode", text);
        c.mode = parse_schedule_mode(text);
    }
    if (j.contains("strategy")) {
        read(j, "strategy", text);
        c.strategy = parse_strategy(text);
    }
    read(j, "epochs", c.epochs);
    c.base_epochs = c.epochs;
    read(j, "base_epochs", c.base_epochs);
    read(j, "lr_base", c.lr_base);
    read(j, "lr_inc", c.lr_inc);
    read(j, "momentum", c.momentum);
    read(j, "batch_size", c.batch_size);
    read(j, "capacity", c.capacity);
    read(j, "min_pixels", c.min_pixels);
    read(j, "min_new_pixels", c.min_new_pixels);
    read(j, "tau", c.tau);
    read(j, "max_instances", c.selection.max_instances);
    read(j, "fallback", c.selection.fallback);
    read(j, "region_n", c.fusion.region_n);
    read(j, "beta_a", c.fusion.lambda.beta_a);
    read(j, "beta_b", c.fusion.lambda.beta_b);
    if (j.contains("fixed_lambda") && !j.at("fixed_lambda").is_null()) {
        double v = 0.0;
        read(j, "fixed_lambda", v);
        c.fusion.lambda.fixed = v;
    }
    read(j, "min_scale", c.fusion.fit.min_scale);
    if (j.contains("max_overlap") && !j.at("max_overlap").is_null()) {
        double v = 0.0;
        read(j, "max_overlap", v);
        c.fusion.max_overlap = v;
    }
    read(j, "alpha", c.alpha);
    read(j, "beta", c.beta);
    if (j.contains("rskd")) {
        read(j, "rskd", text);
        c.rskd = parse_rskd(text);
    }
    read(j, "replay_ratio", c.replay_ratio);
    read(j, "model_width", c.model_width);
    read(j, "seed", c.seed);
    read(j, "base_step_boundary", c.base_step_boundary);

    if (j.contains("dataset")) {
        const json& d = j.at("dataset");
        check_keys(d, kDatasetKeys, "dataset");
        read(d, "kind", c.dataset.kind);
        read(d, "num_classes", c.dataset.train.num_classes);
        c.dataset.num_classes = c.dataset.train.num_classes;
        read(d, "samples_per_class", c.dataset.train.samples_per_class);
        read(d, "height", c.dataset.train.height);
        read(d, "width", c.dataset.train.width);
        read(d, "seed", c.dataset.train.seed);
        read(d, "affinity", c.dataset.train.affinity);
        read(d, "test_samples_per_class", c.dataset.test_samples_per_class);
        read(d, "test_seed", c.dataset.test_seed);
        std::string root;
        read(d, "root", root);
        c.dataset.root = root;
    }
    validate(c);
    return c;
}

json to_json(const RunConfig& c) {
    json d = {{"kind", c.dataset.kind},
              {"num_classes", c.num_classes()},
              {"samples_per_class", c.dataset.train.samples_per_class},
              {"height", c.dataset.train.height},
              {"width", c.dataset.train.width},
              {"seed", c.dataset.train.seed},
              {"affinity", c.dataset.train.affinity},
              {"test_samples_per_class", c.dataset.test_samples_per_class},
              {"test_seed", c.dataset.test_seed},
              {"root", c.dataset.root.string()}};
    return {{"name", c.name},
            {"schedule", c.schedule},
            {"mode", std::string(to_string(c.mode))},
            {"strategy", std::string(to_string(c.strategy))},
            {"epochs", c.epochs},
            {"base_epochs", c.base_epochs},
            {"lr_base", c.lr_base},
            {"lr_inc", c.lr_inc},
            {"momentum", c.momentum},
            {"batch_size", c.batch_size},
            {"capacity", c.capacity},
            {"min_pixels", c.min_pixels},
            {"min_new_pixels", c.min_new_pixels},
            {"tau", c.tau},
            {"max_instances", c.selection.max_instances},
            {"fallback", c.selection.fallback},
            {"region_n", c.fusion.region_n},
            {"beta_a", c.fusion.lambda.beta_a},
            {"beta_b", c.fusion.lambda.beta_b},
            {"fixed_lambda", c.fusion.lambda.fixed ? json(*c.fusion.lambda.fixed) : json(nullptr)},
            {"min_scale", c.fusion.fit.min_scale},
            {"max_overlap", c.fusion.max_overlap ? json(*c.fusion.max_overlap) : json(nullptr)},
            {"alpha", c.alpha},
            {"beta", c.beta},
            {"rskd", std::string(to_string(c.rskd))},
            {"replay_ratio", c.replay_ratio},
            {"model_width", c.model_width},
            {"seed", c.seed},
            {"base_step_boundary", c.base_step_boundary},
            {"dataset", d}};
}

void validate(const RunConfig& c) {
    auto require = [](bool ok, const std::string& what) {
        if (!ok) throw ConfigError(what);
    };
    require(c.epochs >= 0 && c.base_epochs >= 0, "epochs must be non-negative");
    require(c.batch_size >= 1, "batch_size must be at least 1");
    require(c.lr_base >= 0.0 && c.lr_inc >= 0.0, "learning rates must be non-negative");
    require(c.momentum >= 0.0 && c.momentum < 1.0, "momentum must lie in [0, 1)");
    require(c.capacity >= 0, "capacity must be non-negative");
    require(c.min_pixels >= 1, "min_pixels must be at least 1");
    require(c.min_new_pixels >= 1, "min_new_pixels must be at least 1");
    require(c.tau >= 0.0 && c.tau <= 1.0, "tau must lie in [0, 1]");
    require(c.selection.max_instances >= 0, "max_instances must be non-negative");
    require(c.fusion.region_n >= 1, "region_n must be at least 1");
    require(c.fusion.lambda.beta_a > 0.0 && c.fusion.lambda.beta_b > 0.0, "beta_a and beta_b must be positive");
    if (c.fusion.lambda.fixed)
        require(*c.fusion.lambda.fixed >= 0.0 && *c.fusion.lambda.fixed <= 1.0, "fixed_lambda must lie in [0, 1]");
    require(c.fusion.fit.min_scale > 0.0 && c.fusion.fit.min_scale <= 1.0, "min_scale must lie in (0, 1]");
    if (c.fusion.max_overlap)
        require(*c.fusion.max_overlap >= 0.0 && *c.fusion.max_overlap <= 1.0, "max_overlap must lie in [0, 1]");
    require(c.alpha >= 0.0, "alpha must be non-negative");
    require(c.replay_ratio >= 0.0, "replay_ratio must be non-negative");
    require(c.model_width >= 8, "model_width must be at least 8");
    require(c.base_step_boundary >= 1, "base_step_boundary must be at least 1");
    require(c.dataset.kind == "synthetic" || c.dataset.kind == "voc", "dataset.kind must be synthetic or voc");
    require(c.num_classes() >= 1, "dataset.num_classes must be at least 1");
    if (c.dataset.kind == "synthetic") {
        require(c.dataset.train.samples_per_class >= 1, "dataset.samples_per_class must be at least 1");
        require(c.dataset.test_samples_per_class >= 1, "dataset.test_samples_per_class must be at least 1");
        require(c.dataset.train.height >= 32 && c.dataset.train.width >= 32, "dataset images must be at least 32x32");
    } else {
        require(!c.dataset.root.empty(), "dataset.root is required for voc data");
    }
    // Throws ScheduleRangeError / ConfigError on a bad schedule.
    (void)TaskSchedule::parse(c.schedule, c.num_classes(), c.mode);
}

RunConfig load_run_config(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw ConfigError("cannot open config " + file.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config " + file.string() + " is not valid json: " + e.what());
    }
    if (j.is_object() && j.contains("config") && j.contains("code_version")) return run_config_from_json(j.at("config"));
    return run_config_from_json(j);
}

}  // namespace eir
