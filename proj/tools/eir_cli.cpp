// eir: train, compare and inspect continual segmentation runs.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "eir/config.hpp"
#include "eir/error.hpp"
#include "eir/experiment.hpp"

namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kUsage = 1, kConfig = 2, kData = 3, kDiverged = 4 };

struct RunArgs {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::string strategy;
};

int cmd_run(const RunArgs& a) {
    eir::RunConfig config = eir::load_run_config(a.config);
    if (a.seed) config.seed = *a.seed;
    if (!a.strategy.empty()) config.strategy = eir::parse_strategy(a.strategy);
    eir::validate(config);
    const auto result = eir::run_experiment(config, a.out);
    const auto& last = result.reports.back();
    std::printf("%s seed=%llu step=%d base=%.4f inc=%.4f all=%.4f bg_misclass=%.4f\n",
                std::string(eir::to_string(config.strategy)).c_str(), static_cast<unsigned long long>(config.seed),
                last.step, last.grouped.base, last.grouped.inc, last.grouped.all, last.bg_misclass_rate);
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Continual semantic segmentation with instance replay"};
    app.require_subcommand(1);

    RunArgs run_args;
    auto* run = app.add_subcommand("run", "train every step of a schedule and write a run directory");
    run->add_option("--config", run_args.config, "json config or run manifest")->required()->check(CLI::ExistingFile);
    run->add_option("--out", run_args.out, "output run directory")->required();
    run->add_option("--seed", run_args.seed, "override the config seed");
    run->add_option("--strategy", run_args.strategy,
                    "override the strategy: none, image_replay, vanilla_instance, random_copy_paste, eir");

    std::vector<std::string> compare_dirs;
    std::string compare_csv;
    auto* compare = app.add_subcommand("compare", "print final-step metrics of several runs");
    compare->add_option("dirs", compare_dirs, "run directories")->required()->check(CLI::ExistingDirectory);
    compare->add_option("--csv", compare_csv, "also write the table as csv");

    std::string gen_config, gen_out;
    auto* gen = app.add_subcommand("gen-data", "write the configured dataset as train/ and test/ folders");
    gen->add_option("--config", gen_config, "json config")->required()->check(CLI::ExistingFile);
    gen->add_option("--out", gen_out, "output directory")->required();

    std::string dump_dir, dump_out;
    int dump_n = 8;
    auto* dump = app.add_subcommand("dump-fusions", "render fused samples of the last step of a run");
    dump->add_option("run_dir", dump_dir, "run directory")->required()->check(CLI::ExistingDirectory);
    dump->add_option("n", dump_n, "number of samples")->check(CLI::NonNegativeNumber);
    dump->add_option("--out", dump_out, "output directory (default: <run_dir>/fusions)");

    std::string regions_config;
    std::vector<int> region_counts{4, 6, 9, 12};
    std::optional<std::uint64_t> regions_seed;
    auto* regions = app.add_subcommand("regions", "train eir once per region count and print the final-step table");
    regions->add_option("--config", regions_config, "json config")->required()->check(CLI::ExistingFile);
    regions->add_option("--n", region_counts, "region counts")->check(CLI::PositiveNumber);
    regions->add_option("--seed", regions_seed, "override the config seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (*run) return cmd_run(run_args);
        if (*compare) {
            std::vector<fs::path> dirs(compare_dirs.begin(), compare_dirs.end());
            const auto rows = eir::compare_runs(dirs);
            std::cout << eir::format_comparison(rows);
            if (!compare_csv.empty()) {
                std::FILE* f = std::fopen(compare_csv.c_str(), "w");
                if (!f) throw eir::DataError("cannot write " + compare_csv);
                std::fprintf(f, "run,strategy,seed,step,base,inc,all,bg_misclass\n");
                for (const auto& r : rows)
                    std::fprintf(f, "%s,%s,%llu,%d,%.6f,%.6f,%.6f,%.6f\n", r.run.c_str(), r.strategy.c_str(),
                                 static_cast<unsigned long long>(r.seed), r.step, r.base, r.inc, r.all,
                                 r.bg_misclass);
                std::fclose(f);
            }
            return kOk;
        }
        if (*gen) {
            eir::write_datasets(eir::load_run_config(gen_config), gen_out);
            return kOk;
        }
        if (*regions) {
            eir::RunConfig config = eir::load_run_config(regions_config);
            if (regions_seed) config.seed = *regions_seed;
            std::cout << eir::format_region_report(eir::region_sensitivity(config, region_counts), config);
            return kOk;
        }
        if (*dump) {
            const fs::path out = dump_out.empty() ? fs::path(dump_dir) / "fusions" : fs::path(dump_out);
            for (const auto& f : eir::dump_fusions(dump_dir, dump_n, out)) std::cout << f.string() << '\n';
            return kOk;
        }
    } catch (const eir::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfig;
    } catch (const eir::DivergenceError& e) {
        std::cerr << "training diverged: " << e.what() << '\n';
        return kDiverged;
    } catch (const eir::DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kData;
    } catch (const eir::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kData;
    }
    return kUsage;
}
