// Acceptance checks: one PASS/FAIL line per criterion, nonzero exit if any fails.
// Usage: eir_acceptance [config.json]

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "eir/error.hpp"
#include "eir/experiment.hpp"
#include "eir/losses.hpp"
#include "eir/trainer.hpp"
#include "oracles.hpp"
#include "support.hpp"

#ifndef EIR_ACCEPTANCE_CONFIG
#define EIR_ACCEPTANCE_CONFIG "configs/acceptance.json"
#endif

using namespace eir;
using namespace testing::oracles;

namespace {

int failures = 0;

void report(const std::string& name, bool pass, const std::string& detail) {
    std::printf("%s  %s: %s\n", pass ? "PASS" : "FAIL", name.c_str(), detail.c_str());
    std::fflush(stdout);
    failures += !pass;
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c);
    return buf;
}

const std::vector<ReplayStrategy> kOrder{ReplayStrategy::image_replay, ReplayStrategy::vanilla_instance,
                                         ReplayStrategy::random_copy_paste, ReplayStrategy::eir};

// --- strategy comparison ----------------------------------------------------

void strategy_criteria(const RunConfig& base) {
    const Datasets data = load_datasets(base);
    int ordered = 0, bg_better = 0;
    double gap_sum = 0.0;
    const int seeds = 5;
    std::printf("      seed  image_replay  vanilla_instance  random_copy_paste     eir   bg(vanilla)  bg(eir)\n");
    for (int seed = 0; seed < seeds; ++seed) {
        std::map<ReplayStrategy, MetricReport> last;
        for (auto s : kOrder) {
            RunConfig c = base;
            c.seed = static_cast<std::uint64_t>(seed);
            c.strategy = s;
            last[s] = train_continual(c, data.train, data.test).reports.back();
        }
        auto all = [&](ReplayStrategy s) { return last[s].grouped.all; };
        const bool ok = all(ReplayStrategy::image_replay) < all(ReplayStrategy::vanilla_instance) &&
                        all(ReplayStrategy::vanilla_instance) < all(ReplayStrategy::random_copy_paste) &&
                        all(ReplayStrategy::random_copy_paste) < all(ReplayStrategy::eir);
        ordered += ok;
        gap_sum += all(ReplayStrategy::eir) - all(ReplayStrategy::random_copy_paste);
        const double bg_v = last[ReplayStrategy::vanilla_instance].bg_misclass_rate;
        const double bg_e = last[ReplayStrategy::eir].bg_misclass_rate;
        bg_better += bg_e < bg_v;
        std::printf("      %4d  %12.2f  %16.2f  %17.2f  %6.2f  %11.4f  %7.4f%s\n", seed,
                    100 * all(ReplayStrategy::image_replay), 100 * all(ReplayStrategy::vanilla_instance),
                    100 * all(ReplayStrategy::random_copy_paste), 100 * all(ReplayStrategy::eir), bg_v, bg_e,
                    ok ? "" : "  (order broken)");
    }
    const double gap = 100.0 * gap_sum / seeds;
    report("strategy ordering", ordered >= 4 && gap >= 2.0,
           std::to_string(ordered) + "/5 seeds ordered (need 4), eir - random_copy_paste = " +
               fmt("%.2f", gap) + " mIoU points on the seed mean (need >= 2)");
    report("background shift reduction", bg_better >= 4,
           std::to_string(bg_better) + "/5 seeds with eir bg_misclass below vanilla_instance (need 4)");
}

// --- loss oracles and gradients -----------------------------------------------

void loss_oracles() {
    testing::Rng rng(9001);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const int k = testing::uniform_int(rng, 1, 6), h = testing::uniform_int(rng, 1, 9),
                  w = testing::uniform_int(rng, 1, 9);
        Tensor3 p(k, h, w);
        for (auto& v : p.data) v = testing::uniform(rng);
        const auto t = random_targets(rng, k, h, w);
        const auto valid = random_valid(rng, h, w);
        worst = std::max(worst, std::abs(mbce(p, t, valid) - oracle_mbce(p, t, valid)));

        const auto c = random_kd_case(rng, h, w);
        const auto q = testing::random_distribution(rng, c.k_old, h, w);
        const auto pn = testing::random_distribution(rng, c.k_new, h, w);
        worst = std::max(worst, std::abs(rskd(q, pn, c.label, c.old_cls, c.new_cls) -
                                         oracle_rskd(q, pn, c.label, c.old_cls, c.new_cls)));
    }
    report("loss oracles", worst <= 1e-9, fmt("max |mbce|,|rskd| deviation %.3g over 100 tensors (tol 1e-9)", worst));
}

struct GradStats {
    int checked = 0;
    double worst = 0.0;
};

// Central differences of `value` at the entries of `x` chosen by `rng`; `analytic` is the backprop gradient.
GradStats probe(std::vector<double>& x, const std::vector<double>& analytic, const std::function<double()>& value,
                testing::Rng& rng, int probes, double eps) {
    GradStats s;
    for (int i = 0; i < probes; ++i) {
        const std::size_t j = std::uniform_int_distribution<std::size_t>(0, x.size() - 1)(rng);
        const double saved = x[j];
        x[j] = saved + eps;
        const double up = value();
        x[j] = saved - eps;
        const double down = value();
        x[j] = saved;
        const double numeric = (up - down) / (2 * eps);
        if (std::abs(numeric) < 1e-9 && std::abs(analytic[j]) < 1e-9) continue;
        s.worst = std::max(s.worst, rel_err(numeric, analytic[j]));
        ++s.checked;
    }
    return s;
}

void gradient_checks() {
    testing::Rng rng(9002);
    auto s = random_scores(rng, 4, 6, 6);
    const auto t = random_targets(rng, 4, 6, 6);
    const auto valid = random_valid(rng, 6, 6);
    const auto g_mbce = mbce_from_scores(s, t, valid).grad;
    const auto mb = probe(s.data, g_mbce.data, [&] { return mbce_from_scores(s, t, valid).value; }, rng, 40, 1e-5);

    const auto kd = random_kd_case(rng, 6, 6);
    const auto q = testing::random_distribution(rng, kd.k_old, 6, 6);
    auto sk = random_scores(rng, kd.k_new, 6, 6);
    const auto g_rskd = rskd_from_scores(q, sk, kd.label, kd.old_cls, kd.new_cls).grad;
    const auto rs = probe(sk.data, g_rskd.data,
                          [&] { return rskd_from_scores(q, sk, kd.label, kd.old_cls, kd.new_cls).value; }, rng, 40, 1e-5);

    ConvSegNet old_net(3, 8, 4);
    ConvSegNet net = old_net;
    net.extend_head({3});
    for (std::size_t i = net.parameters().count() - 10; i < net.parameters().count(); ++i)
        net.parameters().flat(i) = testing::uniform(rng, -0.3, 0.3);
    const auto old = snapshot(old_net, 1);
    SegSample sample{testing::random_image(rng, 12, 12), testing::random_blob_labels(rng, 12, 12, 3, 3), "s"};
    const std::vector<InstanceRecord> recs{testing::random_record(rng, 1, 5, 4, "r")};
    FusionOptions opt;
    opt.region_n = 4;
    std::mt19937_64 frng(1);
    const auto fused = fuse_all(sample, recs, 4, opt, frng).fused;
    auto grads = net.parameters().zeros_like();
    total_loss(fused, recs, net, &old, 2.0, &grads);
    // Flatten parameters so the probe can address them.
    std::vector<double> flat(net.parameters().count()), analytic(flat.size());
    for (std::size_t i = 0; i < flat.size(); ++i) flat[i] = net.parameters().flat(i), analytic[i] = grads.flat(i);
    auto value = [&] {
        for (std::size_t i = 0; i < flat.size(); ++i) net.parameters().flat(i) = flat[i];
        return total_loss(fused, recs, net, &old, 2.0).total;
    };
    const auto tl = probe(flat, analytic, value, rng, 40, 1e-6);

    const bool ok = mb.checked >= 20 && rs.checked >= 20 && tl.checked >= 20 && mb.worst <= 1e-3 &&
                    rs.worst <= 1e-3 && tl.worst <= 1e-3;
    char buf[256];
    std::snprintf(buf, sizeof buf, "max rel err mbce %.2g (%d), rskd %.2g (%d), total_loss %.2g (%d) (tol 1e-3, >=20 each)",
                  mb.worst, mb.checked, rs.worst, rs.checked, tl.worst, tl.checked);
    report("gradient checks", ok, buf);
}

// --- placement and mixup ------------------------------------------------------

void placement_oracle() {
    testing::Rng rng(9003);
    int mismatches = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const int h = testing::uniform_int(rng, 8, 64), w = testing::uniform_int(rng, 8, 64);
        const int n = std::array{4, 6, 9, 12}[trial % 4];
        const auto grid = build_region_grid(h, w, n);
        const auto label = trial % 2 ? testing::random_noise_labels(rng, h, w, 5, testing::uniform(rng))
                                     : testing::random_blob_labels(rng, h, w, 5, 4);
        std::vector<int> occupied;
        for (int i = 0; i < n; ++i)
            if (testing::uniform(rng) < 0.25) occupied.push_back(i);
        const int expect = oracle_anchor(label, grid, occupied);
        try {
            const Anchor got = choose_anchor(label, grid, occupied);
            mismatches += got.region_index != expect || got.u != grid.regions[expect < 0 ? 0 : expect].top ||
                          got.v != grid.regions[expect < 0 ? 0 : expect].left;
        } catch (const PlacementSkip&) {
            mismatches += expect >= 0;
        }
    }
    report("placement oracle", mismatches == 0, std::to_string(mismatches) + " mismatches on 1000 label maps");
}

void mixup_properties() {
    testing::Rng rng(9004);
    double identity = 0.0, replacement = 0.0, convexity = 0.0, unit_sum = 0.0;
    for (int trial = 0; trial < 300; ++trial) {
        const int H = testing::uniform_int(rng, 8, 32), W = testing::uniform_int(rng, 8, 32), K = 5;
        const SegSample s{testing::random_image(rng, H, W), testing::random_noise_labels(rng, H, W, K - 1, 0.5), "s"};
        const auto rec = testing::random_record(rng, static_cast<ClassId>(testing::uniform_int(rng, 1, K - 1)),
                                                testing::uniform_int(rng, 2, H), testing::uniform_int(rng, 2, W), "r");
        const auto plan = fit_instance(rec, testing::uniform_int(rng, 0, H - 1), testing::uniform_int(rng, 0, W - 1),
                                       H, W, {0.01});
        const auto placed = resize_instance(rec, plan.out_h, plan.out_w);
        const auto base = to_fused(s, K);
        const double lambda = testing::uniform(rng);
        const auto one = mixup_fuse(base, rec, plan, 1.0);
        const auto zero = mixup_fuse(base, rec, plan, 0.0);
        const auto mid = mixup_fuse(base, rec, plan, lambda);
        for (std::size_t i = 0; i < s.image.data.size(); ++i) identity = std::max(identity, std::abs(one.image.data[i] - s.image.data[i]));
        for (std::size_t i = 0; i < base.soft_label.data.size(); ++i)
            identity = std::max(identity, std::abs(one.soft_label.data[i] - base.soft_label.data[i]));
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                double mass = 0.0;
                for (int k = 0; k < K; ++k) mass += mid.soft_label.at(k, y, x);
                unit_sum = std::max(unit_sum, std::abs(mass - 1.0));
                const int a = y - plan.u, b = x - plan.v;
                if (a < 0 || b < 0 || a >= plan.out_h || b >= plan.out_w || !placed.mask.at(a, b)) continue;
                for (int c = 0; c < 3; ++c) {
                    const double xv = s.image.at(y, x, c), mv = placed.pixels.at(a, b, c), fv = mid.image.at(y, x, c);
                    replacement = std::max(replacement, std::abs(zero.image.at(y, x, c) - mv));
                    convexity = std::max(convexity, std::max(std::min(xv, mv) - fv, fv - std::max(xv, mv)));
                }
                for (int k = 0; k < K; ++k)
                    replacement = std::max(replacement, std::abs(zero.soft_label.at(k, y, x) - (k == rec.class_id)));
            }
    }
    const double worst = std::max({identity, replacement, convexity, unit_sum});
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "lambda=1 identity %.2g, lambda=0 replacement %.2g, convexity excess %.2g, label sum %.2g "
                  "(tol 1e-5, 300 fuzzed fusions)",
                  identity, replacement, convexity, unit_sum);
    report("mixup properties", worst <= 1e-5, buf);
}

// --- buffer and degenerate runs ------------------------------------------------

RunConfig quick(const RunConfig& base) {
    RunConfig c = base;
    c.epochs = 2;
    c.base_epochs = 2;
    return c;
}

void buffer_invariants(const RunConfig& base) {
    RunConfig c = quick(base);
    c.schedule = "2-1-1-1-1";
    c.epochs = 1;
    c.base_epochs = 1;
    const Datasets data = load_datasets(c);
    testing::TempDir dir("acceptance_buffer");
    int steps = 0, spread_bad = 0, total_bad = 0, quota_bad = 0, roundtrip_bad = 0;
    TrainHooks hooks;
    hooks.on_step_end = [&](const StepState& s) {
        ++steps;
        const auto& learned = s.buffer->learned_classes();
        const int n = static_cast<int>(learned.size());
        std::size_t lo = SIZE_MAX, hi = 0, total = 0;
        int rank = 0;
        for (ClassId cls : learned) {
            const std::size_t count = s.buffer->records(cls).size();
            lo = std::min(lo, count);
            hi = std::max(hi, count);
            total += count;
            const int quota = c.capacity / n + (rank++ < c.capacity % n ? 1 : 0);
            quota_bad += count != static_cast<std::size_t>(quota);
        }
        spread_bad += hi - lo > 1;
        total_bad += total > static_cast<std::size_t>(c.capacity);
        const auto path = dir.path / ("step_" + std::to_string(s.step));
        save_buffer(*s.buffer, path);
        roundtrip_bad += !(load_buffer(path) == *s.buffer);
    };
    train_continual(c, data.train, data.test, hooks);
    const bool ok = steps == 5 && spread_bad == 0 && total_bad == 0 && quota_bad == 0 && roundtrip_bad == 0;
    report("buffer invariants", ok,
           std::to_string(steps) + " steps, capacity " + std::to_string(c.capacity) + ": spread>1 at " +
               std::to_string(spread_bad) + ", over capacity at " + std::to_string(total_bad) +
               ", quota mismatches " + std::to_string(quota_bad) + ", save/load mismatches " +
               std::to_string(roundtrip_bad));
}

bool same_run(const RunResult& a, const RunResult& b) {
    if (a.reports.size() != b.reports.size()) return false;
    for (std::size_t i = 0; i < a.reports.size(); ++i)
        if (a.reports[i].per_class_iou != b.reports[i].per_class_iou ||
            a.reports[i].bg_misclass_rate != b.reports[i].bg_misclass_rate)
            return false;
    return a.model->parameters() == b.model->parameters();
}

void degenerate_configs(const RunConfig& base) {
    const RunConfig c0 = quick(base);
    const Datasets data = load_datasets(c0);
    std::vector<std::string> broken;

    // The distillation switch is held fixed on both sides of each comparison.
    for (auto mode : {RskdMode::off, RskdMode::on}) {
        const std::string tag = mode == RskdMode::on ? " (rskd on)" : " (rskd off)";
        RunConfig c = c0;
        c.rskd = mode;
        c.strategy = ReplayStrategy::none;
        const auto plain = train_continual(c, data.train, data.test);
        c.strategy = ReplayStrategy::eir;
        c.selection.max_instances = 0;
        if (!same_run(plain, train_continual(c, data.train, data.test))) broken.push_back("max_instances=0" + tag);

        c = c0;
        c.rskd = mode;
        c.capacity = 0;
        c.strategy = ReplayStrategy::none;
        const auto empty = train_continual(c, data.train, data.test);
        for (auto s : kOrder) {
            c.strategy = s;
            if (!same_run(empty, train_continual(c, data.train, data.test)))
                broken.push_back("capacity=0 " + std::string(to_string(s)) + tag);
        }
    }

    std::vector<Parameters> first;
    TrainHooks hooks;
    hooks.on_step_end = [&](const StepState& s) {
        if (s.step == 1) first.push_back(s.model->parameters());
    };
    for (auto s : {ReplayStrategy::none, ReplayStrategy::image_replay, ReplayStrategy::vanilla_instance,
                   ReplayStrategy::random_copy_paste, ReplayStrategy::eir}) {
        RunConfig c = c0;
        c.strategy = s;
        train_continual(c, data.train, data.test, hooks);
    }
    for (std::size_t i = 1; i < first.size(); ++i)
        if (!(first[i] == first[0])) broken.push_back("step-1 checkpoint of strategy " + std::to_string(i));

    std::string detail = "max_instances=0 vs none, capacity=0 across strategies, step-1 checkpoints";
    if (!broken.empty()) {
        detail += "; differing:";
        for (const auto& b : broken) detail += " [" + b + "]";
    }
    report("degenerate configs", broken.empty(), detail);
}

void region_harness(const RunConfig& base) {
    RunConfig c = base;
    c.seed = 0;
    bool ok = true;
    std::vector<RegionRow> rows;
    try {
        rows = region_sensitivity(c, {4, 6, 9, 12});
    } catch (const Error& e) {
        ok = false;
        std::printf("      %s\n", e.what());
    }
    ok = ok && rows.size() == 4;
    for (const auto& r : rows) ok = ok && std::isfinite(r.all);
    if (!rows.empty()) {
        const std::string table = format_region_report(rows, c);
        std::size_t start = 0;
        while (start < table.size()) {
            const std::size_t end = table.find('\n', start);
            std::printf("      %s\n", table.substr(start, end - start).c_str());
            start = end + 1;
        }
    }
    report("region sensitivity harness", ok, std::to_string(rows.size()) + " region counts reported (4, 6, 9, 12)");
}

}  // namespace

int main(int argc, char** argv) {
    const std::string config_path = argc > 1 ? argv[1] : EIR_ACCEPTANCE_CONFIG;
    RunConfig config;
    try {
        config = load_run_config(config_path);
    } catch (const Error& e) {
        std::fprintf(stderr, "cannot load %s: %s\n", config_path.c_str(), e.what());
        return 2;
    }
    std::printf("config: %s\n", config_path.c_str());

    loss_oracles();
    gradient_checks();
    placement_oracle();
    mixup_properties();
    buffer_invariants(config);
    degenerate_configs(config);
    region_harness(config);
    strategy_criteria(config);

    std::printf("%d criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
