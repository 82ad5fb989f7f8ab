#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "doctest.h"
#include "eir/error.hpp"
#include "eir/experiment.hpp"
#include "eir/trainer.hpp"
#include "support.hpp"

using namespace eir;

namespace {

RunConfig tiny_config(const std::string& schedule = "2-1-1", int classes = 4) {
    RunConfig c;
    c.schedule = schedule;
    c.epochs = 1;
    c.base_epochs = 2;
    c.lr_base = 0.1;
    c.lr_inc = 0.05;
    c.batch_size = 4;
    c.capacity = 8;
    c.dataset.train.num_classes = classes;
    c.dataset.num_classes = classes;
    c.dataset.train.samples_per_class = 4;
    c.dataset.train.height = 32;
    c.dataset.train.width = 32;
    c.dataset.train.seed = 3;
    c.dataset.test_samples_per_class = 2;
    c.dataset.test_seed = 33;
    return c;
}

// Predicts the class encoded in the red channel (value k/255 means class k), capped at the last output.
class EncodedPredictor final : public SegPredictor {
public:
    explicit EncodedPredictor(int k) : k_(k) {}
    int num_outputs() const override { return k_; }
    Tensor3 forward(const Image& image) const override {
        Tensor3 s(k_, image.height, image.width);
        for (int y = 0; y < image.height; ++y)
            for (int x = 0; x < image.width; ++x) s.at(std::min<int>(k_ - 1, std::lround(image.at(y, x, 0) * 255.0)), y, x) = 1.0;
        return s;
    }
    Tensor3 forward(const Image& image, Activations&) const override { return forward(image); }
    void backward(const Activations&, const Tensor3&, Parameters&) const override {}
    const Parameters& parameters() const override { return p_; }
    Parameters& parameters() override { return p_; }
    void extend_head(const std::set<ClassId>& c) override { k_ += static_cast<int>(c.size()); }
    std::unique_ptr<SegPredictor> clone() const override { return std::make_unique<EncodedPredictor>(*this); }
    int width() const override { return 0; }

private:
    int k_;
    Parameters p_;
};

void check_same_run(const RunResult& a, const RunResult& b) {
    REQUIRE(a.reports.size() == b.reports.size());
    for (std::size_t i = 0; i < a.reports.size(); ++i) {
        CHECK(a.reports[i].per_class_iou == b.reports[i].per_class_iou);
        CHECK(a.reports[i].bg_misclass_rate == b.reports[i].bg_misclass_rate);
    }
    CHECK(a.model->parameters() == b.model->parameters());
}

}  // namespace

TEST_SUITE("trainer") {
    TEST_CASE("runs are deterministic") {
        const auto cfg = tiny_config();
        const auto data = load_datasets(cfg);
        const auto a = train_continual(cfg, data.train, data.test);
        const auto b = train_continual(cfg, data.train, data.test);
        check_same_run(a, b);
        CHECK(a.buffer == b.buffer);
        REQUIRE(a.losses.size() == b.losses.size());
        for (std::size_t i = 0; i < a.losses.size(); ++i) CHECK(a.losses[i].total == b.losses[i].total);
        CHECK(a.reports.size() == 3);
        CHECK(a.model->num_outputs() == 5);

        auto other = cfg;
        other.seed = 1;
        CHECK_FALSE(train_continual(other, data.train, data.test).model->parameters() == a.model->parameters());
    }

    TEST_CASE("a one-step schedule is plain supervised training") {
        auto cfg = tiny_config("4");
        const auto data = load_datasets(cfg);
        int steps = 0;
        TrainHooks hooks;
        hooks.on_step_end = [&](const StepState& s) {
            ++steps;
            CHECK(s.buffer->learned_classes() == std::set<ClassId>{1, 2, 3, 4});
        };
        const auto r = train_continual(cfg, data.train, data.test, hooks);
        CHECK(steps == 1);
        CHECK(r.reports.size() == 1);
        CHECK(r.buffer.size() == 8);
        CHECK(r.fusion_events == 0);
        for (const auto& l : r.losses) {
            CHECK(l.rskd == 0.0);
            CHECK(l.mbce_instance == 0.0);
        }
    }

    TEST_CASE("buffer counts follow the quota formula after every step") {
        for (int capacity : {0, 5, 7, 12}) {
            auto cfg = tiny_config("1-1-1-1", 4);
            cfg.capacity = capacity;
            const auto data = load_datasets(cfg);
            const auto schedule = TaskSchedule::parse(cfg.schedule, 4, cfg.mode);
            std::map<ClassId, std::size_t> available;
            TrainHooks hooks;
            hooks.on_step_end = [&](const StepState& s) {
                for (ClassId c : s.dataset->visible_classes) {
                    available[c] = 0;
                    for (const auto& rec : extract_instances(*s.dataset, {cfg.min_pixels}))
                        available[c] += rec.class_id == c;
                }
                const int n = static_cast<int>(s.buffer->learned_classes().size());
                std::size_t total = 0;
                for (ClassId c : s.buffer->learned_classes()) {
                    const int rank = static_cast<int>(std::distance(s.buffer->learned_classes().begin(),
                                                                    s.buffer->learned_classes().find(c)));
                    const int quota = capacity / n + (rank < capacity % n ? 1 : 0);
                    CHECK(s.buffer->records(c).size() == std::min<std::size_t>(quota, available[c]));
                    total += s.buffer->records(c).size();
                }
                CHECK(total <= static_cast<std::size_t>(capacity));
                CHECK(s.images->size() <= static_cast<std::size_t>(capacity));
            };
            train_continual(cfg, data.train, data.test, hooks);
        }
    }

    TEST_CASE("with an empty buffer every strategy trains the same model") {
        for (auto mode : {RskdMode::off, RskdMode::on}) {
            auto cfg = tiny_config();
            cfg.capacity = 0;
            cfg.rskd = mode;
            const auto data = load_datasets(cfg);
            cfg.strategy = ReplayStrategy::none;
            const auto reference = train_continual(cfg, data.train, data.test);
            for (auto s : {ReplayStrategy::image_replay, ReplayStrategy::vanilla_instance,
                           ReplayStrategy::random_copy_paste, ReplayStrategy::eir}) {
                cfg.strategy = s;
                CAPTURE(to_string(s));
                check_same_run(reference, train_continual(cfg, data.train, data.test));
            }
        }
    }

    TEST_CASE("step-1 models do not depend on the strategy") {
        auto cfg = tiny_config();
        const auto data = load_datasets(cfg);
        std::vector<Parameters> first;
        TrainHooks hooks;
        hooks.on_step_end = [&](const StepState& s) {
            if (s.step == 1) first.push_back(s.model->parameters());
        };
        for (auto s : {ReplayStrategy::none, ReplayStrategy::image_replay, ReplayStrategy::vanilla_instance,
                       ReplayStrategy::random_copy_paste, ReplayStrategy::eir}) {
            cfg.strategy = s;
            train_continual(cfg, data.train, data.test, hooks);
        }
        REQUIRE(first.size() == 5);
        for (std::size_t i = 1; i < first.size(); ++i) CHECK(first[i] == first[0]);
    }

    TEST_CASE("eir without instances is training without replay") {
        for (auto mode : {RskdMode::off, RskdMode::on}) {
            auto cfg = tiny_config();
            cfg.rskd = mode;
            const auto data = load_datasets(cfg);
            cfg.strategy = ReplayStrategy::none;
            const auto plain = train_continual(cfg, data.train, data.test);
            cfg.strategy = ReplayStrategy::eir;
            cfg.selection.max_instances = 0;
            const auto eir = train_continual(cfg, data.train, data.test);
            check_same_run(plain, eir);
            CHECK(eir.fusion_events == 0);
        }
    }

    TEST_CASE("training items per strategy") {
        testing::Rng gen(5);
        MemoryBuffer buffer(10);
        std::map<ClassId, std::vector<InstanceRecord>> cands;
        for (ClassId c : {1, 2}) {
            auto& list = cands[c];
            for (int i = 0; i < 3; ++i) list.push_back(testing::random_record(gen, c, 6, 7, "b" + std::to_string(i)));
        }
        buffer.rebalance(cands);
        ImageBuffer images(4);
        SegSample sample{testing::random_image(gen, 32, 32), LabelMap(32, 32, 0), "x"};
        for (int y = 20; y < 30; ++y)
            for (int x = 20; x < 30; ++x) sample.label.at(y, x) = 3;

        RunConfig cfg = tiny_config();
        PotentialClassRanking ranked;
        ranked.entries.push_back({2, 40});
        const std::vector<PotentialClassRanking> rankings{ranked};
        ReplayContext ctx{&cfg, &buffer, &images, 4, 2, &rankings};

        cfg.strategy = ReplayStrategy::none;
        std::mt19937_64 rng(1);
        auto items = make_items(sample, 0, ctx, rng);
        REQUIRE(items.size() == 1);
        CHECK(items[0].instances.empty());
        CHECK(items[0].fused.image == sample.image);

        cfg.strategy = ReplayStrategy::vanilla_instance;
        items = make_items(sample, 0, ctx, rng);
        CHECK(items[0].instances.size() == 2);
        CHECK(items[0].fused.image == sample.image);
        CHECK(items[0].log.empty());

        cfg.strategy = ReplayStrategy::random_copy_paste;
        items = make_items(sample, 0, ctx, rng);
        CHECK(items[0].instances.empty());
        REQUIRE(items[0].log.size() == 2);
        for (const auto& e : items[0].log) CHECK(e.placed);
        // Hard paste: every fused pixel carries a one-hot label.
        const auto& f = items[0].fused;
        for (std::size_t i = 0; i < f.soft_label.plane_size(); ++i) {
            double top = 0.0;
            for (int k = 0; k < 4; ++k) top = std::max(top, f.soft_label.data[k * f.soft_label.plane_size() + i]);
            CHECK(top == 1.0);
        }
        CHECK(!f.fused_classes.empty());

        cfg.strategy = ReplayStrategy::eir;
        cfg.selection.max_instances = 1;
        cfg.selection.fallback = false;
        items = make_items(sample, 0, ctx, rng);
        REQUIRE(items[0].instances.size() == 1);
        CHECK(items[0].instances[0].class_id == 2);
        REQUIRE(items[0].log.size() == 1);
        CHECK(items[0].log[0].region_index >= 0);
        // No ranking for this sample and no fallback: nothing is pasted.
        items = make_items(sample, 7, ctx, rng);
        CHECK(items[0].instances.empty());
    }

    TEST_CASE("replay count and random placement") {
        CHECK(replay_count(24, 1.0 / 3.0) == 8);
        CHECK(replay_count(4, 1.0 / 3.0) == 1);
        CHECK(replay_count(1, 1.0 / 3.0) == 0);
        CHECK(replay_count(3, 0.5) == 2);
        CHECK(replay_count(5, 0.0) == 0);

        testing::Rng gen(2);
        for (int trial = 0; trial < 300; ++trial) {
            const auto rec = testing::random_record(gen, 1, testing::uniform_int(gen, 2, 40),
                                                    testing::uniform_int(gen, 2, 40), "r");
            std::mt19937_64 rng(trial);
            const auto plan = random_placement(rec, 32, 32, {0.01}, rng);
            CHECK(plan.u + plan.out_h <= 32);
            CHECK(plan.v + plan.out_w <= 32);
            if (rec.height() <= 32 && rec.width() <= 32) CHECK(plan.scale == 1.0);
        }
    }

    TEST_CASE("image buffer keeps the largest images per class under quota") {
        const auto schedule = TaskSchedule::parse("1-1", 2, ScheduleMode::overlapped);
        std::vector<SegSample> data;
        for (int i = 0; i < 6; ++i) {
            SegSample s{Image(4, 4), LabelMap(4, 4, 0), "i" + std::to_string(i)};
            for (int k = 0; k <= i; ++k) s.label.data[k] = 1;
            if (i % 2) s.label.data[15] = 2;
            data.push_back(s);
        }
        ImageBuffer buf(3);
        buf.rebalance(build_step_dataset(data, schedule, 1));
        REQUIRE(buf.size() == 3);
        CHECK(buf.per_class().at(1)[0].id == "i5");
        CHECK(buf.per_class().at(1)[2].id == "i3");
        buf.rebalance(build_step_dataset(data, schedule, 2));
        CHECK(buf.per_class().at(1).size() == 2);
        CHECK(buf.per_class().at(2).size() == 1);
        CHECK(buf.size() == 3);
    }

    TEST_CASE("evaluation relabels future classes and counts old-class misses") {
        const auto schedule = TaskSchedule::parse("1-1-1", 3, ScheduleMode::overlapped);
        // gt: classes 1,2,3; predictions encoded in the image.
        SegSample s{Image(1, 4), LabelMap(1, 4), "t"};
        s.label.data = {1, 2, 3, 0};
        const int pred[4] = {0, 2, 0, 0};
        for (int x = 0; x < 4; ++x) s.image.at(0, x, 0) = pred[x] / 255.0;
        const std::vector<SegSample> test{s};

        const auto r2 = evaluate(EncodedPredictor(3), test, schedule, 2, 1);
        CHECK(r2.per_class_iou.size() == 3);
        CHECK(*r2.per_class_iou.at(0) == doctest::Approx(2.0 / 3.0));  // class 3 counts as background
        CHECK(*r2.per_class_iou.at(1) == 0.0);
        CHECK(*r2.per_class_iou.at(2) == 1.0);
        CHECK(r2.bg_misclass_rate == 1.0);  // old class 1 predicted as background
        const auto r1 = evaluate(EncodedPredictor(2), test, schedule, 1, 1);
        CHECK(r1.bg_misclass_rate == 1.0);
        const auto r3 = evaluate(EncodedPredictor(4), test, schedule, 3, 1);
        CHECK(r3.bg_misclass_rate == 0.5);
        CHECK(r3.grouped.inc == doctest::Approx(0.5));
        CHECK_THROWS_AS(evaluate(EncodedPredictor(3), test, schedule, 3, 1), ShapeError);
    }

    TEST_CASE("divergence is reported") {
        auto cfg = tiny_config();
        cfg.lr_base = 1e250;
        const auto data = load_datasets(cfg);
        CHECK_THROWS_AS(train_continual(cfg, data.train, data.test), DivergenceError);
    }

    TEST_CASE("config files") {
        using nlohmann::json;
        const json ok = {{"schedule", "2-1-1"}, {"epochs", 3}, {"strategy", "random_copy_paste"},
                         {"fixed_lambda", 0.25}, {"dataset", {{"num_classes", 4}, {"height", 40}}}};
        const auto c = run_config_from_json(ok);
        CHECK(c.base_epochs == 3);
        CHECK(c.strategy == ReplayStrategy::random_copy_paste);
        CHECK(*c.fusion.lambda.fixed == 0.25);
        CHECK(c.num_classes() == 4);
        CHECK(c.dataset.train.height == 40);
        CHECK_FALSE(c.uses_rskd());
        CHECK(run_config_from_json(to_json(c)).schedule == "2-1-1");
        CHECK(to_json(run_config_from_json(to_json(c))) == to_json(c));

        auto bad = [&](json patch) {
            json j = ok;
            j.merge_patch(patch);
            return j;
        };
        CHECK_THROWS_AS(run_config_from_json(bad({{"lerning_rate", 1}})), ConfigError);
        CHECK_THROWS_AS(run_config_from_json(bad({{"epochs", "many"}})), ConfigError);
        CHECK_THROWS_AS(run_config_from_json(bad({{"strategy", "magic"}})), ConfigError);
        CHECK_THROWS_AS(run_config_from_json(bad({{"strategy", 3}})), ConfigError);
        CHECK_THROWS_AS(run_config_from_json(bad({{"batch_size", 0}})), ConfigError);
        CHECK_THROWS_AS(run_config_from_json(bad({{"momentum", 1.0}})), ConfigError);
        CHECK_THROWS_AS(run_config_from_json(bad({{"fixed_lambda", 2.0}})), ConfigError);
        CHECK_THROWS_AS(run_config_from_json(bad({{"schedule", "3-2"}})), ConfigError);
        CHECK_THROWS_AS(run_config_from_json(bad({{"rskd", "sometimes"}})), ConfigError);
        CHECK_THROWS_AS(run_config_from_json(bad({{"dataset", {{"colour", 1}}}})), ConfigError);
        CHECK_THROWS_AS(run_config_from_json(bad({{"dataset", {{"kind", "voc"}}}})), ConfigError);
        CHECK_THROWS_AS(run_config_from_json(json::array()), ConfigError);

        testing::TempDir dir("cfg");
        std::ofstream(dir.path / "broken.json") << "{ not json";
        CHECK_THROWS_AS(load_run_config(dir.path / "broken.json"), ConfigError);
        CHECK_THROWS_AS(load_run_config(dir.path / "missing.json"), ConfigError);
    }

    TEST_CASE("rskd switch") {
        RunConfig c;
        c.strategy = ReplayStrategy::eir;
        CHECK(c.uses_rskd());
        c.rskd = RskdMode::off;
        CHECK_FALSE(c.uses_rskd());
        c.strategy = ReplayStrategy::vanilla_instance;
        c.rskd = RskdMode::on;
        CHECK(c.uses_rskd());
        for (auto s : {ReplayStrategy::none, ReplayStrategy::image_replay, ReplayStrategy::vanilla_instance,
                       ReplayStrategy::random_copy_paste, ReplayStrategy::eir})
            CHECK(parse_strategy(to_string(s)) == s);
    }

    TEST_CASE("stream generators are independent per slot") {
        auto a = stream_rng(1, 2, 3, 4, 5), b = stream_rng(1, 2, 3, 4, 5), c = stream_rng(1, 2, 3, 4, 6);
        const auto va = a(), vb = b(), vc = c();
        CHECK(va == vb);
        CHECK(va != vc);
        CHECK(stream_rng(0, 1, 1, 1, 0)() != stream_rng(1, 1, 1, 1, 0)());
    }
}
