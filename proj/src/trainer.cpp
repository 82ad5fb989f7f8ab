#include "eir/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>

#include "eir/error.hpp"

namespace eir {

namespace {

enum Purpose : std::uint64_t { kShuffle = 1, kSample = 2, kReplay = 3 };

long class_pixels(const SegSample& s, ClassId c) {
    return std::count(s.label.data.begin(), s.label.data.end(), c);
}

void check_finite(double v, const char* what, int step, int epoch) {
    if (!std::isfinite(v))
        throw DivergenceError(std::string(what) + " is not finite at step " + std::to_string(step) + ", epoch " +
                              std::to_string(epoch));
}

}  // namespace

std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t purpose, std::uint64_t step, std::uint64_t epoch,
                           std::uint64_t index) {
    auto lo = [](std::uint64_t v) { return static_cast<std::uint32_t>(v); };
    auto hi = [](std::uint64_t v) { return static_cast<std::uint32_t>(v >> 32); };
    std::seed_seq seq{lo(seed), hi(seed), lo(purpose), lo(step), lo(epoch), lo(index), hi(index)};
    return std::mt19937_64(seq);
}

// --- image buffer ------------------------------------------------------------

std::size_t ImageBuffer::size() const {
    std::size_t n = 0;
    for (const auto& [c, list] : per_class_) n += list.size();
    return n;
}

std::vector<const SegSample*> ImageBuffer::all() const {
    std::vector<const SegSample*> out;
    for (const auto& [c, list] : per_class_)
        for (const auto& s : list) out.push_back(&s);
    return out;
}

void ImageBuffer::rebalance(const StepDataset& dataset) {
    std::set<ClassId> learned = learned_;
    learned.insert(dataset.visible_classes.begin(), dataset.visible_classes.end());
    const auto quotas = class_quotas(capacity_, learned);

    for (auto& [c, list] : per_class_)
        if (static_cast<int>(list.size()) > quotas.at(c)) list.resize(quotas.at(c));

    std::map<ClassId, std::vector<std::pair<long, const SegSample*>>> fresh;
    for (const auto& s : dataset.samples) {
        ClassId owner = kBackground;
        long best = 0;
        for (ClassId c : dataset.visible_classes) {
            const long n = class_pixels(s, c);
            if (n > best) best = n, owner = c;
        }
        if (owner != kBackground) fresh[owner].push_back({best, &s});
    }
    for (auto& [c, list] : fresh) {
        std::stable_sort(list.begin(), list.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second->id < b.second->id;
        });
        const std::size_t keep = std::min<std::size_t>(list.size(), static_cast<std::size_t>(quotas.at(c)));
        auto& dst = per_class_[c];
        for (std::size_t i = 0; i < keep; ++i) dst.push_back(*list[i].second);
    }
    std::erase_if(per_class_, [](const auto& kv) { return kv.second.empty(); });
    learned_ = std::move(learned);
}

// --- batch construction --------------------------------------------------------

int replay_count(int batch_new, double ratio) {
    return static_cast<int>(std::floor(batch_new * ratio + 0.5));
}

PlacementPlan random_placement(const InstanceRecord& record, int height, int width, const FitOptions& fit,
                               std::mt19937_64& rng) {
    std::uniform_int_distribution<int> du(0, std::max(0, height - record.height()));
    std::uniform_int_distribution<int> dv(0, std::max(0, width - record.width()));
    const int u = du(rng);
    const int v = dv(rng);
    return fit_instance(record, u, v, height, width, fit);
}

std::vector<TrainItem> make_items(const SegSample& sample, std::size_t sample_index, const ReplayContext& ctx,
                                  std::mt19937_64& rng) {
    const RunConfig& cfg = *ctx.config;
    const int K = ctx.num_channels;
    const SelectionOptions uniform{cfg.selection.max_instances, true};
    std::vector<TrainItem> out;

    switch (cfg.strategy) {
        case ReplayStrategy::none:
        case ReplayStrategy::image_replay:
            out.push_back({to_fused(sample, K), {}, {}});
            break;
        case ReplayStrategy::vanilla_instance: {
            auto picked = select_instances({}, *ctx.buffer, uniform, rng);
            out.push_back({to_fused(sample, K), std::move(picked), {}});
            break;
        }
        case ReplayStrategy::random_copy_paste: {
            TrainItem item{to_fused(sample, K), {}, {}};
            for (const auto& rec : select_instances({}, *ctx.buffer, uniform, rng)) {
                FusionEvent ev{rec.class_id, rec.source_id, -1, 0.0, 0.0, false, {}};
                try {
                    const PlacementPlan plan = random_placement(rec, sample.image.height, sample.image.width,
                                                                cfg.fusion.fit, rng);
                    ev.scale = plan.scale;
                    item.fused = mixup_fuse(item.fused, rec, plan, 0.0);
                    ev.placed = true;
                } catch (const PlacementSkip& skip) {
                    ev.reason = skip.what();
                }
                item.log.push_back(std::move(ev));
            }
            out.push_back(std::move(item));
            break;
        }
        case ReplayStrategy::eir: {
            static const PotentialClassRanking empty;
            const PotentialClassRanking& ranking =
                ctx.rankings && sample_index < ctx.rankings->size() ? (*ctx.rankings)[sample_index] : empty;
            auto picked = select_instances(ranking, *ctx.buffer, cfg.selection, rng);
            auto fused = fuse_all(sample, picked, K, cfg.fusion, rng);
            out.push_back({std::move(fused.fused), std::move(picked), std::move(fused.log)});
            break;
        }
    }
    return out;
}

// --- evaluation ----------------------------------------------------------------

MetricReport evaluate(const SegPredictor& model, const std::vector<SegSample>& test, const TaskSchedule& schedule,
                      int step, int base_step_boundary) {
    const auto learned = schedule.learned_through(step);
    const int K = model.num_outputs();
    if (K != static_cast<int>(learned.size()) + 1)
        throw ShapeError("model has " + std::to_string(K) + " outputs but " + std::to_string(learned.size()) +
                         " classes are learned");
    const auto targets = step > 1 ? schedule.learned_through(step - 1) : learned;

    ConfusionAccumulator acc(K);
    BackgroundMisclassCounter bg;
    for (const auto& s : test) {
        const LabelMap gt = relabel(s.label, learned);
        const LabelMap pred = argmax_labels(model.forward(s.image));
        acc.add(pred, gt);
        bg.add(pred, gt, targets);
    }
    MetricReport report;
    report.step = step;
    for (int c = 0; c < K; ++c) report.per_class_iou[static_cast<ClassId>(c)] = acc.iou(static_cast<ClassId>(c));
    report.grouped = grouped_miou(report, schedule, base_step_boundary, step);
    report.bg_misclass_rate = bg.rate();
    return report;
}

// --- training ------------------------------------------------------------------

RunResult train_continual(const RunConfig& config, const std::vector<SegSample>& train,
                          const std::vector<SegSample>& test, const TrainHooks& hooks) {
    validate(config);
    const TaskSchedule schedule = TaskSchedule::parse(config.schedule, config.num_classes(), config.mode);
    RunResult result{schedule, {}, {}, {}, 0, 0, nullptr, MemoryBuffer(config.capacity),
                     ImageBuffer(config.capacity)};
    result.model = std::make_unique<ConvSegNet>(static_cast<int>(schedule.step_classes(1).size()) + 1,
                                                config.model_width, config.seed);
    SegPredictor& model = *result.model;

    for (int t = 1; t <= schedule.num_steps(); ++t) {
        const StepDataset ds = build_step_dataset(train, schedule, t, {config.min_new_pixels});
        std::optional<ModelSnapshot> old;
        if (t > 1) {
            old.emplace(snapshot(model, t - 1));
            model.extend_head(schedule.step_classes(t));
        }
        const ModelSnapshot* distill = old && config.uses_rskd() ? &*old : nullptr;

        std::vector<PotentialClassRanking> rankings;
        if (config.strategy == ReplayStrategy::eir && old && !result.buffer.empty()) {
            rankings.reserve(ds.samples.size());
            for (const auto& s : ds.samples)
                rankings.push_back(rank_potential_classes(old->probabilities(s.image), s.label, config.tau));
        }
        const ReplayContext ctx{&config, &result.buffer, &result.images, model.num_outputs(), t, &rankings};
        const auto stored = result.images.all();

        const double lr = t == 1 ? config.lr_base : config.lr_inc;
        const int epochs = t == 1 ? config.base_epochs : config.epochs;
        Parameters velocity = model.parameters().zeros_like();
        Parameters grads = model.parameters().zeros_like();

        std::vector<std::size_t> order(ds.samples.size());
        for (int e = 1; e <= epochs; ++e) {
            std::iota(order.begin(), order.end(), std::size_t{0});
            auto shuffle_rng = stream_rng(config.seed, kShuffle, t, e, 0);
            std::shuffle(order.begin(), order.end(), shuffle_rng);

            EpochLoss epoch_loss{t, e, 0, 0, 0, 0};
            int batches = 0;
            for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
                const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
                std::vector<TrainItem> items;
                for (std::size_t k = start; k < stop; ++k) {
                    const std::size_t idx = order[k];
                    auto rng = stream_rng(config.seed, kSample, t, e, idx);
                    for (auto& item : make_items(ds.samples[idx], idx, ctx, rng)) {
                        for (auto& ev : item.log) {
                            ++result.fusion_events;
                            result.fusion_skips += !ev.placed;
                            if (result.fusion_log.size() < hooks.fusion_log_limit)
                                result.fusion_log.push_back({t, e, ds.samples[idx].id, ev});
                        }
                        items.push_back(std::move(item));
                    }
                }
                if (config.strategy == ReplayStrategy::image_replay && !stored.empty()) {
                    auto rng = stream_rng(config.seed, kReplay, t, e, start);
                    std::uniform_int_distribution<std::size_t> pick(0, stored.size() - 1);
                    const int extra = replay_count(static_cast<int>(stop - start), config.replay_ratio);
                    for (int r = 0; r < extra; ++r)
                        items.push_back({to_fused(*stored[pick(rng)], model.num_outputs()), {}, {}});
                }

                const double weight = 1.0 / static_cast<double>(items.size());
                grads.set_zero();
                LossBreakdown sum;
                for (const auto& item : items) {
                    const auto lb = total_loss(item.fused, item.instances, model, distill, config.alpha, &grads, weight);
                    sum.mbce_instance += weight * lb.mbce_instance;
                    sum.mbce_image += weight * lb.mbce_image;
                    sum.rskd += weight * lb.rskd;
                    sum.total += weight * lb.total;
                }
                check_finite(sum.total, "loss", t, e);
                if (!grads.all_finite()) throw DivergenceError("gradient is not finite at step " + std::to_string(t));

                auto& params = model.parameters();
                for (std::size_t i = 0; i < params.tensors.size(); ++i) {
                    auto& p = params.tensors[i];
                    auto& v = velocity.tensors[i];
                    const auto& g = grads.tensors[i];
                    for (std::size_t j = 0; j < p.size(); ++j) {
                        v[j] = config.momentum * v[j] + g[j];
                        p[j] -= lr * v[j];
                    }
                }
                if (!params.all_finite()) throw DivergenceError("parameters are not finite at step " + std::to_string(t));

                epoch_loss.mbce_instance += sum.mbce_instance;
                epoch_loss.mbce_image += sum.mbce_image;
                epoch_loss.rskd += sum.rskd;
                epoch_loss.total += sum.total;
                ++batches;
            }
            if (batches) {
                epoch_loss.mbce_instance /= batches;
                epoch_loss.mbce_image /= batches;
                epoch_loss.rskd /= batches;
                epoch_loss.total /= batches;
            }
            result.losses.push_back(epoch_loss);
            if (hooks.on_epoch_end) hooks.on_epoch_end(epoch_loss);
        }

        std::map<ClassId, std::vector<InstanceRecord>> candidates;
        for (ClassId c : ds.visible_classes) candidates[c];
        for (auto& rec : extract_instances(ds, {config.min_pixels})) candidates[rec.class_id].push_back(std::move(rec));
        result.buffer.rebalance(std::move(candidates));
        result.images.rebalance(ds);

        result.reports.push_back(evaluate(model, test, schedule, t, config.base_step_boundary));
        if (hooks.on_step_end)
            hooks.on_step_end({t, &model, &result.buffer, &result.images, &result.reports.back(), &ds});
    }
    return result;
}

}  // namespace eir
