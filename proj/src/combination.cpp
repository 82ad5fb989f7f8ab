#include "eir/combination.hpp"

#include <algorithm>
#include <map>

#include "eir/error.hpp"

namespace eir {

PotentialClassRanking rank_potential_classes(const Tensor3& old_probs, const LabelMap& label, double tau) {
    if (old_probs.height != label.height || old_probs.width != label.width)
        throw ShapeError("probability map and label differ in size");
    if (old_probs.channels < 2) throw ShapeError("probability map has no old-class channel");
    if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("tau must lie in (0,1)");

    std::vector<long> counts(old_probs.channels, 0);
    const std::size_t n = old_probs.plane_size();
    for (std::size_t i = 0; i < n; ++i) {
        if (label.data[i] != kBackground) continue;
        int best = 1;
        for (int c = 2; c < old_probs.channels; ++c)
            if (old_probs.data[c * n + i] > old_probs.data[best * n + i]) best = c;
        if (old_probs.data[best * n + i] > tau) ++counts[best];
    }
    PotentialClassRanking ranking;
    for (int c = 1; c < old_probs.channels; ++c)
        if (counts[c] > 0) ranking.entries.emplace_back(static_cast<ClassId>(c), counts[c]);
    std::stable_sort(ranking.entries.begin(), ranking.entries.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    return ranking;
}

std::vector<InstanceRecord> select_instances(const PotentialClassRanking& ranking, const MemoryBuffer& buffer,
                                             const SelectionOptions& options, std::mt19937_64& rng) {
    if (options.max_instances < 0) throw ConfigError("max_instances must be non-negative");
    std::vector<InstanceRecord> out;
    std::vector<ClassId> chosen;
    auto draw_from = [&](ClassId c) {
        const auto& list = buffer.records(c);
        std::uniform_int_distribution<std::size_t> pick(0, list.size() - 1);
        out.push_back(list[pick(rng)]);
        chosen.push_back(c);
    };

    for (const auto& [c, _] : ranking.entries) {
        if (static_cast<int>(out.size()) >= options.max_instances) break;
        if (buffer.records(c).empty()) continue;
        draw_from(c);
    }
    if (options.fallback) {
        std::vector<ClassId> pool;
        for (const auto& [c, list] : buffer.per_class())
            if (!list.empty() && std::find(chosen.begin(), chosen.end(), c) == chosen.end()) pool.push_back(c);
        while (static_cast<int>(out.size()) < options.max_instances && !pool.empty()) {
            std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
            const std::size_t k = pick(rng);
            const ClassId c = pool[k];
            pool.erase(pool.begin() + static_cast<long>(k));
            draw_from(c);
        }
    }
    return out;
}

}  // namespace eir
