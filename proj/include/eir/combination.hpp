#pragma once

#include <random>
#include <utility>
#include <vector>

#include "eir/memory.hpp"
#include "eir/tensor.hpp"

namespace eir {

/// Old classes the frozen model sees in the background of an image, most
/// high-confidence pixels first (ties to the lower class id).
struct PotentialClassRanking {
    std::vector<std::pair<ClassId, long>> entries;

    bool operator==(const PotentialClassRanking&) const = default;
};

inline constexpr double kDefaultTau = 0.7;

/// Counts, over ground-truth background pixels only, the pixels whose argmax old
/// class (excluding background) has probability above `tau`. `old_probs` holds a
/// per-pixel distribution over background + old classes.
PotentialClassRanking rank_potential_classes(const Tensor3& old_probs, const LabelMap& label,
                                             double tau = kDefaultTau);

struct SelectionOptions {
    int max_instances = 2;
    /// Fill slots the ranking leaves empty with uniformly drawn buffer classes.
    bool fallback = true;
};

/// One uniformly drawn record per selected class; never two records of a class.
std::vector<InstanceRecord> select_instances(const PotentialClassRanking& ranking, const MemoryBuffer& buffer,
                                             const SelectionOptions& options, std::mt19937_64& rng);

}  // namespace eir
