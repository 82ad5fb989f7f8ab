#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "eir/protocol.hpp"
#include "eir/tensor.hpp"

namespace eir {

/// One stored object: a tight RGB crop plus its silhouette.
struct InstanceRecord {
    Image pixels;
    Mask mask;
    ClassId class_id = kBackground;
    std::string source_id;
    double contiguity_score = 0.0;

    int height() const { return mask.height; }
    int width() const { return mask.width; }
    long mask_pixels() const;

    bool operator==(const InstanceRecord&) const = default;
};

/// Throws ShapeError if the record breaks an InstanceRecord invariant.
void validate(const InstanceRecord& record);

/// Strict weak order used for storage preference and eviction: higher
/// contiguity first, then larger silhouettes, then source id.
bool storage_order(const InstanceRecord& a, const InstanceRecord& b);

struct ExtractOptions {
    int min_pixels = 16;
};

/// One record per 4-connected component of every non-background, non-ignore label.
std::vector<InstanceRecord> extract_instances(const StepDataset& dataset, ExtractOptions options = {});
std::vector<InstanceRecord> extract_instances(const SegSample& sample, ExtractOptions options = {});

/// Top `quota` candidates under storage_order.
std::vector<InstanceRecord> sample_for_storage(std::vector<InstanceRecord> candidates, int quota);

/// floor(capacity / n) per class; the remainder goes one each to the lowest class ids.
std::map<ClassId, int> class_quotas(int capacity, const std::set<ClassId>& classes);

class MemoryBuffer {
public:
    explicit MemoryBuffer(int capacity = 0);

    int capacity() const { return capacity_; }
    const std::set<ClassId>& learned_classes() const { return learned_; }
    const std::map<ClassId, std::vector<InstanceRecord>>& per_class() const { return per_class_; }
    const std::vector<InstanceRecord>& records(ClassId c) const;
    std::size_t size() const;
    bool empty() const { return size() == 0; }

    /// Adds the new classes, re-derives every quota and trims old classes by
    /// evicting their least preferred records. Throws ConfigError when a class
    /// is already learned.
    void rebalance(std::map<ClassId, std::vector<InstanceRecord>> candidates_by_class);

    /// Low-level insertion used by load_buffer; checks invariants.
    void restore(std::set<ClassId> learned, std::map<ClassId, std::vector<InstanceRecord>> per_class);

    bool operator==(const MemoryBuffer&) const = default;

private:
    int capacity_ = 0;
    std::set<ClassId> learned_;
    std::map<ClassId, std::vector<InstanceRecord>> per_class_;
};

MemoryBuffer rebalance(MemoryBuffer buffer, std::map<ClassId, std::vector<InstanceRecord>> candidates_by_class);

/// Directory layout: manifest.json, NNN_rgb.png, NNN_mask.png (0/255).
void save_buffer(const MemoryBuffer& buffer, const std::filesystem::path& dir);
MemoryBuffer load_buffer(const std::filesystem::path& dir);

}  // namespace eir
