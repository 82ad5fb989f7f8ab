#include "eir/memory.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include <nlohmann/json.hpp>

#include "eir/error.hpp"
#include "eir/image_io.hpp"

namespace eir {

namespace fs = std::filesystem;

long InstanceRecord::mask_pixels() const {
    long n = 0;
    for (auto v : mask.data) n += v != 0;
    return n;
}

void validate(const InstanceRecord& r) {
    if (r.class_id == kBackground || r.class_id == kIgnore) throw ShapeError("instance has a reserved class id");
    if (r.mask.height <= 0 || r.mask.width <= 0) throw ShapeError("instance mask is empty");
    if (r.pixels.height != r.mask.height || r.pixels.width != r.mask.width)
        throw ShapeError("instance pixels and mask differ in size");
    bool top = false, bottom = false, left = false, right = false;
    for (int y = 0; y < r.mask.height; ++y)
        for (int x = 0; x < r.mask.width; ++x) {
            if (!r.mask.at(y, x)) continue;
            top |= y == 0;
            bottom |= y == r.mask.height - 1;
            left |= x == 0;
            right |= x == r.mask.width - 1;
        }
    if (!(top && bottom && left && right)) throw ShapeError("instance crop is not tight around its mask");
}

bool storage_order(const InstanceRecord& a, const InstanceRecord& b) {
    if (a.contiguity_score != b.contiguity_score) return a.contiguity_score > b.contiguity_score;
    const long na = a.mask_pixels(), nb = b.mask_pixels();
    if (na != nb) return na > nb;
    if (a.source_id != b.source_id) return a.source_id < b.source_id;
    // Remaining ties only between records from one source; order by content so the
    // ranking never depends on input order.
    if (a.mask.height != b.mask.height) return a.mask.height < b.mask.height;
    if (a.mask.width != b.mask.width) return a.mask.width < b.mask.width;
    if (a.mask.data != b.mask.data) return a.mask.data < b.mask.data;
    return a.pixels.data < b.pixels.data;
}

std::vector<InstanceRecord> extract_instances(const SegSample& sample, ExtractOptions options) {
    const auto& label = sample.label;
    const int h = label.height, w = label.width;
    std::map<ClassId, long> class_totals;
    for (ClassId v : label.data)
        if (v != kBackground && v != kIgnore) ++class_totals[v];

    std::vector<InstanceRecord> out;
    std::vector<int> component(label.pixels(), -1);
    std::vector<int> queue;
    queue.reserve(label.pixels());
    int next_component = 0;
    for (int sy = 0; sy < h; ++sy)
        for (int sx = 0; sx < w; ++sx) {
            const ClassId c = label.at(sy, sx);
            const std::size_t seed = static_cast<std::size_t>(sy) * w + sx;
            if (c == kBackground || c == kIgnore || component[seed] >= 0) continue;

            const int id = next_component++;
            queue.clear();
            queue.push_back(static_cast<int>(seed));
            component[seed] = id;
            int y0 = sy, y1 = sy, x0 = sx, x1 = sx;
            for (std::size_t head = 0; head < queue.size(); ++head) {
                const int y = queue[head] / w, x = queue[head] % w;
                y0 = std::min(y0, y);
                y1 = std::max(y1, y);
                x0 = std::min(x0, x);
                x1 = std::max(x1, x);
                const int ny[4] = {y - 1, y + 1, y, y};
                const int nx[4] = {x, x, x - 1, x + 1};
                for (int k = 0; k < 4; ++k) {
                    if (ny[k] < 0 || ny[k] >= h || nx[k] < 0 || nx[k] >= w) continue;
                    const std::size_t n = static_cast<std::size_t>(ny[k]) * w + nx[k];
                    if (component[n] >= 0 || label.data[n] != c) continue;
                    component[n] = id;
                    queue.push_back(static_cast<int>(n));
                }
            }
            if (static_cast<int>(queue.size()) < options.min_pixels) continue;

            InstanceRecord r;
            r.class_id = c;
            r.source_id = sample.id;
            r.contiguity_score = static_cast<double>(queue.size()) / static_cast<double>(class_totals[c]);
            r.pixels = Image(y1 - y0 + 1, x1 - x0 + 1);
            r.mask = Mask(y1 - y0 + 1, x1 - x0 + 1, 0);
            for (int y = y0; y <= y1; ++y)
                for (int x = x0; x <= x1; ++x) {
                    for (int ch = 0; ch < 3; ++ch) r.pixels.at(y - y0, x - x0, ch) = sample.image.at(y, x, ch);
                    r.mask.at(y - y0, x - x0) = component[static_cast<std::size_t>(y) * w + x] == id;
                }
            out.push_back(std::move(r));
        }
    return out;
}

std::vector<InstanceRecord> extract_instances(const StepDataset& dataset, ExtractOptions options) {
    std::vector<InstanceRecord> out;
    for (const auto& s : dataset.samples) {
        auto part = extract_instances(s, options);
        std::move(part.begin(), part.end(), std::back_inserter(out));
    }
    return out;
}

std::vector<InstanceRecord> sample_for_storage(std::vector<InstanceRecord> candidates, int quota) {
    if (quota < 0) throw ConfigError("storage quota must be non-negative");
    const std::size_t keep = std::min<std::size_t>(quota, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + keep, candidates.end(), storage_order);
    candidates.resize(keep);
    return candidates;
}

std::map<ClassId, int> class_quotas(int capacity, const std::set<ClassId>& classes) {
    std::map<ClassId, int> out;
    if (classes.empty()) return out;
    const int n = static_cast<int>(classes.size());
    const int base = capacity / n;
    int remainder = capacity % n;
    for (ClassId c : classes) out[c] = base + (remainder-- > 0 ? 1 : 0);
    return out;
}

MemoryBuffer::MemoryBuffer(int capacity) : capacity_(capacity) {
    if (capacity < 0) throw ConfigError("buffer capacity must be non-negative");
}

const std::vector<InstanceRecord>& MemoryBuffer::records(ClassId c) const {
    static const std::vector<InstanceRecord> kEmpty;
    auto it = per_class_.find(c);
    return it == per_class_.end() ? kEmpty : it->second;
}

std::size_t MemoryBuffer::size() const {
    std::size_t n = 0;
    for (const auto& [_, list] : per_class_) n += list.size();
    return n;
}

void MemoryBuffer::rebalance(std::map<ClassId, std::vector<InstanceRecord>> candidates_by_class) {
    for (const auto& [c, list] : candidates_by_class) {
        if (c == kBackground || c == kIgnore) throw ConfigError("cannot store the background class");
        if (learned_.contains(c)) throw ConfigError("class " + std::to_string(c) + " is already in the buffer");
        for (const auto& r : list)
            if (r.class_id != c) throw ConfigError("candidate of class " + std::to_string(r.class_id) +
                                                   " filed under class " + std::to_string(c));
    }
    std::set<ClassId> learned = learned_;
    for (const auto& [c, _] : candidates_by_class) learned.insert(c);
    const auto quotas = class_quotas(capacity_, learned);

    for (auto& [c, list] : per_class_) {
        const int q = quotas.at(c);
        if (static_cast<int>(list.size()) > q) {
            std::stable_sort(list.begin(), list.end(), storage_order);
            list.resize(q);
        }
    }
    for (auto& [c, list] : candidates_by_class) {
        auto kept = sample_for_storage(std::move(list), quotas.at(c));
        if (!kept.empty()) per_class_[c] = std::move(kept);
    }
    std::erase_if(per_class_, [](const auto& kv) { return kv.second.empty(); });
    learned_ = std::move(learned);
}

void MemoryBuffer::restore(std::set<ClassId> learned, std::map<ClassId, std::vector<InstanceRecord>> per_class) {
    std::size_t total = 0;
    for (const auto& [c, list] : per_class) {
        if (!learned.contains(c)) throw DataError("stored class " + std::to_string(c) + " is not a learned class");
        for (const auto& r : list) {
            if (r.class_id != c) throw DataError("record class mismatch under class " + std::to_string(c));
            validate(r);
        }
        total += list.size();
    }
    if (total > static_cast<std::size_t>(capacity_)) throw DataError("buffer holds more records than its capacity");
    learned_ = std::move(learned);
    per_class_ = std::move(per_class);
    std::erase_if(per_class_, [](const auto& kv) { return kv.second.empty(); });
}

MemoryBuffer rebalance(MemoryBuffer buffer, std::map<ClassId, std::vector<InstanceRecord>> candidates_by_class) {
    buffer.rebalance(std::move(candidates_by_class));
    return buffer;
}

void save_buffer(const MemoryBuffer& buffer, const fs::path& dir) {
    fs::create_directories(dir);
    nlohmann::json manifest;
    manifest["capacity"] = buffer.capacity();
    manifest["learned_classes"] = buffer.learned_classes();
    nlohmann::json records = nlohmann::json::array();
    int n = 0;
    for (const auto& [c, list] : buffer.per_class()) {
        for (const auto& r : list) {
            if (!io::on_byte_grid(r.pixels))
                throw DataError("record from '" + r.source_id + "' has pixels off the 8-bit grid");
            char stem[32];
            std::snprintf(stem, sizeof stem, "%03d", n++);
            const std::string rgb_name = std::string(stem) + "_rgb.png";
            const std::string mask_name = std::string(stem) + "_mask.png";
            io::write_rgb_png(dir / rgb_name, io::quantize(r.pixels));
            io::Gray8 m{r.mask.height, r.mask.width, std::vector<std::uint8_t>(r.mask.pixels())};
            for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] = r.mask.data[i] ? 255 : 0;
            io::write_gray_png(dir / mask_name, m);
            records.push_back({{"class_id", r.class_id},
                               {"contiguity_score", r.contiguity_score},
                               {"source_id", r.source_id},
                               {"rgb", rgb_name},
                               {"mask", mask_name}});
        }
    }
    manifest["records"] = records;
    std::ofstream out(dir / "manifest.json");
    if (!out) throw DataError("cannot write " + (dir / "manifest.json").string());
    out << manifest.dump(2) << '\n';
}

MemoryBuffer load_buffer(const fs::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw DataError("missing buffer manifest in " + dir.string());
    nlohmann::json manifest;
    try {
        in >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("corrupt buffer manifest: " + std::string(e.what()));
    }
    try {
        MemoryBuffer buffer(manifest.at("capacity").get<int>());
        const auto learned = manifest.at("learned_classes").get<std::set<ClassId>>();
        std::map<ClassId, std::vector<InstanceRecord>> per_class;
        int index = 0;
        for (const auto& e : manifest.at("records")) {
            const std::string rgb_name = e.at("rgb").get<std::string>();
            const std::string mask_name = e.at("mask").get<std::string>();
            const std::string what = "buffer record " + std::to_string(index++) + " (" + rgb_name + ")";
            if (!fs::exists(dir / rgb_name) || !fs::exists(dir / mask_name))
                throw DataError(what + ": missing crop file");
            InstanceRecord r;
            r.class_id = e.at("class_id").get<ClassId>();
            r.contiguity_score = e.at("contiguity_score").get<double>();
            r.source_id = e.at("source_id").get<std::string>();
            r.pixels = io::dequantize(io::read_rgb(dir / rgb_name));
            const auto m = io::read_indexed_png(dir / mask_name);
            r.mask = Mask(m.height, m.width);
            for (std::size_t i = 0; i < m.data.size(); ++i) {
                if (m.data[i] != 0 && m.data[i] != 255) throw DataError(what + ": mask is not binary");
                r.mask.data[i] = m.data[i] ? 1 : 0;
            }
            try {
                validate(r);
            } catch (const ShapeError& err) {
                throw DataError(what + ": " + err.what());
            }
            per_class[r.class_id].push_back(std::move(r));
        }
        buffer.restore(learned, std::move(per_class));
        return buffer;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("corrupt buffer manifest: " + std::string(e.what()));
    }
}

}  // namespace eir
