#include "eir/protocol.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "eir/error.hpp"
#include "eir/image_io.hpp"

namespace eir {

namespace fs = std::filesystem;

std::string_view to_string(ScheduleMode mode) {
    return mode == ScheduleMode::overlapped ? "overlapped" : "disjoint";
}

ScheduleMode parse_schedule_mode(std::string_view text) {
    if (text == "overlapped" || text == "overlap") return ScheduleMode::overlapped;
    if (text == "disjoint") return ScheduleMode::disjoint;
    throw ConfigError("unknown schedule mode '" + std::string(text) + "'");
}

TaskSchedule::TaskSchedule(std::vector<std::set<ClassId>> steps, ScheduleMode mode)
    : steps_(std::move(steps)), mode_(mode) {
    if (steps_.empty()) throw ConfigError("schedule has no steps");
    std::set<ClassId> seen;
    for (std::size_t i = 0; i < steps_.size(); ++i) {
        if (steps_[i].empty()) throw ConfigError("schedule step " + std::to_string(i + 1) + " is empty");
        for (ClassId c : steps_[i]) {
            if (c == kBackground || c == kIgnore)
                throw ConfigError("schedule step " + std::to_string(i + 1) + " contains a reserved class id");
            if (!seen.insert(c).second)
                throw ConfigError("class " + std::to_string(c) + " appears in more than one step");
        }
    }
    total_classes_ = static_cast<int>(seen.size());
    if (*seen.rbegin() != total_classes_)
        throw ConfigError("schedule classes must cover 1.." + std::to_string(total_classes_) + " exactly");
}

TaskSchedule TaskSchedule::parse(std::string_view shorthand, int total_classes, ScheduleMode mode) {
    std::vector<int> counts;
    std::size_t pos = 0;
    while (pos <= shorthand.size()) {
        const std::size_t dash = std::min(shorthand.find('-', pos), shorthand.size());
        const std::string_view token = shorthand.substr(pos, dash - pos);
        int value = 0;
        auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
        if (token.empty() || ec != std::errc{} || ptr != token.data() + token.size() || value <= 0)
            throw ConfigError("malformed schedule shorthand '" + std::string(shorthand) + "'");
        counts.push_back(value);
        pos = dash + 1;
    }
    if (counts.size() == 1 && counts[0] != total_classes)
        throw ConfigError("single-step schedule '" + std::string(shorthand) + "' must cover all " +
                          std::to_string(total_classes) + " classes");

    std::vector<int> sizes;
    int sum = 0;
    for (int c : counts) sum += c;
    if (counts.size() != 2 || sum == total_classes) {
        sizes = counts;
    } else {
        const int rest = total_classes - counts[0];
        if (rest <= 0 || rest % counts[1] != 0)
            throw ConfigError("schedule '" + std::string(shorthand) + "' does not tile " +
                              std::to_string(total_classes) + " classes");
        sizes.push_back(counts[0]);
        for (int i = 0; i < rest / counts[1]; ++i) sizes.push_back(counts[1]);
    }
    int total = 0;
    for (int s : sizes) total += s;
    if (total != total_classes)
        throw ConfigError("schedule '" + std::string(shorthand) + "' covers " + std::to_string(total) +
                          " classes, expected " + std::to_string(total_classes));

    std::vector<std::set<ClassId>> steps;
    ClassId next = 1;
    for (int s : sizes) {
        std::set<ClassId> step;
        for (int i = 0; i < s; ++i) step.insert(next++);
        steps.push_back(std::move(step));
    }
    return TaskSchedule(std::move(steps), mode);
}

const std::set<ClassId>& TaskSchedule::step_classes(int t) const {
    if (t < 1 || t > num_steps())
        throw ScheduleRangeError("step " + std::to_string(t) + " outside 1.." + std::to_string(num_steps()));
    return steps_[t - 1];
}

std::set<ClassId> TaskSchedule::learned_through(int t) const {
    if (t < 0 || t > num_steps())
        throw ScheduleRangeError("step " + std::to_string(t) + " outside 0.." + std::to_string(num_steps()));
    std::set<ClassId> out;
    for (int i = 0; i < t; ++i) out.insert(steps_[i].begin(), steps_[i].end());
    return out;
}

std::set<ClassId> TaskSchedule::future_after(int t) const {
    if (t < 0 || t > num_steps())
        throw ScheduleRangeError("step " + std::to_string(t) + " outside 0.." + std::to_string(num_steps()));
    std::set<ClassId> out;
    for (int i = t; i < num_steps(); ++i) out.insert(steps_[i].begin(), steps_[i].end());
    return out;
}

int TaskSchedule::step_of(ClassId id) const {
    if (id == kBackground) return 0;
    for (int i = 0; i < num_steps(); ++i)
        if (steps_[i].contains(id)) return i + 1;
    throw ConfigError("class " + std::to_string(id) + " is not in the schedule");
}

std::string TaskSchedule::shorthand() const {
    std::string out;
    for (std::size_t i = 0; i < steps_.size(); ++i) {
        if (i) out += '-';
        out += std::to_string(steps_[i].size());
    }
    return out;
}

LabelMap relabel(const LabelMap& label, const std::set<ClassId>& keep) {
    LabelMap out = label;
    for (auto& v : out.data)
        if (v != kIgnore && !keep.contains(v)) v = kBackground;
    return out;
}

StepDataset build_step_dataset(const std::vector<SegSample>& full, const TaskSchedule& schedule, int t,
                               StepFilter filter) {
    const auto& current = schedule.step_classes(t);
    const auto future = schedule.future_after(t);

    StepDataset out;
    out.step_index = t;
    out.visible_classes = current;
    for (std::size_t i = 0; i < full.size(); ++i) {
        const auto& sample = full[i];
        long new_pixels = 0;
        bool has_future = false;
        for (ClassId v : sample.label.data) {
            if (current.contains(v)) ++new_pixels;
            else if (future.contains(v)) has_future = true;
        }
        if (new_pixels < std::max(1, filter.min_new_pixels)) continue;
        if (schedule.mode() == ScheduleMode::disjoint && has_future) continue;
        out.samples.push_back({sample.image, relabel(sample.label, current), sample.id});
        out.source_index.push_back(i);
    }
    if (out.samples.empty())
        throw EmptyStepError("step " + std::to_string(t) + " selects no samples (" +
                             std::string(to_string(schedule.mode())) + ")");
    return out;
}

// --- synthetic data ----------------------------------------------------------

std::string_view to_string(ShapeKind kind) {
    switch (kind) {
        case ShapeKind::disk: return "disk";
        case ShapeKind::square: return "square";
        case ShapeKind::diamond: return "diamond";
        case ShapeKind::triangle: return "triangle";
        case ShapeKind::ellipse: return "ellipse";
        case ShapeKind::cross: return "cross";
    }
    return "?";
}

bool shape_contains(const ShapeSpec& s, double y, double x) {
    const double dy = y - s.center_y;
    const double dx = x - s.center_x;
    const double r = s.radius;
    switch (s.kind) {
        case ShapeKind::disk: return dy * dy + dx * dx <= r * r;
        case ShapeKind::square: return std::abs(dy) <= 0.85 * r && std::abs(dx) <= 0.85 * r;
        case ShapeKind::diamond: return std::abs(dy) + std::abs(dx) <= r;
        case ShapeKind::triangle: {
            // apex (-r, 0), base at dy = 0.7r spanning dx in [-r, r]
            if (dy > 0.7 * r) return false;
            const double half_width = r * (dy + r) / (1.7 * r);
            return std::abs(dx) <= half_width;
        }
        case ShapeKind::ellipse: {
            const double a = dy / (0.6 * r), b = dx / r;
            return a * a + b * b <= 1.0;
        }
        case ShapeKind::cross: {
            const double ay = std::abs(dy), ax = std::abs(dx);
            return (ay <= r && ax <= 0.35 * r) || (ax <= r && ay <= 0.35 * r);
        }
    }
    return false;
}

std::vector<std::vector<double>> default_affinity(int num_classes) {
    std::vector<std::vector<double>> a(num_classes, std::vector<double>(num_classes, 1.0));
    for (int i = 0; i < num_classes; ++i) {
        a[i][i] = 0.5;
        if (num_classes >= 2) {
            const int partner = (i + num_classes / 2) % num_classes;
            if (partner != i) a[i][partner] = 8.0;
        }
    }
    return a;
}

namespace {

struct Appearance {
    ShapeKind kind;
    double rgb[3];
    int texture;  // 0 solid, 1 horizontal stripes, 2 vertical stripes, 3 checker
};

Appearance appearance_of(ClassId c) {
    static constexpr double kColors[12][3] = {
        {0.90, 0.15, 0.15}, {0.15, 0.75, 0.20}, {0.20, 0.30, 0.95}, {0.95, 0.85, 0.10},
        {0.85, 0.20, 0.85}, {0.10, 0.85, 0.90}, {0.95, 0.55, 0.10}, {0.55, 0.95, 0.45},
        {0.55, 0.35, 0.95}, {0.95, 0.45, 0.65}, {0.40, 0.65, 0.95}, {0.75, 0.75, 0.35}};
    const int i = (c - 1);
    Appearance a{};
    a.kind = static_cast<ShapeKind>(i % 6);
    for (int k = 0; k < 3; ++k) a.rgb[k] = kColors[i % 12][k];
    a.texture = (i / 6 + i) % 4;
    return a;
}

double quantized(double v) { return std::lround(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

bool boxes_clear(const ShapeSpec& a, const ShapeSpec& b) {
    const double gap = 2.0;
    return a.center_y + a.radius + gap < b.center_y - b.radius || b.center_y + b.radius + gap < a.center_y - a.radius ||
           a.center_x + a.radius + gap < b.center_x - b.radius || b.center_x + b.radius + gap < a.center_x - a.radius;
}

}  // namespace

std::vector<SyntheticScene> generate_synthetic_scenes(const SyntheticConfig& cfg) {
    if (cfg.num_classes < 2) throw ConfigError("synthetic data needs at least 2 classes");
    if (cfg.height < 32 || cfg.width < 32) throw ConfigError("synthetic images must be at least 32x32");
    if (cfg.samples_per_class < 1) throw ConfigError("samples_per_class must be positive");
    const auto affinity = cfg.affinity.empty() ? default_affinity(cfg.num_classes) : cfg.affinity;
    if (static_cast<int>(affinity.size()) != cfg.num_classes)
        throw ConfigError("affinity matrix must be num_classes x num_classes");
    for (const auto& row : affinity)
        if (static_cast<int>(row.size()) != cfg.num_classes) throw ConfigError("affinity matrix must be square");

    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, 1.0);
    const double extent = std::min(cfg.height, cfg.width);

    std::vector<SyntheticScene> scenes;
    scenes.reserve(static_cast<std::size_t>(cfg.num_classes) * cfg.samples_per_class);
    for (int primary = 1; primary <= cfg.num_classes; ++primary) {
        std::discrete_distribution<int> companion(affinity[primary - 1].begin(), affinity[primary - 1].end());
        for (int k = 0; k < cfg.samples_per_class; ++k) {
            SyntheticScene scene;
            std::vector<ClassId> classes{static_cast<ClassId>(primary)};
            const double u = unit(rng);
            const int extra = u < 0.25 ? 0 : (u < 0.75 ? 1 : 2);
            for (int e = 0; e < extra; ++e) classes.push_back(static_cast<ClassId>(companion(rng) + 1));

            for (std::size_t n = 0; n < classes.size(); ++n) {
                for (int attempt = 0; attempt < 200; ++attempt) {
                    ShapeSpec s;
                    s.class_id = classes[n];
                    s.kind = appearance_of(s.class_id).kind;
                    s.radius = extent * (0.12 + 0.08 * unit(rng));
                    s.center_y = s.radius + 1.0 + unit(rng) * (cfg.height - 2.0 * s.radius - 2.0);
                    s.center_x = s.radius + 1.0 + unit(rng) * (cfg.width - 2.0 * s.radius - 2.0);
                    bool clear = true;
                    for (const auto& other : scene.shapes) clear = clear && boxes_clear(s, other);
                    if (clear) {
                        scene.shapes.push_back(s);
                        break;
                    }
                }
                // The primary object always fits on an empty canvas.
            }

            auto& sample = scene.sample;
            sample.id = [&] {
                char buf[16];
                std::snprintf(buf, sizeof buf, "s%05zu", scenes.size());
                return std::string(buf);
            }();
            sample.image = Image(cfg.height, cfg.width);
            sample.label = LabelMap(cfg.height, cfg.width, kBackground);

            double bg0[3], bg1[3];
            for (int c = 0; c < 3; ++c) {
                const double gray = 0.25 + 0.3 * unit(rng);
                bg0[c] = gray + 0.08 * (unit(rng) - 0.5);
                bg1[c] = gray + 0.08 * (unit(rng) - 0.5) + 0.1 * (unit(rng) - 0.5);
            }
            const bool vertical = unit(rng) < 0.5;
            for (int y = 0; y < cfg.height; ++y)
                for (int x = 0; x < cfg.width; ++x) {
                    const double f = vertical ? double(y) / cfg.height : double(x) / cfg.width;
                    for (int c = 0; c < 3; ++c)
                        sample.image.at(y, x, c) = quantized((1 - f) * bg0[c] + f * bg1[c] + 0.05 * noise(rng));
                }

            for (const auto& s : scene.shapes) {
                const Appearance a = appearance_of(s.class_id);
                const double shade = 0.85 + 0.3 * unit(rng);
                for (int y = 0; y < cfg.height; ++y)
                    for (int x = 0; x < cfg.width; ++x) {
                        if (!shape_contains(s, y + 0.5, x + 0.5)) continue;
                        sample.label.at(y, x) = s.class_id;
                        double mod = 1.0;
                        switch (a.texture) {
                            case 1: mod = ((y / 3) % 2) ? 0.7 : 1.0; break;
                            case 2: mod = ((x / 3) % 2) ? 0.7 : 1.0; break;
                            case 3: mod = (((y / 3) + (x / 3)) % 2) ? 0.7 : 1.0; break;
                            default: break;
                        }
                        for (int c = 0; c < 3; ++c)
                            sample.image.at(y, x, c) = quantized(a.rgb[c] * shade * mod + 0.04 * noise(rng));
                    }
            }
            scenes.push_back(std::move(scene));
        }
    }
    return scenes;
}

std::vector<SegSample> generate_synthetic_dataset(const SyntheticConfig& config) {
    auto scenes = generate_synthetic_scenes(config);
    std::vector<SegSample> out;
    out.reserve(scenes.size());
    for (auto& s : scenes) out.push_back(std::move(s.sample));
    return out;
}

std::vector<SegSample> generate_synthetic_dataset(int num_classes, int samples_per_class, int height, int width,
                                                  std::uint64_t seed) {
    SyntheticConfig cfg;
    cfg.num_classes = num_classes;
    cfg.samples_per_class = samples_per_class;
    cfg.height = height;
    cfg.width = width;
    cfg.seed = seed;
    return generate_synthetic_dataset(cfg);
}

// --- VOC-style folders -------------------------------------------------------

PaletteTable read_palette(const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw DataError("cannot open palette " + file.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("palette " + file.string() + " is not valid json: " + e.what());
    }
    if (!j.is_object()) throw DataError("palette " + file.string() + " must be a json object");
    PaletteTable table;
    for (const auto& [key, value] : j.items()) {
        int index = 0;
        auto [ptr, ec] = std::from_chars(key.data(), key.data() + key.size(), index);
        if (ec != std::errc{} || ptr != key.data() + key.size() || index < 0 || index > 255)
            throw DataError("palette key '" + key + "' is not an index in 0..255");
        if (value.is_string() && value.get<std::string>() == "ignore") {
            table[index] = kIgnore;
        } else if (value.is_number_integer() && value.get<int>() >= 0 && value.get<int>() < kIgnore) {
            table[index] = static_cast<ClassId>(value.get<int>());
        } else {
            throw DataError("palette entry " + key + " must be a class id or \"ignore\"");
        }
    }
    return table;
}

void write_palette(const fs::path& file, const PaletteTable& table) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [index, id] : table) {
        if (id == kIgnore) j[std::to_string(index)] = "ignore";
        else j[std::to_string(index)] = id;
    }
    std::ofstream out(file);
    if (!out) throw DataError("cannot write palette " + file.string());
    out << j.dump(2) << '\n';
}

std::vector<SegSample> load_voc_format(const fs::path& root, const PaletteTable& palette) {
    const fs::path image_dir = root / "images";
    const fs::path mask_dir = root / "masks";
    std::map<std::string, fs::path> images, masks;
    auto lower_ext = [](const fs::path& p) {
        std::string e = p.extension().string();
        std::transform(e.begin(), e.end(), e.begin(), [](unsigned char ch) { return std::tolower(ch); });
        return e;
    };
    if (fs::is_directory(image_dir))
        for (const auto& entry : fs::directory_iterator(image_dir)) {
            const auto ext = lower_ext(entry.path());
            if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") images[entry.path().stem().string()] = entry.path();
        }
    if (fs::is_directory(mask_dir))
        for (const auto& entry : fs::directory_iterator(mask_dir))
            if (lower_ext(entry.path()) == ".png") masks[entry.path().stem().string()] = entry.path();

    for (const auto& [stem, _] : masks)
        if (!images.contains(stem)) throw DataError("mask '" + stem + "' has no matching image");

    std::vector<SegSample> out;
    for (const auto& [stem, image_path] : images) {
        auto it = masks.find(stem);
        if (it == masks.end()) throw DataError("image '" + stem + "' has no matching mask");
        const auto rgb = io::read_rgb(image_path);
        const auto idx = io::read_indexed_png(it->second);
        if (rgb.height != idx.height || rgb.width != idx.width)
            throw DataError("image and mask '" + stem + "' differ in size");
        SegSample s;
        s.id = stem;
        s.image = io::dequantize(rgb);
        s.label = LabelMap(idx.height, idx.width);
        for (std::size_t i = 0; i < idx.data.size(); ++i) {
            auto p = palette.find(idx.data[i]);
            if (p == palette.end())
                throw DataError("mask '" + stem + "' uses palette index " + std::to_string(idx.data[i]) +
                                " which is not in the palette table");
            s.label.data[i] = p->second;
        }
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<SegSample> load_voc_format(const fs::path& root) {
    if (!fs::exists(root / "palette.json")) {
        if (!fs::is_directory(root / "images") || fs::is_empty(root / "images")) return {};
        throw DataError("missing palette.json in " + root.string());
    }
    return load_voc_format(root, read_palette(root / "palette.json"));
}

void save_voc_format(const fs::path& root, const std::vector<SegSample>& samples, int num_classes) {
    if (num_classes >= 255) throw DataError("indexed masks hold at most 254 classes");
    fs::create_directories(root / "images");
    fs::create_directories(root / "masks");
    const auto colormap = io::voc_colormap();
    for (const auto& s : samples) {
        io::write_rgb_png(root / "images" / (s.id + ".png"), io::quantize(s.image));
        io::Gray8 idx{s.label.height, s.label.width, std::vector<std::uint8_t>(s.label.pixels())};
        for (std::size_t i = 0; i < idx.data.size(); ++i) {
            const ClassId v = s.label.data[i];
            if (v != kIgnore && v > num_classes)
                throw DataError("sample '" + s.id + "' has class " + std::to_string(v) + " beyond num_classes");
            idx.data[i] = v == kIgnore ? 255 : static_cast<std::uint8_t>(v);
        }
        io::write_indexed_png(root / "masks" / (s.id + ".png"), idx, colormap);
    }
    PaletteTable table;
    for (int c = 0; c <= num_classes; ++c) table[c] = static_cast<ClassId>(c);
    table[255] = kIgnore;
    write_palette(root / "palette.json", table);
}

Tensor3 to_planar(const Image& image) {
    Tensor3 out(3, image.height, image.width);
    const std::size_t n = image.pixels();
    for (std::size_t i = 0; i < n; ++i)
        for (int c = 0; c < 3; ++c) out.data[c * n + i] = image.data[i * 3 + c];
    return out;
}

}  // namespace eir
