#include "eir/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "eir/error.hpp"
#include "eir/kernels.hpp"

namespace eir {

using kernels::ConvShape;

// --- Parameters ----------------------------------------------------------------

std::size_t Parameters::count() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.size();
    return n;
}

Parameters Parameters::zeros_like() const {
    Parameters p;
    p.tensors.reserve(tensors.size());
    for (const auto& t : tensors) p.tensors.emplace_back(t.size(), 0.0);
    return p;
}

void Parameters::set_zero() {
    for (auto& t : tensors) std::fill(t.begin(), t.end(), 0.0);
}

void Parameters::axpy(double a, const Parameters& other) {
    if (other.tensors.size() != tensors.size()) throw ShapeError("parameter sets differ in layout");
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        if (other.tensors[i].size() != tensors[i].size()) throw ShapeError("parameter sets differ in layout");
        for (std::size_t j = 0; j < tensors[i].size(); ++j) tensors[i][j] += a * other.tensors[i][j];
    }
}

double& Parameters::flat(std::size_t i) {
    for (auto& t : tensors) {
        if (i < t.size()) return t[i];
        i -= t.size();
    }
    throw ShapeError("parameter index out of range");
}

double Parameters::flat(std::size_t i) const { return const_cast<Parameters*>(this)->flat(i); }

bool Parameters::all_finite() const {
    for (const auto& t : tensors)
        for (double v : t)
            if (!std::isfinite(v)) return false;
    return true;
}

// --- normalization ---------------------------------------------------------------

std::vector<Tensor3> forward_batch(const SegPredictor& model, std::span<const Image> batch) {
    std::vector<Tensor3> out;
    out.reserve(batch.size());
    for (const auto& image : batch) {
        if (image.height != batch.front().height || image.width != batch.front().width)
            throw ShapeError("batch images differ in size");
        out.push_back(model.forward(image));
    }
    return out;
}

Tensor3 softmax(const Tensor3& scores) {
    Tensor3 out(scores.channels, scores.height, scores.width);
    const std::size_t n = scores.plane_size();
    for (std::size_t i = 0; i < n; ++i) {
        double m = -INFINITY;
        for (int c = 0; c < scores.channels; ++c) m = std::max(m, scores.data[c * n + i]);
        double z = 0.0;
        for (int c = 0; c < scores.channels; ++c) {
            const double e = std::exp(scores.data[c * n + i] - m);
            out.data[c * n + i] = e;
            z += e;
        }
        for (int c = 0; c < scores.channels; ++c) out.data[c * n + i] /= z;
    }
    return out;
}

Tensor3 sigmoid(const Tensor3& scores) {
    Tensor3 out = scores;
    for (auto& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
    return out;
}

LabelMap argmax_labels(const Tensor3& scores) {
    LabelMap out(scores.height, scores.width, kBackground);
    const std::size_t n = scores.plane_size();
    for (std::size_t i = 0; i < n; ++i) {
        int best = 0;
        for (int c = 1; c < scores.channels; ++c)
            if (scores.data[c * n + i] > scores.data[best * n + i]) best = c;
        out.data[i] = static_cast<ClassId>(best);
    }
    return out;
}

// --- ConvSegNet ------------------------------------------------------------------

namespace {

// Layer table: (in channels, out channels, kernel, stride) in units of `width`.
//   0 enc1   3  -> w    3x3 s1
//   1 enc2   w  -> 2w   3x3 s2
//   2 enc3   2w -> 2w   3x3 s2
//   3 ctx    2w -> 2w   3x3 s1
//   4 dec2   4w -> w    3x3 s1   input: up(ctx) ++ enc2
//   5 dec1   2w -> w    1x1      input: up(dec2) ++ enc1
//   6 head   w  -> K    1x1
constexpr int kLayers = 7;

struct LayerSpec {
    int in_c, out_c, kernel, stride;
};

LayerSpec layer_spec(int layer, int w, int k_out) {
    switch (layer) {
        case 0: return {3, w, 3, 1};
        case 1: return {w, 2 * w, 3, 2};
        case 2: return {2 * w, 2 * w, 3, 2};
        case 3: return {2 * w, 2 * w, 3, 1};
        case 4: return {4 * w, w, 3, 1};
        case 5: return {2 * w, w, 1, 1};
        default: return {w, k_out, 1, 1};
    }
}

ConvShape conv_shape(const LayerSpec& l, int in_h, int in_w) {
    return ConvShape{l.in_c, in_h, in_w, l.out_c, l.kernel, l.stride, l.kernel / 2};
}

// Slots in Activations::saved.
enum Slot { kInput, kEnc1, kEnc2, kEnc3, kCtx, kCat2, kDec2, kCat1, kDec1, kSlots };

void relu(Tensor3& t) {
    for (auto& v : t.data) v = v > 0.0 ? v : 0.0;
}

void relu_backward(const Tensor3& activated, Tensor3& grad) {
    for (std::size_t i = 0; i < grad.data.size(); ++i)
        if (activated.data[i] <= 0.0) grad.data[i] = 0.0;
}

Tensor3 concat(const Tensor3& a, const Tensor3& b) {
    Tensor3 out(a.channels + b.channels, a.height, a.width);
    std::copy(a.data.begin(), a.data.end(), out.data.begin());
    std::copy(b.data.begin(), b.data.end(), out.data.begin() + static_cast<long>(a.data.size()));
    return out;
}

Tensor3 upsample_to(const Tensor3& t, int h, int w) {
    Tensor3 out(t.channels, h, w);
    kernels::resize_nearest(t.channels, t.height, t.width, t.data, h, w, out.data);
    return out;
}

}  // namespace

ConvSegNet::ConvSegNet(int num_outputs, int width, std::uint64_t seed) : num_outputs_(num_outputs), width_(width) {
    if (width < 8) throw ConfigError("model width must be at least 8");
    if (num_outputs < 2) throw ConfigError("model needs background plus at least one class");
    std::mt19937_64 rng(seed);
    for (int l = 0; l < kLayers; ++l) {
        const auto spec = layer_spec(l, width, num_outputs);
        const int fan_in = spec.in_c * spec.kernel * spec.kernel;
        std::normal_distribution<double> init(0.0, std::sqrt(2.0 / fan_in));
        std::vector<double> w(static_cast<std::size_t>(spec.out_c) * fan_in);
        for (auto& v : w) v = init(rng);
        params_.tensors.push_back(std::move(w));
        params_.tensors.emplace_back(spec.out_c, 0.0);
    }
}

Tensor3 ConvSegNet::forward(const Image& image) const {
    Activations tape;
    return forward(image, tape);
}

Tensor3 ConvSegNet::forward(const Image& image, Activations& tape) const {
    auto conv = [&](int layer, const Tensor3& in) {
        const auto spec = layer_spec(layer, width_, num_outputs_);
        const auto shape = conv_shape(spec, in.height, in.width);
        Tensor3 out(spec.out_c, shape.out_h(), shape.out_w());
        const auto& w = params_.tensors[2 * layer];
        const auto& b = params_.tensors[2 * layer + 1];
        if (backend_ == KernelBackend::parallel)
            kernels::parallel::conv2d_forward(shape, in.data, w, b, out.data);
        else
            kernels::reference::conv2d_forward(shape, in.data, w, b, out.data);
        return out;
    };

    auto& s = tape.saved;
    s.assign(kSlots, Tensor3{});
    s[kInput] = to_planar(image);
    for (double& v : s[kInput].data) v = 2.0 * v - 1.0;
    s[kEnc1] = conv(0, s[kInput]);
    relu(s[kEnc1]);
    s[kEnc2] = conv(1, s[kEnc1]);
    relu(s[kEnc2]);
    s[kEnc3] = conv(2, s[kEnc2]);
    relu(s[kEnc3]);
    s[kCtx] = conv(3, s[kEnc3]);
    relu(s[kCtx]);
    s[kCat2] = concat(upsample_to(s[kCtx], s[kEnc2].height, s[kEnc2].width), s[kEnc2]);
    s[kDec2] = conv(4, s[kCat2]);
    relu(s[kDec2]);
    s[kCat1] = concat(upsample_to(s[kDec2], s[kEnc1].height, s[kEnc1].width), s[kEnc1]);
    s[kDec1] = conv(5, s[kCat1]);
    relu(s[kDec1]);
    return conv(6, s[kDec1]);
}

void ConvSegNet::backward(const Activations& tape, const Tensor3& grad_scores, Parameters& grads) const {
    const auto& s = tape.saved;
    if (s.size() != kSlots) throw ShapeError("activation tape does not belong to this model");
    if (grad_scores.channels != num_outputs_ || grad_scores.height != s[kInput].height ||
        grad_scores.width != s[kInput].width)
        throw ShapeError("score gradient has the wrong shape");

    // Gradient w.r.t. the layer input; when `need_input` is false only parameters are touched.
    auto conv_back = [&](int layer, const Tensor3& in, const Tensor3& grad_out, bool need_input) {
        const auto spec = layer_spec(layer, width_, num_outputs_);
        const auto shape = conv_shape(spec, in.height, in.width);
        auto& gw = grads.tensors[2 * layer];
        auto& gb = grads.tensors[2 * layer + 1];
        const auto& w = params_.tensors[2 * layer];
        Tensor3 grad_in;
        if (backend_ == KernelBackend::parallel) {
            kernels::parallel::conv2d_backward_params(shape, in.data, grad_out.data, gw, gb);
            if (need_input) {
                grad_in = Tensor3(in.channels, in.height, in.width);
                kernels::parallel::conv2d_backward_input(shape, grad_out.data, w, grad_in.data);
            }
        } else {
            kernels::reference::conv2d_backward_params(shape, in.data, grad_out.data, gw, gb);
            if (need_input) {
                grad_in = Tensor3(in.channels, in.height, in.width);
                kernels::reference::conv2d_backward_input(shape, grad_out.data, w, grad_in.data);
            }
        }
        return grad_in;
    };
    // Splits a concat gradient into (upsampled part reduced to `small`, skip part).
    auto split = [](const Tensor3& g, const Tensor3& small, int skip_channels) {
        const int up_channels = g.channels - skip_channels;
        const std::size_t n = g.plane_size();
        Tensor3 g_small(small.channels, small.height, small.width);
        kernels::resize_nearest_backward(up_channels, small.height, small.width, g_small.data, g.height, g.width,
                                         std::span<const double>(g.data.data(), up_channels * n));
        Tensor3 g_skip(skip_channels, g.height, g.width);
        std::copy(g.data.begin() + static_cast<long>(up_channels * n), g.data.end(), g_skip.data.begin());
        return std::pair{std::move(g_small), std::move(g_skip)};
    };

    Tensor3 g_dec1 = conv_back(6, s[kDec1], grad_scores, true);
    relu_backward(s[kDec1], g_dec1);
    Tensor3 g_cat1 = conv_back(5, s[kCat1], g_dec1, true);
    auto [g_dec2, g_enc1] = split(g_cat1, s[kDec2], s[kEnc1].channels);
    relu_backward(s[kDec2], g_dec2);
    Tensor3 g_cat2 = conv_back(4, s[kCat2], g_dec2, true);
    auto [g_ctx, g_enc2] = split(g_cat2, s[kCtx], s[kEnc2].channels);
    relu_backward(s[kCtx], g_ctx);
    Tensor3 g_enc3 = conv_back(3, s[kEnc3], g_ctx, true);
    relu_backward(s[kEnc3], g_enc3);
    Tensor3 g_enc2_more = conv_back(2, s[kEnc2], g_enc3, true);
    for (std::size_t i = 0; i < g_enc2.data.size(); ++i) g_enc2.data[i] += g_enc2_more.data[i];
    relu_backward(s[kEnc2], g_enc2);
    Tensor3 g_enc1_more = conv_back(1, s[kEnc1], g_enc2, true);
    for (std::size_t i = 0; i < g_enc1.data.size(); ++i) g_enc1.data[i] += g_enc1_more.data[i];
    relu_backward(s[kEnc1], g_enc1);
    conv_back(0, s[kInput], g_enc1, false);
}

void ConvSegNet::extend_head(const std::set<ClassId>& new_classes) {
    if (new_classes.empty()) throw ConfigError("extend_head needs at least one class");
    ClassId expected = static_cast<ClassId>(num_outputs_);
    for (ClassId c : new_classes) {
        if (c < num_outputs_) throw ConfigError("class " + std::to_string(c) + " already has an output channel");
        if (c != expected++) throw ConfigError("new classes must be the next consecutive ids");
    }
    const int n = static_cast<int>(new_classes.size());
    auto& w = params_.tensors[2 * (kLayers - 1)];
    auto& b = params_.tensors[2 * (kLayers - 1) + 1];
    w.resize(w.size() + static_cast<std::size_t>(n) * width_, 0.0);
    b.resize(b.size() + n, 0.0);
    num_outputs_ += n;
}

std::unique_ptr<SegPredictor> ConvSegNet::clone() const { return std::make_unique<ConvSegNet>(*this); }

std::unique_ptr<SegPredictor> reference_model(int num_classes, int width, std::uint64_t seed) {
    return std::make_unique<ConvSegNet>(num_classes + 1, width, seed);
}

ModelSnapshot snapshot(const SegPredictor& model, int step) {
    return ModelSnapshot(std::shared_ptr<const SegPredictor>(model.clone()), step);
}

// --- checkpoints -------------------------------------------------------------------

namespace {
constexpr char kMagic[] = "EIRCKPT1\n";
}

void save_checkpoint(const std::filesystem::path& file, const SegPredictor& model, const CheckpointMeta& meta) {
    nlohmann::json j;
    j["architecture"] = "conv_seg_net";
    j["width"] = model.width();
    j["num_outputs"] = model.num_outputs();
    j["step"] = meta.step;
    j["classes"] = meta.classes;
    j["seed"] = meta.seed;
    std::vector<std::size_t> sizes;
    for (const auto& t : model.parameters().tensors) sizes.push_back(t.size());
    j["tensor_sizes"] = sizes;
    const std::string header = j.dump();

    std::ofstream out(file, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint " + file.string());
    out.write(kMagic, sizeof kMagic - 1);
    const std::uint64_t len = header.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& t : model.parameters().tensors)
        out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!out) throw DataError("failed writing checkpoint " + file.string());
}

std::unique_ptr<SegPredictor> load_checkpoint(const std::filesystem::path& file, CheckpointMeta* meta) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint " + file.string());
    char magic[sizeof kMagic - 1];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) throw DataError("not a checkpoint: " + file.string());
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof len);
    if (!in || len > (1u << 20)) throw DataError("corrupt checkpoint header in " + file.string());
    std::string header(len, '\0');
    in.read(header.data(), static_cast<std::streamsize>(len));
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(header);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("corrupt checkpoint header in " + file.string() + ": " + e.what());
    }
    if (j.value("architecture", "") != "conv_seg_net") throw DataError("unknown architecture in " + file.string());
    auto model = std::make_unique<ConvSegNet>(j.at("num_outputs").get<int>(), j.at("width").get<int>(), 0);
    const auto sizes = j.at("tensor_sizes").get<std::vector<std::size_t>>();
    auto& params = model->parameters();
    if (sizes.size() != params.tensors.size()) throw DataError("checkpoint layout mismatch in " + file.string());
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        if (sizes[i] != params.tensors[i].size()) throw DataError("checkpoint layout mismatch in " + file.string());
        in.read(reinterpret_cast<char*>(params.tensors[i].data()),
                static_cast<std::streamsize>(sizes[i] * sizeof(double)));
    }
    if (!in) throw DataError("truncated checkpoint " + file.string());
    if (meta) {
        meta->step = j.at("step").get<int>();
        meta->classes = j.at("classes").get<std::vector<ClassId>>();
        meta->seed = j.at("seed").get<std::uint64_t>();
    }
    return model;
}

}  // namespace eir
