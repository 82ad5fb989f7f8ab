// Reference vs parallel convolution kernels at the sizes the model uses.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "eir/kernels.hpp"
#include "eir/model.hpp"

namespace k = eir::kernels;

namespace {

struct Buffers {
    k::ConvShape shape;
    std::vector<double> in, weight, bias, out;
};

Buffers make(int in_c, int out_c, int size, int kernel, int stride) {
    Buffers b;
    b.shape = {in_c, size, size, out_c, kernel, stride, kernel / 2};
    std::mt19937_64 rng(7);
    std::normal_distribution<double> n(0.0, 1.0);
    b.in.resize(static_cast<std::size_t>(in_c) * size * size);
    b.weight.resize(b.shape.weight_count());
    b.bias.resize(out_c);
    for (auto& v : b.in) v = n(rng);
    for (auto& v : b.weight) v = n(rng);
    for (auto& v : b.bias) v = n(rng);
    b.out.resize(static_cast<std::size_t>(out_c) * b.shape.out_h() * b.shape.out_w());
    return b;
}

template <bool Parallel>
void BM_Forward(benchmark::State& state) {
    auto b = make(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)),
                  static_cast<int>(state.range(2)), 3, 1);
    for (auto _ : state) {
        if constexpr (Parallel) k::parallel::conv2d_forward(b.shape, b.in, b.weight, b.bias, b.out);
        else k::reference::conv2d_forward(b.shape, b.in, b.weight, b.bias, b.out);
        benchmark::DoNotOptimize(b.out.data());
    }
    state.SetItemsProcessed(state.iterations() * b.shape.weight_count() * b.shape.out_h() * b.shape.out_w());
}

template <bool Parallel>
void BM_BackwardInput(benchmark::State& state) {
    auto b = make(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)),
                  static_cast<int>(state.range(2)), 3, 1);
    std::vector<double> grad_in(b.in.size());
    for (auto _ : state) {
        if constexpr (Parallel) k::parallel::conv2d_backward_input(b.shape, b.out, b.weight, grad_in);
        else k::reference::conv2d_backward_input(b.shape, b.out, b.weight, grad_in);
        benchmark::DoNotOptimize(grad_in.data());
    }
}

template <bool Parallel>
void BM_BackwardParams(benchmark::State& state) {
    auto b = make(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)),
                  static_cast<int>(state.range(2)), 3, 1);
    std::vector<double> gw(b.weight.size()), gb(b.bias.size());
    for (auto _ : state) {
        if constexpr (Parallel) k::parallel::conv2d_backward_params(b.shape, b.in, b.out, gw, gb);
        else k::reference::conv2d_backward_params(b.shape, b.in, b.out, gw, gb);
        benchmark::DoNotOptimize(gw.data());
    }
}

void BM_ModelForward(benchmark::State& state) {
    eir::ConvSegNet net(7, 8, 1);
    net.set_backend(state.range(0) ? eir::KernelBackend::parallel : eir::KernelBackend::reference);
    eir::Image img(64, 64);
    for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<double>(i % 255) / 255.0;
    for (auto _ : state) benchmark::DoNotOptimize(net.forward(img).data.data());
}

}  // namespace

BENCHMARK(BM_Forward<false>)->Args({3, 8, 64})->Args({16, 16, 32})->Args({32, 8, 32});
BENCHMARK(BM_Forward<true>)->Args({3, 8, 64})->Args({16, 16, 32})->Args({32, 8, 32});
BENCHMARK(BM_BackwardInput<false>)->Args({8, 16, 32})->Args({32, 8, 32});
BENCHMARK(BM_BackwardInput<true>)->Args({8, 16, 32})->Args({32, 8, 32});
BENCHMARK(BM_BackwardParams<false>)->Args({3, 8, 64})->Args({32, 8, 32});
BENCHMARK(BM_BackwardParams<true>)->Args({3, 8, 64})->Args({32, 8, 32});
BENCHMARK(BM_ModelForward)->Arg(0)->Arg(1);

BENCHMARK_MAIN();
