// Parallel kernels against the serial reference, on the shapes the models use.
//   bench_kernels --benchmark_filter=conv

#include <benchmark/benchmark.h>

#include <vector>

#include "bb/kernels.hpp"
#include "bb/rng.hpp"

using namespace bb;
using namespace bb::kernels;

namespace {

std::vector<float> random_values(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(uniform(rng, -1, 1));
  return v;
}

// Args: channels in, channels out, frame side, kernel side.
ConvShape shape_of(const benchmark::State& state) {
  ConvShape s;
  s.c_in = static_cast<int>(state.range(0));
  s.c_out = static_cast<int>(state.range(1));
  s.height = s.width = static_cast<int>(state.range(2));
  s.kh = s.kw = static_cast<int>(state.range(3));
  return s;
}

template <bool Parallel>
void BM_ConvForward(benchmark::State& state) {
  const auto s = shape_of(state);
  const auto in = random_values(s.input_size(), 1), k = random_values(s.kernel_size(), 2);
  std::vector<float> out(s.output_size());
  for (auto _ : state) {
    if constexpr (Parallel) {
      conv2d_forward<float>(s, in, k, out);
    } else {
      reference::conv2d_forward<float>(s, in, k, out);
    }
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(s.output_size() * s.c_in * s.kh * s.kw));
}

template <bool Parallel>
void BM_ConvBackwardInput(benchmark::State& state) {
  const auto s = shape_of(state);
  const auto g = random_values(s.output_size(), 3), k = random_values(s.kernel_size(), 4);
  std::vector<float> gin(s.input_size());
  for (auto _ : state) {
    if constexpr (Parallel) {
      conv2d_backward_input<float>(s, g, k, gin);
    } else {
      reference::conv2d_backward_input<float>(s, g, k, gin);
    }
    benchmark::DoNotOptimize(gin.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(s.output_size() * s.c_in * s.kh * s.kw));
}

template <bool Parallel>
void BM_ConvBackwardKernel(benchmark::State& state) {
  const auto s = shape_of(state);
  const auto g = random_values(s.output_size(), 5), in = random_values(s.input_size(), 6);
  std::vector<float> gk(s.kernel_size());
  for (auto _ : state) {
    if constexpr (Parallel) {
      conv2d_backward_kernel<float>(s, g, in, gk);
    } else {
      reference::conv2d_backward_kernel<float>(s, g, in, gk);
    }
    benchmark::DoNotOptimize(gk.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(s.output_size() * s.c_in * s.kh * s.kw));
}

template <bool Parallel>
void BM_Matvec(benchmark::State& state) {
  const int rows = static_cast<int>(state.range(0)), cols = static_cast<int>(state.range(1));
  const auto w = random_values(static_cast<std::size_t>(rows) * cols, 7), x = random_values(cols, 8);
  std::vector<float> y(rows);
  for (auto _ : state) {
    if constexpr (Parallel) {
      matvec<float>(rows, cols, w, x, y);
    } else {
      reference::matvec<float>(rows, cols, w, x, y);
    }
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(rows) * cols);
}

void conv_shapes(benchmark::internal::Benchmark* b) {
  b->Args({1, 10, 30, 5})    // smoke first layer, 5x5 variant
      ->Args({10, 10, 30, 3})  // smoke recurrent conv
      ->Args({10, 1, 30, 3})   // smoke output layer input conv
      ->Args({1, 40, 60, 5})   // full-size first layer
      ->Args({40, 40, 60, 5});
}

}  // namespace

BENCHMARK_TEMPLATE(BM_ConvForward, true)->Apply(conv_shapes)->Name("conv_forward/parallel");
BENCHMARK_TEMPLATE(BM_ConvForward, false)->Apply(conv_shapes)->Name("conv_forward/reference");
BENCHMARK_TEMPLATE(BM_ConvBackwardInput, true)->Apply(conv_shapes)->Name("conv_backward_input/parallel");
BENCHMARK_TEMPLATE(BM_ConvBackwardInput, false)->Apply(conv_shapes)->Name("conv_backward_input/reference");
BENCHMARK_TEMPLATE(BM_ConvBackwardKernel, true)->Apply(conv_shapes)->Name("conv_backward_kernel/parallel");
BENCHMARK_TEMPLATE(BM_ConvBackwardKernel, false)->Apply(conv_shapes)->Name("conv_backward_kernel/reference");
BENCHMARK_TEMPLATE(BM_Matvec, true)->Args({1024, 3600})->Args({3600, 1024})->Name("matvec/parallel");
BENCHMARK_TEMPLATE(BM_Matvec, false)->Args({1024, 3600})->Args({3600, 1024})->Name("matvec/reference");

BENCHMARK_MAIN();
