// Serial reference convolution against the OpenMP kernels.
//   ./build/bench_kernels --benchmark_filter=Conv

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "mgnet/kernels.hpp"
#include "mgnet/types.hpp"

using namespace mgnet;

namespace {

struct Problem {
  kernels::ConvGeometry g;
  std::vector<Real> in;
  std::vector<Real> weights;
  std::vector<Real> bias;
  std::vector<Real> out;
};

Problem make_problem(int channels, int size) {
  Problem p{{channels, channels, size, size, 1, 1, PaddingMode::Zero}, {}, {}, {}, {}};
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<Real> dist(-1, 1);
  p.in.resize(std::size_t(channels) * size * size);
  p.weights.resize(std::size_t(channels) * channels * 9);
  p.bias.resize(channels);
  p.out.resize(p.in.size());
  for (Real& v : p.in) v = dist(rng);
  for (Real& v : p.weights) v = dist(rng);
  for (Real& v : p.bias) v = dist(rng);
  return p;
}

void set_counters(benchmark::State& state, const kernels::ConvGeometry& g) {
  const double flops = 2.0 * g.out_channels * g.in_channels * 9 * g.out_height() * g.out_width();
  state.counters["GFLOPS"] = benchmark::Counter(flops, benchmark::Counter::kIsIterationInvariantRate,
                                                benchmark::Counter::kIs1000);
}

void BM_ConvReference(benchmark::State& state) {
  Problem p = make_problem(int(state.range(0)), int(state.range(1)));
  for (auto _ : state) {
    kernels::conv2d_reference(p.g, p.in, p.weights, p.bias, p.out);
    benchmark::DoNotOptimize(p.out.data());
  }
  set_counters(state, p.g);
}

// range(2) is the thread limit; 0 means every available thread.
void BM_ConvParallel(benchmark::State& state) {
  Problem p = make_problem(int(state.range(0)), int(state.range(1)));
  set_thread_limit(int(state.range(2)));
  for (auto _ : state) {
    kernels::conv2d_forward(p.g, p.in, p.weights, p.bias, p.out);
    benchmark::DoNotOptimize(p.out.data());
  }
  set_thread_limit(0);
  set_counters(state, p.g);
}

void BM_ConvBackwardInput(benchmark::State& state) {
  Problem p = make_problem(int(state.range(0)), int(state.range(1)));
  set_thread_limit(int(state.range(2)));
  for (auto _ : state) {
    kernels::conv2d_backward_input(p.g, p.in, p.weights, p.out);
    benchmark::DoNotOptimize(p.out.data());
  }
  set_thread_limit(0);
  set_counters(state, p.g);
}

void BM_ConvBackwardParams(benchmark::State& state) {
  Problem p = make_problem(int(state.range(0)), int(state.range(1)));
  std::vector<Real> grad_weights(p.weights.size());
  std::vector<Real> grad_bias(p.bias.size());
  set_thread_limit(int(state.range(2)));
  for (auto _ : state) {
    kernels::conv2d_backward_params(p.g, p.in, p.out, grad_weights, grad_bias);
    benchmark::DoNotOptimize(grad_weights.data());
  }
  set_thread_limit(0);
  set_counters(state, p.g);
}

}  // namespace

BENCHMARK(BM_ConvReference)->Args({16, 32})->Args({64, 32})->Args({64, 16})->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_ConvParallel)
    ->ArgsProduct({{16, 64}, {32}, {1, 2, 4, 0}})
    ->Args({64, 16, 1})
    ->Args({64, 16, 0})
    ->Unit(benchmark::kMicrosecond)
    ->UseRealTime();
BENCHMARK(BM_ConvBackwardInput)->ArgsProduct({{64}, {32}, {1, 0}})->Unit(benchmark::kMicrosecond)->UseRealTime();
BENCHMARK(BM_ConvBackwardParams)->ArgsProduct({{64}, {32}, {1, 0}})->Unit(benchmark::kMicrosecond)->UseRealTime();

BENCHMARK_MAIN();
