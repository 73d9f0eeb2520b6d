#include <benchmark/benchmark.h>

#include "vrg/kernels.hpp"
#include "vrg/rng.hpp"

using vrg::RngStream;
using vrg::Tensor;

namespace {

struct ConvSetup {
  Tensor x, w, gy;
  int stride, pad;
  ConvSetup(int64_t n, int64_t ci, int64_t hw, int64_t co, int64_t k, int s, int p)
      : stride(s), pad(p) {
    RngStream r(7);
    x = r.normal_tensor({n, ci, hw, hw});
    w = r.normal_tensor({co, ci, k, k});
    gy = r.normal_tensor(vrg::kern::conv2d(x, w, s, p).shape());
  }
};

void BM_conv2d_bnet_shape(benchmark::State& state) {
  // 3x3 stride-1 layer at derain-stage width, the hot op of BNet training.
  ConvSetup c(8, 16, 64, 16, 3, 1, 1);
  for (auto _ : state) benchmark::DoNotOptimize(vrg::kern::conv2d(c.x, c.w, c.stride, c.pad));
}

void BM_conv2d_critic_shape(benchmark::State& state) {
  // 4x4 stride-2 downsampling layer as found in the critic.
  ConvSetup c(8, 16, 32, 32, 4, 2, 1);
  for (auto _ : state) benchmark::DoNotOptimize(vrg::kern::conv2d(c.x, c.w, c.stride, c.pad));
}

void BM_conv2d_input_grad(benchmark::State& state) {
  ConvSetup c(8, 16, 64, 16, 3, 1, 1);
  for (auto _ : state)
    benchmark::DoNotOptimize(vrg::kern::conv2d_input_grad(c.gy, c.w, c.stride, c.pad, 64, 64));
}

void BM_conv2d_weight_grad(benchmark::State& state) {
  ConvSetup c(8, 16, 64, 16, 3, 1, 1);
  for (auto _ : state)
    benchmark::DoNotOptimize(vrg::kern::conv2d_weight_grad(c.gy, c.x, c.stride, c.pad, 3));
}

}  // namespace

BENCHMARK(BM_conv2d_bnet_shape)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_conv2d_critic_shape)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_conv2d_input_grad)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_conv2d_weight_grad)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
