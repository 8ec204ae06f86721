#include <benchmark/benchmark.h>

#include "rvsa/attention.hpp"
#include "rvsa/cost.hpp"

namespace {

using namespace rvsa;

void bench_attend(benchmark::State& state, Variant v) {
  const int c = 32, heads = 4, s = 7, grid = 28;
  AttentionConfig cfg{c, heads, s, v};
  Rng rng(1);
  AttentionLayer layer = AttentionLayer::create(cfg, rng);
  Tensor x = rng.normal_tensor({c, grid, grid});
  for (auto _ : state) {
    Var out = attend(Var::constant(x), layer, cfg);
    benchmark::DoNotOptimize(out.value().data());
  }
}

void bench_matmul(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Rng rng(2);
  Tensor a = rng.normal_tensor({n, n}), b = rng.normal_tensor({n, n});
  for (auto _ : state) {
    Var out = matmul(Var::constant(a), Var::constant(b));
    benchmark::DoNotOptimize(out.value().data());
  }
}

void bench_bilinear(benchmark::State& state) {
  const int h = 32, w = 32, c = 32, n = 4096;
  Rng rng(3);
  Tensor tokens = rng.normal_tensor({h * w, c});
  Tensor coords({n, 2});
  for (int i = 0; i < n; ++i) {
    coords.at(i, 0) = rng.uniform(0.0, w - 1.0);
    coords.at(i, 1) = rng.uniform(0.0, h - 1.0);
  }
  for (auto _ : state) {
    Var out = bilinear_sample(Var::constant(tokens), h, w, Var::constant(coords));
    benchmark::DoNotOptimize(out.value().data());
  }
}

}  // namespace

BENCHMARK_CAPTURE(bench_attend, full, Variant::kFull);
BENCHMARK_CAPTURE(bench_attend, window, Variant::kWindow);
BENCHMARK_CAPTURE(bench_attend, vsa, Variant::kVsa);
BENCHMARK_CAPTURE(bench_attend, rvsa, Variant::kRvsa);
BENCHMARK_CAPTURE(bench_attend, rvsa_diamond, Variant::kRvsaDiamond);
BENCHMARK(bench_matmul)->Arg(64)->Arg(128);
BENCHMARK(bench_bilinear);

BENCHMARK_MAIN();
