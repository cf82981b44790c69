// Serial reference kernels vs their OpenMP counterparts.
//
//   OMP_NUM_THREADS=4 ./bench_kernels

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "varlab/numerics/kernels.hpp"

namespace {

std::vector<float> noise(std::size_t n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> d;
  std::vector<float> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

// Shapes of a d=4 transformer MLP projection on a batch of 16 VAR sequences.
constexpr std::size_t kM = 16 * 85, kK = 256, kN = 1024;

void BM_MatmulSerial(benchmark::State& state) {
  auto a = noise(kM * kK, 1), b = noise(kK * kN, 2);
  std::vector<float> c(kM * kN);
  for (auto _ : state) {
    varlab::kernels::matmul_serial(a.data(), b.data(), c.data(), kM, kK, kN);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(kM * kK * kN));
}

void BM_MatmulParallel(benchmark::State& state) {
  auto a = noise(kM * kK, 1), b = noise(kK * kN, 2);
  std::vector<float> c(kM * kN);
  for (auto _ : state) {
    varlab::kernels::matmul(a.data(), b.data(), c.data(), kM, kK, kN);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(kM * kK * kN));
}

template <bool Parallel>
void BM_Attention(benchmark::State& state) {
  varlab::kernels::AttentionShape s{85, 85, 4, 64};
  auto q = noise(s.tq * s.width(), 3), k = noise(s.tk * s.width(), 4), v = noise(s.tk * s.width(), 5);
  std::vector<float> out(q.size()), probs(s.heads * s.tq * s.tk);
  std::vector<int> blocks(85);
  for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i] = i < 1 ? 0 : i < 5 ? 1 : i < 21 ? 2 : 3;
  varlab::kernels::AttentionMaskView mask{blocks.data(), blocks.data()};
  for (auto _ : state) {
    if constexpr (Parallel) {
      varlab::kernels::attention_forward(q.data(), k.data(), v.data(), out.data(), probs.data(), s, mask, true, 8.0);
    } else {
      varlab::kernels::attention_forward_serial(q.data(), k.data(), v.data(), out.data(), probs.data(), s, mask, true,
                                                8.0);
    }
    benchmark::DoNotOptimize(out.data());
  }
}

}  // namespace

BENCHMARK(BM_MatmulSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MatmulParallel)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Attention<false>)->Name("BM_AttentionSerial")->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_Attention<true>)->Name("BM_AttentionParallel")->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
