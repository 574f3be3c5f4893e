#include <benchmark/benchmark.h>

#include <vector>

#include "idfm/ops.hpp"

namespace {

void BM_GemmProjection(benchmark::State& state) {
  const int s = static_cast<int>(state.range(0)), d = 64;
  std::vector<double> a(static_cast<std::size_t>(s) * d, 0.25);
  std::vector<double> b(static_cast<std::size_t>(d) * d, 0.125);
  std::vector<double> c(static_cast<std::size_t>(s) * d, 0.0);
  for (auto _ : state) {
    idfm::kernels::gemm_nn_acc(a.data(), b.data(), c.data(), s, d, d);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * 2ll * s * d * d);
}
BENCHMARK(BM_GemmProjection)->Arg(64)->Arg(160)->Arg(328);

void BM_GemmAttentionScores(benchmark::State& state) {
  const int s = static_cast<int>(state.range(0)), hd = 16;
  std::vector<double> q(static_cast<std::size_t>(s) * hd, 0.25);
  std::vector<double> kt(static_cast<std::size_t>(hd) * s, 0.125);
  std::vector<double> c(static_cast<std::size_t>(s) * s, 0.0);
  for (auto _ : state) {
    idfm::kernels::gemm_nn_acc(q.data(), kt.data(), c.data(), s, hd, s);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * 2ll * s * hd * s);
}
BENCHMARK(BM_GemmAttentionScores)->Arg(64)->Arg(160)->Arg(328);

}  // namespace
