#include <benchmark/benchmark.h>

#include "idfm/masks.hpp"
#include "idfm/partition.hpp"

namespace {

idfm::PartitionLayout bench_layout(int n_boxes) {
  std::vector<idfm::BoxSpec> boxes;
  std::vector<int> lens;
  for (int b = 0; b < n_boxes; ++b) {
    idfm::BoxSpec box;
    box.x = (b % 2) * 24;
    box.y = (b / 2) * 12;
    box.w = 20;
    box.h = 6;
    boxes.push_back(box);
    lens.push_back(6);
  }
  return idfm::build_layout(8, lens, boxes, 4, 12, 12);
}

void BM_BuildDisMask(benchmark::State& state) {
  const idfm::PartitionLayout layout = bench_layout(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(idfm::build_dis(layout));
  }
}
BENCHMARK(BM_BuildDisMask)->Arg(1)->Arg(4);

void BM_BuildHarMask(benchmark::State& state) {
  const idfm::PartitionLayout layout = bench_layout(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(idfm::build_har(layout));
  }
}
BENCHMARK(BM_BuildHarMask)->Arg(1)->Arg(4);

}  // namespace
