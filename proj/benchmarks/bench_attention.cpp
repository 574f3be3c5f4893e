#include <benchmark/benchmark.h>

#include "idfm/flow.hpp"
#include "idfm/model.hpp"
#include "idfm/rng.hpp"

namespace {

// Full velocity forward at the default model size, masked vs unmasked.
void run_forward(benchmark::State& state, bool use_masks) {
  idfm::ModelConfig config;
  idfm::ModelState model = idfm::ModelState::init(config, 7);
  std::vector<idfm::BoxSpec> boxes;
  for (int b = 0; b < static_cast<int>(state.range(0)); ++b) {
    idfm::BoxSpec box;
    box.x = (b % 2) * 24;
    box.y = (b / 2) * 12;
    box.w = 16;
    box.h = 6;
    box.tgt = "ABCD";
    boxes.push_back(box);
  }
  const idfm::TaskContext ctx = idfm::make_task_context(config, boxes);
  const idfm::LayerSchedule sched = idfm::schedule(config.num_layers, config.early_count, config.late_count);

  idfm::Rng rng(11);
  std::vector<double> x(static_cast<std::size_t>(config.image_h) * config.image_w * config.channels);
  std::vector<double> ref(x.size());
  for (double& v : x) v = rng.normal();
  for (double& v : ref) v = rng.uniform(-1.0, 1.0);
  const idfm::Tensor xt = idfm::patchify_image(x, config);
  const idfm::Tensor rp = idfm::patchify_image(ref, config);

  for (auto _ : state) {
    benchmark::DoNotOptimize(idfm::forward_velocity_patches(model, xt, rp, ctx.bundle, 0.5, ctx.layout, sched,
                                                            use_masks ? &ctx.masks : nullptr));
  }
}

void BM_ForwardMasked(benchmark::State& state) { run_forward(state, true); }
void BM_ForwardUnmasked(benchmark::State& state) { run_forward(state, false); }

BENCHMARK(BM_ForwardMasked)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ForwardUnmasked)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

}  // namespace
