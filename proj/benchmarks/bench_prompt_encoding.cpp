#include <benchmark/benchmark.h>

#include "idfm/flow.hpp"
#include "idfm/model.hpp"
#include "idfm/rng.hpp"

namespace {

// Cost of one velocity forward when every instance prompt is encoded at its
// own length versus padded to the fixed maximum. The variable-length
// encoding keeps the joint sequence proportional to actual content, which
// is where the multi-prompt strategy saves its attention cost.
void run_encoding(benchmark::State& state, bool pad_to_max) {
  idfm::ModelConfig config;
  const int n = static_cast<int>(state.range(0));
  std::vector<idfm::BoxSpec> boxes;
  std::vector<std::string> strings;
  for (int b = 0; b < n; ++b) {
    idfm::BoxSpec box;
    box.x = (b % 2) * 24;
    box.y = (b / 2) * 12;
    box.w = 4;
    box.h = 6;
    box.tgt = "A";  // one glyph; padding would stretch it to max length
    boxes.push_back(box);
    strings.push_back(box.tgt);
  }

  idfm::GlyphVocab vocab;
  vocab.max_str_len = config.max_str_len;
  const idfm::PromptBundle bundle = idfm::assemble(config.utility_len, strings, vocab, pad_to_max);
  const idfm::PartitionLayout layout = idfm::build_layout(config.utility_len, bundle.inst_lens, boxes,
                                                          config.patch, config.grid_h(), config.grid_w());
  const idfm::MaskSet masks = idfm::MaskSet::build(layout);
  const idfm::LayerSchedule sched = idfm::schedule(config.num_layers, config.early_count, config.late_count);
  idfm::ModelState model = idfm::ModelState::init(config, 7);

  idfm::Rng rng(11);
  std::vector<double> x(static_cast<std::size_t>(config.image_h) * config.image_w * config.channels);
  std::vector<double> ref(x.size());
  for (double& v : x) v = rng.normal();
  for (double& v : ref) v = rng.uniform(-1.0, 1.0);
  const idfm::Tensor xt = idfm::patchify_image(x, config);
  const idfm::Tensor rp = idfm::patchify_image(ref, config);

  for (auto _ : state) {
    benchmark::DoNotOptimize(
        idfm::forward_velocity_patches(model, xt, rp, bundle, 0.5, layout, sched, &masks));
  }
  state.counters["seq_len"] = layout.seq_len;
}

void BM_VariableLengthPrompts(benchmark::State& state) { run_encoding(state, false); }
void BM_PaddedPrompts(benchmark::State& state) { run_encoding(state, true); }

BENCHMARK(BM_VariableLengthPrompts)->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_PaddedPrompts)->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond);

}  // namespace
