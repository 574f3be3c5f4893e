#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "idfm/adam.hpp"
#include "idfm/image.hpp"
#include "idfm/model.hpp"

namespace idfm {

// One paired supervision example: the reference image, the edited target,
// and the boxes with their source/target strings.
struct PairedExample {
  Image ref;
  Image target;
  std::vector<BoxSpec> boxes;
};

// One sampled batch item: normalized images, uniform t, standard-normal
// noise, all drawn statelessly from (seed, step, item).
struct BatchItem {
  const PairedExample* example = nullptr;
  double t = 0.0;
  std::vector<double> x0;
};

struct TrainBatch {
  std::vector<BatchItem> items;
};

struct SamplerConfig {
  int steps = 16;
  LayerSchedule schedule;
  bool use_masks = true;
};

// x_t = (1 - t) x0 + t x1; endpoints are returned exactly.
std::vector<double> interpolate(const std::vector<double>& x0, const std::vector<double>& x1, double t);

// Conditioning inputs derived from one example's boxes.
struct TaskContext {
  PromptBundle bundle;
  PartitionLayout layout;
  MaskSet masks;
};
TaskContext make_task_context(const ModelConfig& config, const std::vector<BoxSpec>& boxes);

// Squared flow-matching error of one item (mean over velocity entries),
// differentiable when a tape is active.
Tensor fm_loss_item(const ModelState& m, const BatchItem& item, const LayerSchedule& sched, bool use_masks);

// Mean item loss, forward only.
double fm_loss(const ModelState& m, const TrainBatch& batch, const LayerSchedule& sched, bool use_masks);

struct TrainConfig {
  AdamConfig adam;
  int batch_size = 16;
  int steps = 5000;
  std::uint64_t seed = 0;
  bool use_masks = true;
  int workers = 0;  // 0 = default_worker_count()
};

// Deterministic trainer: batch sampling is stateless per (seed, step), so a
// run resumed from a checkpoint continues the exact same trajectory.
// Batch items run on per-item tapes (parallel across workers); their
// gradients reduce in item order, so results do not depend on thread count.
class Trainer {
 public:
  Trainer(ModelState& model, const std::vector<PairedExample>& dataset, const LayerSchedule& sched,
          TrainConfig config);

  // Runs one optimization step (0-based global step index); returns the
  // batch loss. A non-finite loss aborts with diagnostics.
  double step(int global_step);

  TrainBatch sample_batch(int global_step) const;

  AdamState& adam() { return adam_; }
  const TrainConfig& config() const { return config_; }

 private:
  ModelState& model_;
  const std::vector<PairedExample>& dataset_;
  LayerSchedule sched_;
  TrainConfig config_;
  AdamState adam_;
};

// Generic Euler integration of dx/dt = field(x, t) from t=0 to 1 in
// `steps` equal increments.
std::vector<double> euler_integrate(const std::function<std::vector<double>(const std::vector<double>&, double)>& field,
                                    std::vector<double> x0, int steps);

// Full editing pass: seeded Gaussian start, Euler loop over the learned
// velocity field, clamp and denormalize.
Image sample_edit(const ModelState& m, const Image& ref, const std::vector<BoxSpec>& boxes,
                  const SamplerConfig& sampler, std::uint64_t seed);

}  // namespace idfm
