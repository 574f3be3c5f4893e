#include "idfm/flow.hpp"

#include <cmath>
#include <stdexcept>

#include "idfm/ops.hpp"
#include "idfm/rng.hpp"
#include "idfm/threadpool.hpp"

namespace idfm {

namespace {

constexpr std::uint64_t kBatchStream = 0x62617463ull;
constexpr std::uint64_t kSampleStream = 0x73616d70ull;

std::vector<std::string> target_strings(const std::vector<BoxSpec>& boxes) {
  std::vector<std::string> out;
  out.reserve(boxes.size());
  for (const BoxSpec& b : boxes) out.push_back(b.tgt);
  return out;
}

}  // namespace

std::vector<double> interpolate(const std::vector<double>& x0, const std::vector<double>& x1, double t) {
  if (x0.size() != x1.size()) throw std::invalid_argument("interpolate: size mismatch");
  if (t == 0.0) return x0;
  if (t == 1.0) return x1;
  std::vector<double> xt(x0.size());
  for (std::size_t i = 0; i < xt.size(); ++i) xt[i] = (1.0 - t) * x0[i] + t * x1[i];
  return xt;
}

TaskContext make_task_context(const ModelConfig& config, const std::vector<BoxSpec>& boxes) {
  GlyphVocab vocab;
  vocab.max_str_len = config.max_str_len;
  TaskContext ctx;
  ctx.bundle = assemble(config.utility_len, target_strings(boxes), vocab);
  ctx.layout =
      build_layout(config.utility_len, ctx.bundle.inst_lens, boxes, config.patch, config.grid_h(), config.grid_w());
  ctx.masks = MaskSet::build(ctx.layout);
  return ctx;
}

Tensor fm_loss_item(const ModelState& m, const BatchItem& item, const LayerSchedule& sched, bool use_masks) {
  const PairedExample& ex = *item.example;
  const std::vector<double> x1 = to_unit_range(ex.target);
  const std::vector<double> ref = to_unit_range(ex.ref);
  const std::vector<double> xt = interpolate(item.x0, x1, item.t);

  const TaskContext ctx = make_task_context(m.config, ex.boxes);
  const Tensor xt_patches = patchify_image(xt, m.config);
  const Tensor ref_patches = patchify_image(ref, m.config);
  const Tensor v = forward_velocity_patches(m, xt_patches, ref_patches, ctx.bundle, item.t, ctx.layout, sched,
                                            use_masks ? &ctx.masks : nullptr);

  std::vector<double> target(x1.size());
  for (std::size_t i = 0; i < target.size(); ++i) target[i] = x1[i] - item.x0[i];
  const Tensor target_patches = patchify_image(target, m.config);

  const Tensor diff = sub(v, target_patches);
  return scale(sum_sq(diff), 1.0 / static_cast<double>(diff.size()));
}

double fm_loss(const ModelState& m, const TrainBatch& batch, const LayerSchedule& sched, bool use_masks) {
  if (batch.items.empty()) throw std::invalid_argument("fm_loss: empty batch");
  double total = 0.0;
  for (const BatchItem& item : batch.items) total += fm_loss_item(m, item, sched, use_masks).value();
  return total / static_cast<double>(batch.items.size());
}

Trainer::Trainer(ModelState& model, const std::vector<PairedExample>& dataset, const LayerSchedule& sched,
                 TrainConfig config)
    : model_(model), dataset_(dataset), sched_(sched), config_(config) {
  if (dataset_.empty()) throw std::invalid_argument("trainer: empty dataset");
  if (config_.batch_size < 1) throw std::invalid_argument("trainer: batch size must be >= 1");
  if (config_.workers <= 0) config_.workers = default_worker_count();
  std::vector<Tensor> params = model_.trainable_params();
  adam_ = AdamState(config_.adam, params);
}

TrainBatch Trainer::sample_batch(int global_step) const {
  TrainBatch batch;
  batch.items.resize(static_cast<std::size_t>(config_.batch_size));
  const std::size_t image_size =
      static_cast<std::size_t>(model_.config.image_h) * model_.config.image_w * model_.config.channels;
  for (int i = 0; i < config_.batch_size; ++i) {
    Rng rng(derive_seed(config_.seed, kBatchStream,
                        static_cast<std::uint64_t>(global_step) * config_.batch_size + i));
    BatchItem& item = batch.items[static_cast<std::size_t>(i)];
    item.example = &dataset_[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(dataset_.size()) - 1))];
    item.t = rng.uniform();
    item.x0.resize(image_size);
    for (double& v : item.x0) v = rng.normal();
  }
  return batch;
}

double Trainer::step(int global_step) {
  const TrainBatch batch = sample_batch(global_step);
  const int b = config_.batch_size;

  // Each item forwards through its own shadow of the weights on its own
  // tape; gradients then reduce in item order, so the result is the same
  // for any worker count.
  std::vector<ModelState> shadows;
  shadows.reserve(static_cast<std::size_t>(b));
  for (int i = 0; i < b; ++i) shadows.push_back(model_.training_shadow());
  std::vector<double> losses(static_cast<std::size_t>(b), 0.0);

  parallel_for_items(b, config_.workers, [&](int i) {
    Tape tape;
    const Tensor loss = fm_loss_item(shadows[static_cast<std::size_t>(i)], batch.items[static_cast<std::size_t>(i)],
                                     sched_, config_.use_masks);
    tape.backward(loss);
    losses[static_cast<std::size_t>(i)] = loss.value();
  });

  double mean_loss = 0.0;
  for (double l : losses) mean_loss += l;
  mean_loss /= b;
  if (!std::isfinite(mean_loss)) {
    std::string detail = "non-finite loss at step " + std::to_string(global_step) + " (items:";
    for (double l : losses) detail += " " + std::to_string(l);
    throw std::runtime_error(detail + ")");
  }

  std::vector<Tensor> master = model_.trainable_params();
  const double inv_b = 1.0 / static_cast<double>(b);
  for (Tensor& p : master) p.zero_grad();
  for (int i = 0; i < b; ++i) {
    std::vector<Tensor> shadow_params = shadows[static_cast<std::size_t>(i)].trainable_params();
    for (std::size_t pi = 0; pi < master.size(); ++pi) {
      double* dst = master[pi].grad();
      const double* src = shadow_params[pi].grad();
      for (std::size_t k = 0; k < master[pi].size(); ++k) dst[k] += src[k];
    }
  }
  for (Tensor& p : master)
    for (std::size_t k = 0; k < p.size(); ++k) p.grad()[k] *= inv_b;

  adam_.step(master);
  return mean_loss;
}

std::vector<double> euler_integrate(
    const std::function<std::vector<double>(const std::vector<double>&, double)>& field, std::vector<double> x,
    int steps) {
  if (steps < 1) throw std::invalid_argument("euler_integrate: need at least one step");
  const double dt = 1.0 / steps;
  for (int k = 0; k < steps; ++k) {
    const double t = static_cast<double>(k) * dt;
    const std::vector<double> v = field(x, t);
    if (v.size() != x.size()) throw std::invalid_argument("euler_integrate: field changed dimension");
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += v[i] * dt;
  }
  return x;
}

Image sample_edit(const ModelState& m, const Image& ref, const std::vector<BoxSpec>& boxes,
                  const SamplerConfig& sampler, std::uint64_t seed) {
  if (ref.width != m.config.image_w || ref.height != m.config.image_h || ref.channels != m.config.channels)
    throw std::invalid_argument("sample_edit: reference image does not match model config");
  const TaskContext ctx = make_task_context(m.config, boxes);
  const std::vector<double> ref_unit = to_unit_range(ref);
  const Tensor ref_patches = patchify_image(ref_unit, m.config);

  std::vector<double> x0(ref_unit.size());
  Rng rng(derive_seed(seed, kSampleStream));
  for (double& v : x0) v = rng.normal();

  const MaskSet* masks = sampler.use_masks ? &ctx.masks : nullptr;
  auto field = [&](const std::vector<double>& x, double t) {
    const Tensor xt_patches = patchify_image(x, m.config);
    const Tensor v =
        forward_velocity_patches(m, xt_patches, ref_patches, ctx.bundle, t, ctx.layout, sampler.schedule, masks);
    return unpatchify_image(v, m.config);
  };
  const std::vector<double> x1 = euler_integrate(field, std::move(x0), sampler.steps);
  return from_unit_range(x1, m.config.image_w, m.config.image_h, m.config.channels);
}

}  // namespace idfm
