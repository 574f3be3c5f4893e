#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "idfm/attn_mask.hpp"
#include "idfm/encoder.hpp"
#include "idfm/masks.hpp"
#include "idfm/partition.hpp"
#include "idfm/tensor.hpp"

namespace idfm {

struct ModelConfig {
  int image_h = 48;
  int image_w = 48;
  int channels = 3;
  int patch = 4;
  int d_model = 64;
  int heads = 4;
  int num_layers = 8;
  int early_count = 2;
  int late_count = 2;
  int embed_dim = 64;   // prompt embedding width; equals d_model here
  int ff_hidden = 128;
  int time_dim = 32;
  int utility_len = 8;
  int vocab_size = 19;
  int max_str_len = 6;

  int grid_h() const { return image_h / patch; }
  int grid_w() const { return image_w / patch; }
  int grid_count() const { return grid_h() * grid_w(); }
  int patch_dim() const { return patch * patch * channels; }
  int head_dim() const { return d_model / heads; }

  void validate() const;  // throws on inconsistent fields
  bool operator==(const ModelConfig&) const = default;
};

// Low-rank additive adaptation of one weight matrix: W + (alpha/r) * a.b
// with a [d_in x r] and b [r x d_out]; b starts at zero so attaching is a
// forward no-op until trained.
struct LoraAdapter {
  Tensor a;
  Tensor b;
  int rank = 0;
  double alpha = 0.0;

  double scaling() const { return alpha / rank; }
};

// Reference-scale adapter rank; the desk-scale default is kLoraRankToy.
inline constexpr int kLoraRankPaper = 32;
inline constexpr int kLoraRankToy = 4;

struct BlockWeights {
  // Per-modality projections, indexed text / latent / context.
  Tensor wq[3], bq[3], wk[3], bk[3], wv[3], bv[3];
  Tensor wo, bo;
  Tensor w1, b1, w2, b2;
  // Time-conditioned modulation: maps time features to per-sublayer
  // shift/scale/gate vectors, zero-initialized so blocks start as identity.
  Tensor mod_w, mod_b;
};

enum class Modality { text = 0, latent = 1, context = 2 };

struct ModelState {
  ModelConfig config;

  Tensor token_emb;     // [vocab x d]
  Tensor modality_emb;  // [3 x d]
  Tensor patch_w;       // [patch_dim x d], shared by latent and context
  Tensor patch_b;
  Tensor time_w1, time_b1, time_w2, time_b2;
  Tensor head_w;  // [d x patch_dim]
  Tensor head_b;
  std::vector<BlockWeights> blocks;

  Tensor pos_enc;  // [grid x d] 2-D sinusoidal constant, not a parameter

  // Attached adapters keyed by target weight name.
  std::map<std::string, LoraAdapter> adapters;

  static ModelState init(const ModelConfig& config, std::uint64_t seed);

  // Fixed-order walk over every parameter (adapters included, last).
  void visit_params(const std::function<void(const std::string&, Tensor&)>& fn);
  std::vector<Tensor> all_params();
  std::vector<Tensor> adapter_params();
  // Parameters the optimizer should update: adapters when any are attached,
  // otherwise everything.
  std::vector<Tensor> trainable_params();

  std::size_t param_count();

  // Same shared weight data, fresh gradient accumulators. Each training
  // worker forwards through its own shadow so accumulation never races.
  ModelState training_shadow() const;

  // Effective weight for `name`: the base matrix, or base + (alpha/r).a.b
  // when an adapter is attached (differentiable through a and b).
  Tensor effective_weight(const std::string& name, const Tensor& base) const;
};

// Masks prebuilt for one layout; dis/har selected per layer by the
// schedule. A null set selects the plain unmasked joint-attention path.
struct MaskSet {
  std::shared_ptr<const AttnMask> dis;
  std::shared_ptr<const AttnMask> har;

  static MaskSet build(const PartitionLayout& layout);
  std::shared_ptr<const AttnMask> pick(Regime r) const { return r == Regime::dis ? dis : har; }
};

// Image <-> patch-token conversion. `image` is normalized HWC data of size
// H*W*C; patches come out [grid x patch_dim] in raster order. The two are
// exact inverses.
Tensor patchify_image(const std::vector<double>& image, const ModelConfig& config);
std::vector<double> unpatchify_image(const Tensor& patches, const ModelConfig& config);

// Sinusoidal featurization of t followed by the time MLP; feeds every
// block's modulation.
Tensor time_features(const ModelState& m, double t);

// Token embedding of the full joint sequence: prompt lookup, patch
// embedding of noisy latents and reference context with shared spatial
// positions, plus modality embeddings. Output [seq_len x d_model].
Tensor embed(const ModelState& m, const Tensor& xt_patches, const Tensor& ref_patches,
             const PromptBundle& bundle, const PartitionLayout& layout);

// One pre-norm residual block with per-modality projections and masked
// multi-head joint attention (mask == nullptr runs unmasked).
Tensor block_forward(const ModelState& m, int layer, const Tensor& h, const PartitionLayout& layout,
                     std::shared_ptr<const AttnMask> mask, const Tensor& t_feat);

// Full velocity network in patch space: embed, num_layers blocks with the
// schedule-selected mask each, final norm, and the linear head over the
// latent tokens only. masks == nullptr runs every block unmasked.
Tensor forward_velocity_patches(const ModelState& m, const Tensor& xt_patches, const Tensor& ref_patches,
                                const PromptBundle& bundle, double t, const PartitionLayout& layout,
                                const LayerSchedule& sched, const MaskSet* masks);

// Image-shaped convenience wrapper around forward_velocity_patches.
std::vector<double> forward_velocity(const ModelState& m, const std::vector<double>& x_t,
                                     const std::vector<double>& ref, const PromptBundle& bundle, double t,
                                     const PartitionLayout& layout, const LayerSchedule& sched,
                                     const MaskSet* masks);

// Attach zero-impact adapters to the named weights (every block linear by
// default); duplicate attachment is an error. Merge folds each adapter into
// its base weight and removes it.
void lora_attach(ModelState& m, const std::vector<std::string>& targets, int rank, double alpha,
                 std::uint64_t seed);
void lora_merge(ModelState& m);
std::vector<std::string> lora_default_targets(const ModelConfig& config);

}  // namespace idfm
