#pragma once

#include <optional>
#include <vector>

#include "idfm/attn_mask.hpp"
#include "idfm/image.hpp"
#include "idfm/partition.hpp"

namespace idfm {

enum class Regime { dis, har };

// Which regime each transformer layer runs under. Early and late layers
// default to harmonization, the middle layers to disentanglement; an
// explicit per-layer override covers every configuration of the ablation
// harness.
struct LayerSchedule {
  int num_layers = 0;
  int early_count = 0;
  int late_count = 0;
  std::vector<Regime> regimes;  // one per layer

  Regime at(int layer) const { return regimes[static_cast<std::size_t>(layer)]; }
  bool uses(Regime r) const;
};

// Disentanglement mask: background tokens (global prompt, unassigned latent
// and context) attend everything except instance prompts; tokens of
// instance n attend only the n-th closed group of prompt+latent+context.
// A token in several instances attends every group it belongs to.
AttnMask build_dis(const PartitionLayout& layout);

// Harmonization mask: all non-prompt tokens attend each other freely, while
// an instance prompt attends only its own group.
AttnMask build_har(const PartitionLayout& layout);

LayerSchedule schedule(int num_layers, int early_count, int late_count,
                       const std::optional<std::vector<Regime>>& override_regimes = std::nullopt);

// Per-band regime assignment (the ablation harness enumerates all eight).
LayerSchedule schedule_bands(int num_layers, int early_count, int late_count, Regime early, Regime mid,
                             Regime late);

// One pixel per (query, key): allowed = 128, blocked = 0.
Image mask_to_image(const AttnMask& mask);

}  // namespace idfm
