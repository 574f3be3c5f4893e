#include "idfm/masks.hpp"

#include <cstdint>
#include <stdexcept>

namespace idfm {

namespace {

constexpr int kMaxInstances = 64;  // membership kept in one 64-bit word

struct TokenFlags {
  std::vector<std::uint8_t> background;     // global prompt or unassigned latent/context
  std::vector<std::uint8_t> inst_prompt;    // in some instance-prompt segment
  std::vector<std::uint64_t> group;         // bit n: token in prompt/latent/context of instance n
  std::vector<std::uint64_t> prompt_group;  // bit n: token in instance-prompt segment n
};

TokenFlags classify(const PartitionLayout& lay) {
  const int n = lay.num_instances();
  if (n > kMaxInstances) throw std::invalid_argument("masks: more than 64 instances");
  TokenFlags f;
  const std::size_t s = static_cast<std::size_t>(lay.seq_len);
  f.background.assign(s, 0);
  f.inst_prompt.assign(s, 0);
  f.group.assign(s, 0);
  f.prompt_group.assign(s, 0);

  for (int i = lay.global_begin; i < lay.global_end; ++i) f.background[static_cast<std::size_t>(i)] = 1;
  for (int b = 0; b < n; ++b) {
    const std::uint64_t bit = 1ull << b;
    const auto [p0, p1] = lay.inst_prompt[static_cast<std::size_t>(b)];
    for (int i = p0; i < p1; ++i) {
      f.inst_prompt[static_cast<std::size_t>(i)] = 1;
      f.prompt_group[static_cast<std::size_t>(i)] |= bit;
      f.group[static_cast<std::size_t>(i)] |= bit;
    }
    for (int i : lay.latent_inst[static_cast<std::size_t>(b)]) f.group[static_cast<std::size_t>(i)] |= bit;
    for (int i : lay.context_inst[static_cast<std::size_t>(b)]) f.group[static_cast<std::size_t>(i)] |= bit;
  }
  for (int i : lay.latent_unassigned) f.background[static_cast<std::size_t>(i)] = 1;
  for (int i : lay.context_unassigned) f.background[static_cast<std::size_t>(i)] = 1;
  return f;
}

}  // namespace

AttnMask build_dis(const PartitionLayout& layout) {
  const TokenFlags f = classify(layout);
  AttnMask mask(layout.seq_len);
  for (int i = 0; i < layout.seq_len; ++i) {
    const bool bg = f.background[static_cast<std::size_t>(i)] != 0;
    const std::uint64_t gi = f.group[static_cast<std::size_t>(i)];
    std::uint8_t* row = mask.allowed.data() + static_cast<std::size_t>(i) * layout.seq_len;
    for (int j = 0; j < layout.seq_len; ++j) {
      const bool case_bg = bg && f.inst_prompt[static_cast<std::size_t>(j)] == 0;
      const bool case_group = (gi & f.group[static_cast<std::size_t>(j)]) != 0;
      row[j] = (case_bg || case_group) ? 1 : 0;
    }
  }
  return mask;
}

AttnMask build_har(const PartitionLayout& layout) {
  const TokenFlags f = classify(layout);
  AttnMask mask(layout.seq_len);
  for (int i = 0; i < layout.seq_len; ++i) {
    const bool i_free = f.inst_prompt[static_cast<std::size_t>(i)] == 0;
    const std::uint64_t pi = f.prompt_group[static_cast<std::size_t>(i)];
    std::uint8_t* row = mask.allowed.data() + static_cast<std::size_t>(i) * layout.seq_len;
    for (int j = 0; j < layout.seq_len; ++j) {
      const bool case_free = i_free && f.inst_prompt[static_cast<std::size_t>(j)] == 0;
      const bool case_prompt = (pi & f.group[static_cast<std::size_t>(j)]) != 0;
      row[j] = (case_free || case_prompt) ? 1 : 0;
    }
  }
  return mask;
}

bool LayerSchedule::uses(Regime r) const {
  for (Regime x : regimes)
    if (x == r) return true;
  return false;
}

LayerSchedule schedule(int num_layers, int early_count, int late_count,
                       const std::optional<std::vector<Regime>>& override_regimes) {
  if (num_layers < 1) throw std::invalid_argument("schedule: need at least one layer");
  if (early_count < 0 || late_count < 0 || early_count + late_count > num_layers)
    throw std::invalid_argument("schedule: early/late counts exceed layer count");
  LayerSchedule s;
  s.num_layers = num_layers;
  s.early_count = early_count;
  s.late_count = late_count;
  if (override_regimes) {
    if (static_cast<int>(override_regimes->size()) != num_layers)
      throw std::invalid_argument("schedule: override must list every layer");
    s.regimes = *override_regimes;
    return s;
  }
  return schedule_bands(num_layers, early_count, late_count, Regime::har, Regime::dis, Regime::har);
}

LayerSchedule schedule_bands(int num_layers, int early_count, int late_count, Regime early, Regime mid,
                             Regime late) {
  if (early_count < 0 || late_count < 0 || early_count + late_count > num_layers)
    throw std::invalid_argument("schedule: early/late counts exceed layer count");
  LayerSchedule s;
  s.num_layers = num_layers;
  s.early_count = early_count;
  s.late_count = late_count;
  s.regimes.assign(static_cast<std::size_t>(num_layers), mid);
  for (int l = 0; l < early_count; ++l) s.regimes[static_cast<std::size_t>(l)] = early;
  for (int l = num_layers - late_count; l < num_layers; ++l) s.regimes[static_cast<std::size_t>(l)] = late;
  return s;
}

Image mask_to_image(const AttnMask& mask) {
  Image img(mask.seq_len, mask.seq_len, 1);
  for (std::size_t i = 0; i < mask.allowed.size(); ++i) img.pixels[i] = mask.allowed[i] ? 128 : 0;
  return img;
}

}  // namespace idfm
