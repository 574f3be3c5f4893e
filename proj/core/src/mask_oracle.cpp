#include "idfm/mask_oracle.hpp"

#include <algorithm>

namespace idfm {

namespace {

bool contains(const std::vector<int>& sorted_set, int token) {
  return std::binary_search(sorted_set.begin(), sorted_set.end(), token);
}

bool in_instance_prompt(const PartitionLayout& lay, int n, int token) {
  const auto [p0, p1] = lay.inst_prompt[static_cast<std::size_t>(n)];
  return token >= p0 && token < p1;
}

bool in_any_instance_prompt(const PartitionLayout& lay, int token) {
  for (int n = 0; n < lay.num_instances(); ++n)
    if (in_instance_prompt(lay, n, token)) return true;
  return false;
}

// Token in the n-th prompt/latent/context group.
bool in_group(const PartitionLayout& lay, int n, int token) {
  return in_instance_prompt(lay, n, token) || contains(lay.latent_inst[static_cast<std::size_t>(n)], token) ||
         contains(lay.context_inst[static_cast<std::size_t>(n)], token);
}

bool is_background(const PartitionLayout& lay, int token) {
  if (token >= lay.global_begin && token < lay.global_end) return true;
  return contains(lay.latent_unassigned, token) || contains(lay.context_unassigned, token);
}

bool dis_allowed(const PartitionLayout& lay, int i, int j) {
  if (is_background(lay, i) && !in_any_instance_prompt(lay, j)) return true;
  for (int n = 0; n < lay.num_instances(); ++n)
    if (in_group(lay, n, i) && in_group(lay, n, j)) return true;
  return false;
}

bool har_allowed(const PartitionLayout& lay, int i, int j) {
  if (!in_any_instance_prompt(lay, i) && !in_any_instance_prompt(lay, j)) return true;
  for (int n = 0; n < lay.num_instances(); ++n)
    if (in_instance_prompt(lay, n, i) && in_group(lay, n, j)) return true;
  return false;
}

}  // namespace

AttnMask oracle_mask(const PartitionLayout& layout, Regime regime) {
  AttnMask mask(layout.seq_len);
  for (int i = 0; i < layout.seq_len; ++i)
    for (int j = 0; j < layout.seq_len; ++j) {
      const bool ok = regime == Regime::dis ? dis_allowed(layout, i, j) : har_allowed(layout, i, j);
      mask.set(i, j, ok);
    }
  return mask;
}

}  // namespace idfm
