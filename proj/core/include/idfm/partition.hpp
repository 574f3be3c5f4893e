#pragma once

#include <string>
#include <vector>

namespace idfm {

// Pixel-space bounding box with its edit instruction. Top-left origin.
struct BoxSpec {
  int x = 0, y = 0;  // non-negative
  int w = 0, h = 0;  // positive
  std::string src;   // text currently in the box
  std::string tgt;   // text the edit should place there

  bool operator==(const BoxSpec&) const = default;
};

// Index-set partition of one joint token sequence, ordered
// [global prompt | instance prompts 1..N | latent grid | context grid].
// Latent and context instance sets refer to the same patch coordinates,
// offset by their block starts; overlapping boxes put a patch index into
// several instance sets at once.
struct PartitionLayout {
  int seq_len = 0;
  int global_len = 0;
  std::vector<int> inst_prompt_lens;

  int grid_h = 0, grid_w = 0, patch = 0;

  // Prompt ranges, contiguous and disjoint.
  int global_begin = 0, global_end = 0;          // T_g = [begin, end)
  std::vector<std::pair<int, int>> inst_prompt;  // T_n ranges

  int latent_begin = 0;   // latent block start (grid_h*grid_w tokens)
  int context_begin = 0;  // context block start (same extent)

  std::vector<int> latent_unassigned;                // L_u, ascending
  std::vector<int> context_unassigned;               // C_u, ascending
  std::vector<std::vector<int>> latent_inst;         // L_n, ascending each
  std::vector<std::vector<int>> context_inst;        // C_n, ascending each

  int num_instances() const { return static_cast<int>(inst_prompt.size()); }
  int grid_count() const { return grid_h * grid_w; }
  int prompt_len() const { return latent_begin; }

  bool in_global_prompt(int i) const { return i >= global_begin && i < global_end; }
  bool in_latent(int i) const { return i >= latent_begin && i < latent_begin + grid_count(); }
  bool in_context(int i) const { return i >= context_begin && i < context_begin + grid_count(); }
  // Instance-prompt membership (which T_n, or -1).
  int prompt_instance(int i) const;
};

// Every patch whose pixel rectangle intersects the box in at least one
// pixel, as raster-order indices in [0, grid_h*grid_w). The image extent is
// grid * patch in each dimension; an out-of-bounds box is an error.
std::vector<int> patchify_box(const BoxSpec& box, int patch, int grid_h, int grid_w);

// Builds the full partition for one edit task. N = 0 is valid: all latent
// and context indices land in the unassigned sets.
PartitionLayout build_layout(int global_len, const std::vector<int>& inst_prompt_lens,
                             const std::vector<BoxSpec>& boxes, int patch, int grid_h, int grid_w);

}  // namespace idfm
