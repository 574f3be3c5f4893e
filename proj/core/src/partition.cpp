#include "idfm/partition.hpp"

#include <stdexcept>
#include <string>

namespace idfm {

namespace {

void validate_box(const BoxSpec& box, int width, int height) {
  if (box.w <= 0 || box.h <= 0)
    throw std::invalid_argument("box: width and height must be positive, got " + std::to_string(box.w) + "x" +
                                std::to_string(box.h));
  if (box.x < 0 || box.y < 0 || box.x + box.w > width || box.y + box.h > height)
    throw std::invalid_argument("box: (" + std::to_string(box.x) + "," + std::to_string(box.y) + "," +
                                std::to_string(box.w) + "," + std::to_string(box.h) + ") exceeds image " +
                                std::to_string(width) + "x" + std::to_string(height));
}

}  // namespace

int PartitionLayout::prompt_instance(int i) const {
  for (std::size_t n = 0; n < inst_prompt.size(); ++n)
    if (i >= inst_prompt[n].first && i < inst_prompt[n].second) return static_cast<int>(n);
  return -1;
}

std::vector<int> patchify_box(const BoxSpec& box, int patch, int grid_h, int grid_w) {
  if (patch <= 0 || grid_h <= 0 || grid_w <= 0) throw std::invalid_argument("patchify_box: bad grid");
  validate_box(box, grid_w * patch, grid_h * patch);
  // A box smaller than one patch still claims its enclosing patch: the
  // mapping includes every patch that shares at least one pixel.
  const int r0 = box.y / patch;
  const int r1 = (box.y + box.h - 1) / patch;
  const int c0 = box.x / patch;
  const int c1 = (box.x + box.w - 1) / patch;
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(r1 - r0 + 1) * (c1 - c0 + 1));
  for (int r = r0; r <= r1; ++r)
    for (int c = c0; c <= c1; ++c) out.push_back(r * grid_w + c);
  return out;
}

PartitionLayout build_layout(int global_len, const std::vector<int>& inst_prompt_lens,
                             const std::vector<BoxSpec>& boxes, int patch, int grid_h, int grid_w) {
  if (global_len < 1) throw std::invalid_argument("build_layout: global prompt must have at least one token");
  if (inst_prompt_lens.size() != boxes.size())
    throw std::invalid_argument("build_layout: " + std::to_string(inst_prompt_lens.size()) +
                                " prompt lengths for " + std::to_string(boxes.size()) + " boxes");
  for (int len : inst_prompt_lens)
    if (len < 1) throw std::invalid_argument("build_layout: empty instance prompt segment");

  PartitionLayout lay;
  lay.global_len = global_len;
  lay.inst_prompt_lens = inst_prompt_lens;
  lay.grid_h = grid_h;
  lay.grid_w = grid_w;
  lay.patch = patch;

  lay.global_begin = 0;
  lay.global_end = global_len;
  int cursor = global_len;
  for (int len : inst_prompt_lens) {
    lay.inst_prompt.emplace_back(cursor, cursor + len);
    cursor += len;
  }
  const int grid = grid_h * grid_w;
  lay.latent_begin = cursor;
  lay.context_begin = cursor + grid;
  lay.seq_len = cursor + 2 * grid;

  const int n = static_cast<int>(boxes.size());
  lay.latent_inst.resize(static_cast<std::size_t>(n));
  lay.context_inst.resize(static_cast<std::size_t>(n));
  std::vector<std::uint8_t> claimed(static_cast<std::size_t>(grid), 0);
  for (int b = 0; b < n; ++b) {
    const std::vector<int> patches = patchify_box(boxes[static_cast<std::size_t>(b)], patch, grid_h, grid_w);
    for (int p : patches) {
      claimed[static_cast<std::size_t>(p)] = 1;
      lay.latent_inst[static_cast<std::size_t>(b)].push_back(lay.latent_begin + p);
      lay.context_inst[static_cast<std::size_t>(b)].push_back(lay.context_begin + p);
    }
  }
  for (int p = 0; p < grid; ++p) {
    if (!claimed[static_cast<std::size_t>(p)]) {
      lay.latent_unassigned.push_back(lay.latent_begin + p);
      lay.context_unassigned.push_back(lay.context_begin + p);
    }
  }
  return lay;
}

}  // namespace idfm
