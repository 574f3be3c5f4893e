#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "idfm/adam.hpp"
#include "idfm/model.hpp"

namespace idfm {

// Binary checkpoint layout (all integers little-endian):
//   magic "IDFM"
//   u32 format version (currently 1)
//   u64 config blob length, UTF-8 JSON config
//   u64 tensor count, then per tensor:
//     u64 name length, UTF-8 name
//     u64 rank, u64 dims[rank]
//     f64 values (row-major)
// Round-tripping is bitwise: load(save(state)) == state.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct RawCheckpoint {
  std::string config_json;
  std::vector<std::pair<std::string, Tensor>> tensors;
};

void save_raw_checkpoint(const RawCheckpoint& ckpt, const std::string& path);
RawCheckpoint load_raw_checkpoint(const std::string& path);

// Model-level wrappers. Optimizer moments, when given, are stored as extra
// tensors named adam.m.<param> / adam.v.<param> so training can resume on
// the exact trajectory.
void save_model_checkpoint(ModelState& model, const std::string& path, const AdamState* adam = nullptr);

struct LoadedCheckpoint {
  ModelState model;
  bool has_adam = false;
  AdamConfig adam_config;
  std::int64_t step_count = 0;
  // Moment vectors keyed by parameter name, in checkpoint order.
  std::vector<std::pair<std::string, std::vector<double>>> adam_m;
  std::vector<std::pair<std::string, std::vector<double>>> adam_v;

  // Rebuilds the optimizer for the model's current trainable set.
  AdamState restore_adam(ModelState& model) const;
};
LoadedCheckpoint load_model_checkpoint(const std::string& path);

std::vector<std::string> trainable_param_names(ModelState& model);

}  // namespace idfm
