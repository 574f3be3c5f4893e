#pragma once

#include <cstdint>
#include <string>

#include "idfm/adam.hpp"
#include "idfm/masks.hpp"
#include "idfm/model.hpp"

namespace idfm {

// Everything a run needs, with documented defaults. JSON parsing is strict:
// unknown keys are rejected with the offending path.
struct RunConfig {
  ModelConfig model;
  int sampler_steps = 16;
  std::string schedule = "har-dis-har";
  AdamConfig adam;          // lr 1e-3, betas 0.9/0.999, eps 1e-8
  int batch_size = 16;
  int train_steps = 5000;
  int lora_rank = kLoraRankToy;
  double lora_alpha = static_cast<double>(kLoraRankToy);
  std::uint64_t seed = 0;
};

RunConfig parse_run_config_json(const std::string& text);
RunConfig load_run_config(const std::string& path);
std::string run_config_json(const RunConfig& config);

std::string model_config_json(const ModelConfig& config);
ModelConfig parse_model_config_json(const std::string& text);

// Schedule specs: "har-dis-har" (default), "all-dis", "all-har", or any
// early-mid-late triple like "dis-har-dis". Band sizes come from the model
// config (early_count / late_count).
LayerSchedule schedule_from_spec(const std::string& spec, const ModelConfig& config);

}  // namespace idfm
