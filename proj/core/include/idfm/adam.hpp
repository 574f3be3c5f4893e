#pragma once

#include <cstdint>
#include <vector>

#include "idfm/tensor.hpp"

namespace idfm {

// Adam with bias correction. One state covers an ordered parameter list;
// moment buffers are kept per parameter in list order.
struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class AdamState {
 public:
  AdamState() = default;
  AdamState(AdamConfig config, const std::vector<Tensor>& params);

  // Applies one update from the gradients currently held in each parameter's
  // accumulator. step_count increases by exactly 1.
  void step(std::vector<Tensor>& params);

  std::int64_t step_count() const { return step_count_; }
  const AdamConfig& config() const { return config_; }

  // Moment access for checkpointing; shapes mirror the parameter list.
  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  void set_step_count(std::int64_t n) { step_count_ = n; }

 private:
  AdamConfig config_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::int64_t step_count_ = 0;
};

}  // namespace idfm
