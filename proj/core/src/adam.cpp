#include "idfm/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace idfm {

AdamState::AdamState(AdamConfig config, const std::vector<Tensor>& params) : config_(config) {
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (const Tensor& p : params) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void AdamState::step(std::vector<Tensor>& params) {
  if (params.size() != m_.size()) throw std::invalid_argument("adam: parameter list size changed");
  ++step_count_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double corr1 = 1.0 - std::pow(b1, static_cast<double>(step_count_));
  const double corr2 = 1.0 - std::pow(b2, static_cast<double>(step_count_));
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = params[pi];
    if (!p.has_grad()) throw std::invalid_argument("adam: parameter without gradient accumulator");
    if (p.size() != m_[pi].size()) shape_error("adam: moment/parameter shape mismatch");
    double* w = p.data();
    const double* g = p.grad();
    double* m = m_[pi].data();
    double* v = v_[pi].data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      const double mhat = m[i] / corr1;
      const double vhat = v[i] / corr2;
      w[i] -= config_.lr * mhat / (std::sqrt(vhat) + config_.epsilon);
    }
  }
}

}  // namespace idfm
