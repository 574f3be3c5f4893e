#include "idfm/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace idfm {

namespace {

thread_local std::vector<Tape*> g_tape_stack;

std::size_t checked_count(const std::vector<int>& dims) {
  if (dims.empty()) shape_error("tensor must have at least one dimension");
  std::size_t n = 1;
  for (int d : dims) {
    if (d <= 0) shape_error("tensor dimensions must be positive");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

}  // namespace

Tensor Tensor::zeros(std::vector<int> dims) {
  std::size_t n = checked_count(dims);
  Tensor t;
  t.dims_ = std::move(dims);
  t.data_ = std::make_shared<std::vector<double>>(n, 0.0);
  return t;
}

Tensor Tensor::full(std::vector<int> dims, double value) {
  Tensor t = zeros(std::move(dims));
  for (double& v : *t.data_) v = value;
  return t;
}

Tensor Tensor::from_data(std::vector<int> dims, std::vector<double> values) {
  std::size_t n = checked_count(dims);
  if (n != values.size()) shape_error("value count does not match dimensions");
  Tensor t;
  t.dims_ = std::move(dims);
  t.data_ = std::make_shared<std::vector<double>>(std::move(values));
  return t;
}

Tensor Tensor::scalar(double value) { return from_data({1}, {value}); }

Tensor Tensor::param(std::vector<int> dims, std::vector<double> values) {
  Tensor t = from_data(std::move(dims), std::move(values));
  t.ensure_grad();
  return t;
}

double Tensor::value() const {
  if (!is_scalar()) shape_error("value() on non-scalar tensor " + shape_str());
  return (*data_)[0];
}

void Tensor::ensure_grad() {
  if (!grad_) grad_ = std::make_shared<std::vector<double>>(size(), 0.0);
}

void Tensor::zero_grad() {
  if (grad_) std::fill(grad_->begin(), grad_->end(), 0.0);
}

Tensor Tensor::with_fresh_grad() const {
  Tensor t = *this;
  t.grad_ = std::make_shared<std::vector<double>>(size(), 0.0);
  t.node = -1;
  return t;
}

int Tensor::rows() const {
  if (rank() != 2) shape_error("rows() on tensor of rank " + std::to_string(rank()));
  return dims_[0];
}

int Tensor::cols() const {
  if (rank() != 2) shape_error("cols() on tensor of rank " + std::to_string(rank()));
  return dims_[1];
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (i) os << 'x';
    os << dims_[i];
  }
  os << ']';
  return os.str();
}

Tape::Tape() { g_tape_stack.push_back(this); }

Tape::~Tape() { g_tape_stack.pop_back(); }

Tape* Tape::active() { return g_tape_stack.empty() ? nullptr : g_tape_stack.back(); }

int Tape::record(std::function<void()> step) {
  steps_.push_back(std::move(step));
  return static_cast<int>(steps_.size()) - 1;
}

void Tape::backward(const Tensor& scalar_loss) {
  if (!scalar_loss.is_scalar()) shape_error("backward() expects a scalar loss");
  if (scalar_loss.node < 0 || !scalar_loss.has_grad())
    throw std::logic_error("backward(): loss was not produced on the active tape");
  const_cast<Tensor&>(scalar_loss).grad()[0] = 1.0;
  for (std::size_t i = steps_.size(); i-- > 0;) steps_[i]();
}

void shape_error(const std::string& what) { throw std::invalid_argument("shape error: " + what); }

void check_finite(const Tensor& t, const char* op) {
  const double* p = t.data();
  const std::size_t n = t.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(p[i]))
      throw std::domain_error(std::string(op) + ": non-finite value at flat index " + std::to_string(i));
  }
}

}  // namespace idfm
