#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace idfm {

// Dense row-major tensor of 64-bit floats. Data is shared between copies;
// a tensor that participates in differentiation additionally carries a
// gradient accumulator of identical shape. Tensors without a gradient slot
// are immutable observations and safe to share across threads.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> dims);
  static Tensor full(std::vector<int> dims, double value);
  static Tensor from_data(std::vector<int> dims, std::vector<double> values);
  static Tensor scalar(double value);
  // Leaf with a gradient accumulator (a trainable parameter).
  static Tensor param(std::vector<int> dims, std::vector<double> values);

  const std::vector<int>& dims() const { return dims_; }
  int dim(int i) const { return dims_[static_cast<std::size_t>(i)]; }
  int rank() const { return static_cast<int>(dims_.size()); }
  std::size_t size() const { return data_ ? data_->size() : 0; }
  bool is_scalar() const { return size() == 1; }

  double* data() { return data_->data(); }
  const double* data() const { return data_->data(); }
  double value() const;  // scalar accessor, throws if not scalar

  bool has_grad() const { return grad_ != nullptr; }
  double* grad() { return grad_->data(); }
  const double* grad() const { return grad_->data(); }
  void ensure_grad();  // allocate a zero-filled accumulator
  void drop_grad() { grad_.reset(); }
  void zero_grad();
  // Fresh accumulator, same shared data. Used to give each training worker
  // its own gradient buffers over shared weights.
  Tensor with_fresh_grad() const;

  // 2-D helpers (most of the model math is matrices).
  int rows() const;
  int cols() const;
  double at(int r, int c) const { return (*data_)[static_cast<std::size_t>(r) * cols() + c]; }

  bool same_shape(const Tensor& o) const { return dims_ == o.dims_; }
  std::string shape_str() const;

  // Tape bookkeeping. node >= 0 means this tensor was produced by (or
  // registered on) the active tape.
  int node = -1;

 private:
  std::vector<int> dims_;
  std::shared_ptr<std::vector<double>> data_;
  std::shared_ptr<std::vector<double>> grad_;

  friend class Tape;
};

// Reverse-mode differentiation tape. One tape per training context; a tape
// is confined to the thread that created it. Construction pushes the tape
// as the active one for this thread, destruction pops it.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  // Records a backward step; returns its node id. Steps run in reverse
  // insertion order, so gradient accumulation order is fixed.
  int record(std::function<void()> step);

  // Seeds d(loss)/d(loss) = 1 and propagates to every leaf accumulator.
  void backward(const Tensor& scalar_loss);

  std::size_t node_count() const { return steps_.size(); }

 private:
  std::vector<std::function<void()>> steps_;
};

[[noreturn]] void shape_error(const std::string& what);

// True if `t` should take part in differentiation right now.
inline bool tracked(const Tensor& t) {
  return Tape::active() != nullptr && (t.has_grad() || t.node >= 0);
}

void check_finite(const Tensor& t, const char* op);

}  // namespace idfm
