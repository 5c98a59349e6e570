#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "occ/error.hpp"

namespace occ {

using Shape = std::vector<int>;
using Vector = Eigen::VectorXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::string to_string(const Shape& shape);
Eigen::Index numel(const Shape& shape);

/// Dense row-major array of doubles with an optional gradient buffer.
///
/// A Tensor is a handle: copies share storage, which is what lets the tape
/// route gradients back to parameters. Use clone() for an independent copy.
/// Image-like data uses N x C x H x W layout.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, Vector values);

  static Tensor scalar(double value);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  int rank() const { return static_cast<int>(shape().size()); }
  int dim(int axis) const;
  Eigen::Index size() const;

  const Vector& values() const;
  Vector& values();
  const double* data() const { return values().data(); }
  double* data() { return values().data(); }
  double item() const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);

  bool has_grad() const;
  const Vector& grad() const;
  // Allocates a zero gradient on first use. Const because the gradient
  // slot belongs to the shared storage, not to this handle.
  Vector& grad_buffer() const;
  void clear_grad();

  // Fresh tensor with copied values, untracked.
  Tensor clone() const;
  Tensor detach() const { return clone(); }

  bool is(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  struct Impl {
    Shape shape;
    Vector values;
    Vector grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Impl> impl_;

  Impl& impl() const;
};

/// Reverse-mode record of the primitives executed since construction.
///
/// Constructing a Tape makes it the active tape of the current thread until
/// it is destroyed. Operations record themselves only when a tape is active
/// and at least one input requires a gradient.
class Tape {
 public:
  using BackwardFn = std::function<void(const Vector& grad_output)>;

  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  void record(Tensor output, BackwardFn backward);
  // Seeds d(loss)/d(loss) = 1, sweeps the record in reverse and clears it.
  void backward(const Tensor& loss);
  std::size_t size() const { return entries_.size(); }

 private:
  struct Entry {
    Tensor output;
    BackwardFn backward;
  };
  std::vector<Entry> entries_;
  Tape* previous_;
};

/// Suspends recording on the current thread for its lifetime.
class NoTape {
 public:
  NoTape();
  ~NoTape();
  NoTape(const NoTape&) = delete;
  NoTape& operator=(const NoTape&) = delete;

 private:
  Tape* saved_;
};

// Backward through the active tape; throws if none is active or loss is not scalar.
void backward(const Tensor& loss);

namespace detail {

// True when an op over these inputs must be recorded.
bool should_record(std::initializer_list<const Tensor*> inputs);
// Marks output as tracked and pushes the closure on the active tape.
void record(Tensor& output, Tape::BackwardFn backward);
// Throws NumericError naming op if output holds NaN or Inf.
void check_finite(const Tensor& output, const char* op);

}  // namespace detail

}  // namespace occ
