#include "occ/tensor.hpp"

#include <sstream>

namespace occ {

namespace {
thread_local Tape* g_active_tape = nullptr;
}

std::string to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

Eigen::Index numel(const Shape& shape) {
  Eigen::Index n = 1;
  for (int extent : shape) n *= extent;
  return n;
}

Tensor::Tensor(Shape shape, double fill) {
  for (int extent : shape) {
    if (extent <= 0) throw ShapeError("tensor extents must be positive, got " + to_string(shape));
  }
  impl_ = std::make_shared<Impl>();
  impl_->values = Vector::Constant(numel(shape), fill);
  impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, Vector values) {
  for (int extent : shape) {
    if (extent <= 0) throw ShapeError("tensor extents must be positive, got " + to_string(shape));
  }
  if (numel(shape) != values.size()) {
    throw ShapeError("shape " + to_string(shape) + " does not match " +
                     std::to_string(values.size()) + " values");
  }
  impl_ = std::make_shared<Impl>();
  impl_->shape = std::move(shape);
  impl_->values = std::move(values);
}

Tensor Tensor::scalar(double value) { return Tensor({1}, value); }

Tensor::Impl& Tensor::impl() const {
  if (!impl_) throw Error("use of an undefined tensor");
  return *impl_;
}

const Shape& Tensor::shape() const { return impl().shape; }

int Tensor::dim(int axis) const {
  const Shape& s = shape();
  if (axis < 0) axis += static_cast<int>(s.size());
  if (axis < 0 || axis >= static_cast<int>(s.size())) {
    throw ShapeError("axis out of range for shape " + to_string(s));
  }
  return s[axis];
}

Eigen::Index Tensor::size() const { return impl().values.size(); }
const Vector& Tensor::values() const { return impl().values; }
Vector& Tensor::values() { return impl().values; }

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
  return values()[0];
}

bool Tensor::requires_grad() const { return impl().requires_grad; }
void Tensor::set_requires_grad(bool flag) { impl().requires_grad = flag; }
bool Tensor::has_grad() const { return impl().grad.size() != 0; }

const Vector& Tensor::grad() const {
  if (!has_grad()) throw Error("tensor has no gradient");
  return impl().grad;
}

Vector& Tensor::grad_buffer() const {
  Impl& self = impl();
  if (self.grad.size() == 0) self.grad = Vector::Zero(self.values.size());
  return self.grad;
}

void Tensor::clear_grad() { impl().grad.resize(0); }

Tensor Tensor::clone() const { return Tensor(shape(), values()); }

Tape::Tape() : previous_(g_active_tape) { g_active_tape = this; }

Tape::~Tape() { g_active_tape = previous_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(Tensor output, BackwardFn backward) {
  entries_.push_back({std::move(output), std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw ShapeError("backward needs a scalar loss, got " + to_string(loss.shape()));
  }
  Tensor seed = loss;
  seed.grad_buffer()[0] += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    // Outputs that never received a gradient do not contribute.
    if (!it->output.has_grad()) continue;
    it->backward(it->output.grad());
  }
  entries_.clear();
}

NoTape::NoTape() : saved_(g_active_tape) { g_active_tape = nullptr; }
NoTape::~NoTape() { g_active_tape = saved_; }

void backward(const Tensor& loss) {
  Tape* tape = Tape::active();
  if (!tape) throw Error("backward called without an active tape");
  tape->backward(loss);
}

namespace detail {

bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (!g_active_tape) return false;
  for (const Tensor* t : inputs) {
    if (t && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

void record(Tensor& output, Tape::BackwardFn backward) {
  output.set_requires_grad(true);
  g_active_tape->record(output, std::move(backward));
}

void check_finite(const Tensor& output, const char* op) {
  if (!output.values().allFinite()) {
    throw NumericError(std::string(op) + " produced a non-finite value");
  }
}

}  // namespace detail

}  // namespace occ
