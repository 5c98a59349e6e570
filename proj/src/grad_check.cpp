#include "occ/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace occ {

namespace {

double evaluate(const ScalarFunction& f, const Tensor& x) {
  NoTape untracked;
  const Tensor y = f(x);
  if (y.size() != 1) throw ShapeError("grad_check: function must be scalar-valued");
  const double v = y.item();
  if (!std::isfinite(v)) throw NumericError("grad_check: function is not finite near the point");
  return v;
}

}  // namespace

double grad_check(const ScalarFunction& f, const Tensor& point, double epsilon) {
  Tensor x = point.clone();
  x.set_requires_grad(true);
  Vector analytic;
  {
    Tape tape;
    const Tensor y = f(x);
    if (y.size() != 1) throw ShapeError("grad_check: function must be scalar-valued");
    if (!std::isfinite(y.item())) throw NumericError("grad_check: function value is not finite");
    tape.backward(y);
    analytic = x.has_grad() ? x.grad() : Vector::Zero(x.size());
  }

  double worst = 0.0;
  Tensor probe = point.clone();
  for (Eigen::Index i = 0; i < probe.size(); ++i) {
    const double saved = probe.data()[i];
    probe.data()[i] = saved + epsilon;
    const double up = evaluate(f, probe);
    probe.data()[i] = saved - epsilon;
    const double down = evaluate(f, probe);
    probe.data()[i] = saved;
    const double numeric = (up - down) / (2.0 * epsilon);
    const double a = analytic[i];
    const double err = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace occ
