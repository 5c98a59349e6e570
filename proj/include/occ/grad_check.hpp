#pragma once

#include <functional>

#include "occ/tensor.hpp"

namespace occ {

using ScalarFunction = std::function<Tensor(const Tensor&)>;

/// Compares the tape gradient of f at point against central differences.
///
/// Returns max_i |a_i - n_i| / max(1e-8, |a_i| + |n_i|) where a is the
/// reverse-mode gradient and n the finite-difference estimate.
double grad_check(const ScalarFunction& f, const Tensor& point, double epsilon = 1e-5);

}  // namespace occ
