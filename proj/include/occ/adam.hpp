#pragma once

#include <cstdint>
#include <vector>

#include "occ/tensor.hpp"

namespace occ {

struct AdamState {
  double rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  std::vector<Vector> m;  // first moments, one per parameter
  std::vector<Vector> v;  // second moments
};

// One bias-corrected update. Throws NumericError before touching anything
// if a gradient holds NaN or Inf.
void adam_step(AdamState& state, const std::vector<Tensor>& params, const std::vector<Vector>& grads);

class Adam {
 public:
  Adam(std::vector<Tensor> params, double rate);

  // Applies the parameters' accumulated gradients; a missing gradient counts as zero.
  void step();

  double rate() const { return state_.rate; }
  void set_rate(double rate) { state_.rate = rate; }
  AdamState& state() { return state_; }
  const AdamState& state() const { return state_; }
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  AdamState state_;
};

// Step decay: initial * 0.5^floor(epoch / every).
double lr_schedule(int epoch, double initial = 1e-3, int every = 25);

}  // namespace occ
