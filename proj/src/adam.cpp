#include "occ/adam.hpp"

#include <cmath>
#include <string>

namespace occ {

void adam_step(AdamState& s, const std::vector<Tensor>& params, const std::vector<Vector>& grads) {
  if (params.size() != grads.size()) throw ShapeError("adam_step: parameter and gradient counts differ");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].size() != params[i].size()) {
      throw ShapeError("adam_step: gradient " + std::to_string(i) + " has the wrong size");
    }
    if (!grads[i].allFinite()) {
      throw NumericError("adam_step: non-finite gradient for parameter " + std::to_string(i));
    }
  }
  if (s.m.size() != params.size()) {
    s.m.clear();
    s.v.clear();
    for (const Tensor& p : params) {
      s.m.push_back(Vector::Zero(p.size()));
      s.v.push_back(Vector::Zero(p.size()));
    }
  }
  ++s.step;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Vector& g = grads[i];
    s.m[i] = s.beta1 * s.m[i] + (1.0 - s.beta1) * g;
    s.v[i] = s.beta2 * s.v[i] + (1.0 - s.beta2) * g.cwiseProduct(g);
    Tensor p = params[i];
    p.values().array() -=
        s.rate * (s.m[i].array() / c1) / ((s.v[i].array() / c2).sqrt() + s.eps);
  }
}

Adam::Adam(std::vector<Tensor> params, double rate) : params_(std::move(params)) {
  if (!(rate > 0.0)) throw ConfigError("learning rate must be > 0");
  state_.rate = rate;
}

void Adam::step() {
  std::vector<Vector> grads;
  grads.reserve(params_.size());
  for (const Tensor& p : params_) grads.push_back(p.has_grad() ? p.grad() : Vector::Zero(p.size()));
  adam_step(state_, params_, grads);
}

double lr_schedule(int epoch, double initial, int every) {
  if (epoch < 0) throw ConfigError("lr_schedule: epoch must be >= 0");
  if (every < 1) throw ConfigError("lr_schedule: decay interval must be >= 1");
  return initial * std::pow(0.5, epoch / every);
}

}  // namespace occ
