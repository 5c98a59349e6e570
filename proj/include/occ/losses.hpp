#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "occ/layers.hpp"

namespace occ {

struct LossWeights {
  double rec = 1.0;
  double per = 0.01;
  double str = 1.0;
  double adv_t = 0.1;
  double adv_s = 0.1;

  void validate() const;
};

/// Frozen random-weight conv pyramid (ELU, 2x2 average pooling); the outputs
/// of its three pooling stages are the perceptual features. Weights are a pure function of seed.
class FeatureExtractor {
 public:
  explicit FeatureExtractor(std::uint64_t seed = 7, int input_channels = 3);

  // Three feature maps at 1/2, 1/4, 1/8 resolution. H, W divisible by 8.
  std::vector<Tensor> features(const Tensor& image) const;

 private:
  std::vector<Conv2d> convs_;
};

/// Fixed linear smoothing: `iterations` passes of a 3x3 binomial kernel
/// renormalized over in-bounds taps, so every output is a convex
/// combination of inputs and constant images are fixed points.
class StructureOperator {
 public:
  explicit StructureOperator(int iterations = 5) : iterations_(iterations) {}

  Tensor apply(const Tensor& image) const;
  int iterations() const { return iterations_; }

 private:
  int iterations_;
};

// One differentiable smoothing pass over every N x C plane.
Tensor smooth3x3(const Tensor& image);

Tensor bce_loss(const Tensor& prediction, const Tensor& target);
Tensor rec_loss(const Tensor& prediction, const Tensor& target);
Tensor perceptual_loss(const FeatureExtractor& extractor, const Tensor& prediction,
                       const Tensor& target);
Tensor structure_loss(const StructureOperator& op, const Tensor& prediction, const Tensor& target);

// Least-squares critic objectives: 1/2 [E(d_real - 1)^2 + E(d_fake^2)], E the batch mean.
double d_texture_loss(double d_real, double d_fake);
double d_structure_loss(double d_real_structure, double d_fake_structure);
Tensor d_texture_loss(const Tensor& d_real, const Tensor& d_fake);
Tensor d_structure_loss(const Tensor& d_real_structure, const Tensor& d_fake_structure);

// Generator-side least-squares terms 1/2 E(d - 1)^2 for (texture, structure).
std::pair<double, double> g_adversarial_loss(double d_fake, double d_fake_structure);
std::pair<Tensor, Tensor> g_adversarial_loss(const Tensor& d_fake, const Tensor& d_fake_structure);

struct GeneratorLossTerms {
  Tensor rec, per, str, adv_t, adv_s;
};

double total_generator_loss(const LossWeights& weights, double rec, double per, double str,
                            double adv_t, double adv_s);
Tensor total_generator_loss(const LossWeights& weights, const GeneratorLossTerms& terms);

}  // namespace occ
