#include "occ/losses.hpp"

#include <cmath>
#include <string>

namespace occ {

namespace {

constexpr double kTap[3] = {1.0, 2.0, 1.0};

// One normalized [1 2 1] pass along rows (horizontal) or columns of every plane.
// transpose=true applies the adjoint, accumulating into dst.
void binomial_pass(const double* src, double* dst, int planes, int h, int w, bool horizontal,
                   bool transpose) {
  const int len = horizontal ? w : h;
  const int stride = horizontal ? 1 : w;
  const int lines = horizontal ? h : w;
  const int line_step = horizontal ? w : 1;
  for (int p = 0; p < planes; ++p) {
    const std::ptrdiff_t base = static_cast<std::ptrdiff_t>(p) * h * w;
    for (int line = 0; line < lines; ++line) {
      const std::ptrdiff_t origin = base + static_cast<std::ptrdiff_t>(line) * line_step;
      for (int i = 0; i < len; ++i) {
        double norm = 0.0;
        for (int a = -1; a <= 1; ++a) {
          if (i + a >= 0 && i + a < len) norm += kTap[a + 1];
        }
        const std::ptrdiff_t out = origin + static_cast<std::ptrdiff_t>(i) * stride;
        if (!transpose) {
          double acc = 0.0;
          for (int a = -1; a <= 1; ++a) {
            if (i + a >= 0 && i + a < len) acc += kTap[a + 1] * src[origin + (i + a) * stride];
          }
          dst[out] = acc / norm;
        } else {
          for (int a = -1; a <= 1; ++a) {
            if (i + a >= 0 && i + a < len) dst[origin + (i + a) * stride] += kTap[a + 1] / norm * src[out];
          }
        }
      }
    }
  }
}

void require_same(const Tensor& a, const Tensor& b, const char* who) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(who) + ": shapes " + to_string(a.shape()) + " and " +
                     to_string(b.shape()) + " differ");
  }
}

Tensor half_squared_error(const Tensor& scores, double target) {
  return scale(mean(square(add_scalar(scores, -target))), 0.5);
}

}  // namespace

void LossWeights::validate() const {
  for (double w : {rec, per, str, adv_t, adv_s}) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("loss weights must be finite and >= 0");
  }
}

FeatureExtractor::FeatureExtractor(std::uint64_t seed, int input_channels) {
  Rng rng(seed, "perceptual");
  ParamStore scratch;
  const int widths[] = {8, 8, 16, 16};
  int in = input_channels;
  for (int i = 0; i < 4; ++i) {
    Conv2d conv(scratch, "theta" + std::to_string(i), in, widths[i], 3, {1, 1, 1}, rng);
    conv.weight.set_requires_grad(false);
    conv.bias.set_requires_grad(false);
    convs_.push_back(conv);
    in = widths[i];
  }
}

std::vector<Tensor> FeatureExtractor::features(const Tensor& image) const {
  auto elu = [](const Tensor& t) { return activation(t, Activation::elu); };
  std::vector<Tensor> out;
  Tensor x = elu(convs_[0].forward(image));
  x = avg_pool2(elu(convs_[1].forward(x)));
  out.push_back(x);
  x = avg_pool2(elu(convs_[2].forward(x)));
  out.push_back(x);
  x = avg_pool2(elu(convs_[3].forward(x)));
  out.push_back(x);
  return out;
}

Tensor smooth3x3(const Tensor& image) {
  if (image.rank() != 4) throw ShapeError("smooth3x3 expects N x C x H x W");
  const int planes = image.dim(0) * image.dim(1), h = image.dim(2), w = image.dim(3);
  Vector tmp(image.size());
  Tensor out(image.shape());
  binomial_pass(image.data(), tmp.data(), planes, h, w, false, false);
  binomial_pass(tmp.data(), out.data(), planes, h, w, true, false);
  if (detail::should_record({&image})) {
    detail::record(out, [image, planes, h, w](const Vector& g) {
      Vector tmp = Vector::Zero(g.size());
      binomial_pass(g.data(), tmp.data(), planes, h, w, true, true);
      binomial_pass(tmp.data(), image.grad_buffer().data(), planes, h, w, false, true);
    });
  }
  return out;
}

Tensor StructureOperator::apply(const Tensor& image) const {
  Tensor x = image;
  for (int i = 0; i < iterations_; ++i) x = smooth3x3(x);
  return x;
}

Tensor bce_loss(const Tensor& prediction, const Tensor& target) { return bce(prediction, target); }

Tensor rec_loss(const Tensor& prediction, const Tensor& target) {
  require_same(prediction, target, "rec_loss");
  return abs_mean(sub(prediction, target));
}

Tensor perceptual_loss(const FeatureExtractor& extractor, const Tensor& prediction,
                       const Tensor& target) {
  require_same(prediction, target, "perceptual_loss");
  const std::vector<Tensor> fp = extractor.features(prediction);
  std::vector<Tensor> ft;
  {
    NoTape untracked;
    ft = extractor.features(target.requires_grad() ? target.detach() : target);
  }
  Tensor total = abs_mean(sub(fp[0], ft[0]));
  for (std::size_t i = 1; i < fp.size(); ++i) total = add(total, abs_mean(sub(fp[i], ft[i])));
  return scale(total, 1.0 / static_cast<double>(fp.size()));
}

Tensor structure_loss(const StructureOperator& op, const Tensor& prediction, const Tensor& target) {
  require_same(prediction, target, "structure_loss");
  Tensor smoothed_target;
  {
    NoTape untracked;
    smoothed_target = op.apply(target);
  }
  return abs_mean(sub(op.apply(prediction), smoothed_target));
}

double d_texture_loss(double d_real, double d_fake) {
  return 0.5 * ((d_real - 1.0) * (d_real - 1.0) + d_fake * d_fake);
}

double d_structure_loss(double d_real_structure, double d_fake_structure) {
  return d_texture_loss(d_real_structure, d_fake_structure);
}

Tensor d_texture_loss(const Tensor& d_real, const Tensor& d_fake) {
  return add(half_squared_error(d_real, 1.0), half_squared_error(d_fake, 0.0));
}

Tensor d_structure_loss(const Tensor& d_real_structure, const Tensor& d_fake_structure) {
  return d_texture_loss(d_real_structure, d_fake_structure);
}

std::pair<double, double> g_adversarial_loss(double d_fake, double d_fake_structure) {
  return {0.5 * (d_fake - 1.0) * (d_fake - 1.0),
          0.5 * (d_fake_structure - 1.0) * (d_fake_structure - 1.0)};
}

std::pair<Tensor, Tensor> g_adversarial_loss(const Tensor& d_fake, const Tensor& d_fake_structure) {
  return {half_squared_error(d_fake, 1.0), half_squared_error(d_fake_structure, 1.0)};
}

double total_generator_loss(const LossWeights& weights, double rec, double per, double str,
                            double adv_t, double adv_s) {
  const std::pair<const char*, double> terms[] = {
      {"rec", rec}, {"per", per}, {"str", str}, {"adv_t", adv_t}, {"adv_s", adv_s}};
  for (const auto& [name, value] : terms) {
    if (!std::isfinite(value)) throw NumericError(std::string("non-finite loss term '") + name + "'");
  }
  return weights.rec * rec + weights.per * per + weights.str * str + weights.adv_t * adv_t +
         weights.adv_s * adv_s;
}

Tensor total_generator_loss(const LossWeights& weights, const GeneratorLossTerms& terms) {
  // Throws naming the first non-finite term.
  total_generator_loss(weights, terms.rec.item(), terms.per.item(), terms.str.item(),
                       terms.adv_t.item(), terms.adv_s.item());
  Tensor total = scale(terms.rec, weights.rec);
  total = add(total, scale(terms.per, weights.per));
  total = add(total, scale(terms.str, weights.str));
  total = add(total, scale(terms.adv_t, weights.adv_t));
  return add(total, scale(terms.adv_s, weights.adv_s));
}

}  // namespace occ
