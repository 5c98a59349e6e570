#include "occ/layers.hpp"

#include <bit>
#include <cmath>

namespace occ {

namespace {
using ConstRowMap = Eigen::Map<const RowMatrix>;
}

Tensor ParamStore::add_parameter(const std::string& name, Tensor init) {
  if (find(name).defined()) throw Error("duplicate parameter name '" + name + "'");
  init.set_requires_grad(true);
  entries_.push_back({name, init, true});
  return init;
}

Tensor ParamStore::add_buffer(const std::string& name, Tensor init) {
  if (find(name).defined()) throw Error("duplicate buffer name '" + name + "'");
  entries_.push_back({name, init, false});
  return init;
}

std::vector<Tensor> ParamStore::parameters() const {
  std::vector<Tensor> out;
  for (const Entry& e : entries_) {
    if (e.trainable) out.push_back(e.tensor);
  }
  return out;
}

Eigen::Index ParamStore::parameter_count() const {
  Eigen::Index n = 0;
  for (const Entry& e : entries_) {
    if (e.trainable) n += e.tensor.size();
  }
  return n;
}

Tensor ParamStore::find(const std::string& name) const {
  for (const Entry& e : entries_) {
    if (e.name == name) return e.tensor;
  }
  return {};
}

void ParamStore::zero_grad() {
  for (Entry& e : entries_) {
    if (e.trainable) e.tensor.clear_grad();
  }
}

std::uint64_t ParamStore::parameter_hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const Entry& e : entries_) {
    if (!e.trainable) continue;
    for (Eigen::Index i = 0; i < e.tensor.size(); ++i) {
      std::uint64_t bits = std::bit_cast<std::uint64_t>(e.tensor.data()[i]);
      for (int b = 0; b < 8; ++b) {
        h ^= (bits >> (8 * b)) & 0xffU;
        h *= 0x100000001b3ULL;
      }
    }
  }
  return h;
}

Tensor he_conv_weight(int out, int in, int k, Rng& rng) {
  return normal_tensor({out, in, k, k}, rng, std::sqrt(2.0 / (in * k * k)));
}

Conv2d::Conv2d(ParamStore& store, const std::string& name, int in, int out, int kernel,
               ConvParams p, Rng& rng)
    : params(p) {
  weight = store.add_parameter(name + ".weight", he_conv_weight(out, in, kernel, rng));
  bias = store.add_parameter(name + ".bias", Tensor({out}));
}

GatedConv::GatedConv(ParamStore& store, const std::string& name, const GatedConvSpec& spec,
                     Rng& rng)
    : spec_(spec) {
  const int o = spec.out_channels, c = spec.in_channels, k = spec.kernel;
  feature_weight = store.add_parameter(name + ".feature.weight", he_conv_weight(o, c, k, rng));
  feature_bias = store.add_parameter(name + ".feature.bias", Tensor({o}));
  gate_weight = store.add_parameter(name + ".gate.weight", he_conv_weight(o, c, k, rng));
  gate_bias = store.add_parameter(name + ".gate.bias", Tensor({o}));
}

Tensor GatedConv::gate(const Tensor& x) const {
  return sigmoid(conv2d(x, gate_weight, gate_bias, params()));
}

Tensor GatedConv::forward(const Tensor& x) const {
  if (x.rank() != 4 || x.dim(1) != spec_.in_channels) {
    throw ShapeError("gated conv expects " + std::to_string(spec_.in_channels) +
                     " input channels, got " + to_string(x.shape()));
  }
  const Tensor features = activation(conv2d(x, feature_weight, feature_bias, params()),
                                     spec_.feature_activation);
  return mul(features, gate(x));
}

SpectralNorm::SpectralNorm(ParamStore& store, const std::string& name, int rows, Rng& rng,
                           int iterations)
    : SpectralNorm(rows, rng, iterations) {
  u_ = store.add_buffer(name, u_);
}

SpectralNorm::SpectralNorm(int rows, Rng& rng, int iterations) : iterations_(iterations) {
  Tensor u = normal_tensor({rows}, rng);
  u.values().normalize();
  u_ = u;
}

Tensor SpectralNorm::apply(const Tensor& weight, bool update) {
  const int rows = weight.dim(0);
  if (rows != u_.size()) throw ShapeError("spectral norm: weight rows do not match state");
  const Eigen::Index cols = weight.size() / rows;
  ConstRowMap w(weight.data(), rows, cols);
  Vector u = u_.values();
  Vector v;
  // At least one half-step is needed to pair u with a right vector.
  const int steps = update ? std::max(iterations_, 1) : 0;
  for (int i = 0; i < steps; ++i) {
    v = w.transpose() * u;
    const double vn = v.norm();
    if (!(vn > 0.0)) throw NumericError("spectral norm: weight matrix is zero");
    v /= vn;
    u = w * v;
    const double un = u.norm();
    if (!(un > 0.0)) throw NumericError("spectral norm: weight matrix is zero");
    u /= un;
  }
  if (steps == 0) {
    v = w.transpose() * u;
    const double vn = v.norm();
    if (!(vn > 0.0)) throw NumericError("spectral norm: weight matrix is zero");
    v /= vn;
  }
  const double sigma = u.dot(w * v);
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    throw NumericError("spectral norm: degenerate singular value estimate");
  }
  if (update) u_.values() = u;
  last_sigma_ = sigma;

  // d sigma / dW = u v^T, exact when u is held fixed.
  Tensor out(weight.shape(), Vector(weight.values() / sigma));
  if (detail::should_record({&weight})) {
    detail::record(out, [weight, u, v, sigma, rows, cols](const Vector& g) {
      ConstRowMap w(weight.data(), rows, cols);
      ConstRowMap gm(g.data(), rows, cols);
      const double inner = (gm.array() * w.array()).sum();
      Eigen::Map<RowMatrix> dw(weight.grad_buffer().data(), rows, cols);
      dw += gm / sigma - (inner / (sigma * sigma)) * (u * v.transpose());
    });
  }
  return out;
}

Tensor spectral_norm_apply(SpectralNorm& state, const Tensor& weight) {
  return state.apply(weight, true);
}

SNConv2d::SNConv2d(ParamStore& store, const std::string& name, int in, int out, int kernel,
                   ConvParams p, Rng& rng, int power_iterations)
    : params(p) {
  weight = store.add_parameter(name + ".weight", he_conv_weight(out, in, kernel, rng));
  bias = store.add_parameter(name + ".bias", Tensor({out}));
  norm = SpectralNorm(store, name + ".sn_u", out, rng, power_iterations);
}

Tensor SNConv2d::forward(const Tensor& x, bool update_norm) {
  return conv2d(x, norm.apply(weight, update_norm), bias, params);
}

SNLinear::SNLinear(ParamStore& store, const std::string& name, int in, int out, Rng& rng,
                   int power_iterations) {
  weight = store.add_parameter(name + ".weight", normal_tensor({out, in}, rng, std::sqrt(1.0 / in)));
  bias = store.add_parameter(name + ".bias", Tensor({out}));
  norm = SpectralNorm(store, name + ".sn_u", out, rng, power_iterations);
}

Tensor SNLinear::forward(const Tensor& x, bool update_norm) {
  return linear(x, norm.apply(weight, update_norm), bias);
}

BatchNorm2d::BatchNorm2d(ParamStore& store, const std::string& name, int channels) {
  gamma = store.add_parameter(name + ".gamma", Tensor({channels}, 1.0));
  beta = store.add_parameter(name + ".beta", Tensor({channels}, 0.0));
  running_mean = store.add_buffer(name + ".running_mean", Tensor({channels}, 0.0));
  running_var = store.add_buffer(name + ".running_var", Tensor({channels}, 1.0));
}

Tensor BatchNorm2d::forward(const Tensor& x, bool training) {
  if (x.rank() != 4 || x.dim(1) != gamma.size()) {
    throw ShapeError("batch norm expects " + std::to_string(gamma.size()) + " channels, got " +
                     to_string(x.shape()));
  }
  const int n = x.dim(0), c = x.dim(1);
  const Eigen::Index plane = static_cast<Eigen::Index>(x.dim(2)) * x.dim(3);
  const double count = static_cast<double>(n * plane);

  Vector mu(c), inv_std(c);
  for (int ch = 0; ch < c; ++ch) {
    if (training) {
      double s = 0.0, s2 = 0.0;
      for (int i = 0; i < n; ++i) {
        const auto seg = x.values().segment((static_cast<Eigen::Index>(i) * c + ch) * plane, plane);
        s += seg.sum();
      }
      mu[ch] = s / count;
      for (int i = 0; i < n; ++i) {
        const auto seg = x.values().segment((static_cast<Eigen::Index>(i) * c + ch) * plane, plane);
        s2 += (seg.array() - mu[ch]).square().sum();
      }
      const double var = s2 / count;
      inv_std[ch] = 1.0 / std::sqrt(var + eps);
      const double unbiased = count > 1 ? s2 / (count - 1) : var;
      running_mean.data()[ch] = (1 - momentum) * running_mean.data()[ch] + momentum * mu[ch];
      running_var.data()[ch] = (1 - momentum) * running_var.data()[ch] + momentum * unbiased;
    } else {
      mu[ch] = running_mean.data()[ch];
      inv_std[ch] = 1.0 / std::sqrt(running_var.data()[ch] + eps);
    }
  }

  Tensor normalized(x.shape());
  Tensor y(x.shape());
  for (int i = 0; i < n; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      const Eigen::Index off = (static_cast<Eigen::Index>(i) * c + ch) * plane;
      normalized.values().segment(off, plane) =
          (x.values().segment(off, plane).array() - mu[ch]) * inv_std[ch];
      y.values().segment(off, plane) =
          normalized.values().segment(off, plane).array() * gamma.data()[ch] + beta.data()[ch];
    }
  }
  detail::check_finite(y, "batch_norm");

  Tensor xin = x, g = gamma, b = beta;
  if (detail::should_record({&xin, &g, &b})) {
    detail::record(y, [xin, g, b, normalized, inv_std, n, c, plane, count, training](const Vector& grad) mutable {
      Vector dgamma = Vector::Zero(c), dbeta = Vector::Zero(c);
      Vector sum_dxhat = Vector::Zero(c), sum_dxhat_xhat = Vector::Zero(c);
      for (int i = 0; i < n; ++i) {
        for (int ch = 0; ch < c; ++ch) {
          const Eigen::Index off = (static_cast<Eigen::Index>(i) * c + ch) * plane;
          const auto gs = grad.segment(off, plane);
          const auto xs = normalized.values().segment(off, plane);
          dbeta[ch] += gs.sum();
          dgamma[ch] += gs.dot(xs);
        }
      }
      if (g.requires_grad()) g.grad_buffer() += dgamma;
      if (b.requires_grad()) b.grad_buffer() += dbeta;
      if (!xin.requires_grad()) return;
      // Sums of d(xhat) = grad * gamma equal gamma * dbeta and gamma * dgamma.
      for (int ch = 0; ch < c; ++ch) {
        sum_dxhat[ch] = g.data()[ch] * dbeta[ch];
        sum_dxhat_xhat[ch] = g.data()[ch] * dgamma[ch];
      }
      Vector& dx = xin.grad_buffer();
      for (int i = 0; i < n; ++i) {
        for (int ch = 0; ch < c; ++ch) {
          const Eigen::Index off = (static_cast<Eigen::Index>(i) * c + ch) * plane;
          const auto gs = grad.segment(off, plane).array() * g.data()[ch];
          if (training) {
            const auto xs = normalized.values().segment(off, plane).array();
            dx.segment(off, plane).array() +=
                inv_std[ch] * (gs - sum_dxhat[ch] / count - xs * (sum_dxhat_xhat[ch] / count));
          } else {
            dx.segment(off, plane).array() += inv_std[ch] * gs;
          }
        }
      }
    });
  }
  return y;
}

DenseBlock::DenseBlock(ParamStore& store, const std::string& name, const DenseBlockSpec& spec,
                       Rng& rng)
    : spec_(spec) {
  int channels = spec.in_channels;
  for (int i = 0; i < spec.num_layers(); ++i) {
    const int d = spec.dilations[static_cast<std::size_t>(i)];
    const std::string layer = name + ".layer" + std::to_string(i);
    if (spec.gated) {
      gated_layers.emplace_back(store, layer,
                                GatedConvSpec{channels, spec.growth, 3, 1, d, d, spec.activation},
                                rng);
    } else {
      plain_layers.emplace_back(store, layer, channels, spec.growth, 3, ConvParams{1, d, d}, rng);
    }
    channels += spec.growth;
  }
}

Tensor DenseBlock::forward(const Tensor& x) const {
  if (x.rank() != 4 || x.dim(1) != spec_.in_channels) {
    throw ShapeError("dense block expects " + std::to_string(spec_.in_channels) +
                     " input channels, got " + to_string(x.shape()));
  }
  std::vector<Tensor> features{x};
  Tensor current = x;
  for (int i = 0; i < spec_.num_layers(); ++i) {
    const auto idx = static_cast<std::size_t>(i);
    Tensor out = spec_.gated ? gated_layers[idx].forward(current)
                             : activation(plain_layers[idx].forward(current), spec_.activation);
    features.push_back(out);
    current = concat(features);
  }
  return current;
}

ASPP::ASPP(ParamStore& store, const std::string& name, const ASPPSpec& spec, Rng& rng)
    : spec_(spec) {
  for (int rate : spec.rates) {
    branches.emplace_back(store, name + ".rate" + std::to_string(rate), spec.in_channels,
                          spec.out_channels, 3, ConvParams{1, rate, rate}, rng);
  }
}

Tensor ASPP::forward(const Tensor& x) const {
  if (x.rank() != 4 || x.dim(1) != spec_.in_channels) {
    throw ShapeError("aspp expects " + std::to_string(spec_.in_channels) + " input channels, got " +
                     to_string(x.shape()));
  }
  Tensor total = branches.front().forward(x);
  for (std::size_t i = 1; i < branches.size(); ++i) total = add(total, branches[i].forward(x));
  return total;
}

SelfAttention::SelfAttention(ParamStore& store, const std::string& name, const AttentionSpec& spec,
                             Rng& rng)
    : spec_(spec) {
  query = Conv2d(store, name + ".query", spec.channels, spec.key_dim, 1, {}, rng);
  key = Conv2d(store, name + ".key", spec.channels, spec.key_dim, 1, {}, rng);
  value = Conv2d(store, name + ".value", spec.channels, spec.channels, 1, {}, rng);
  gamma = store.add_parameter(name + ".gamma", Tensor({1}, 0.0));
}

AttentionResult SelfAttention::forward(const Tensor& x) const {
  if (x.rank() != 4 || x.dim(1) != spec_.channels) {
    throw ShapeError("self attention expects " + std::to_string(spec_.channels) +
                     " channels, got " + to_string(x.shape()));
  }
  const int n = x.dim(0), c = x.dim(1), positions = x.dim(2) * x.dim(3);
  const int dk = query.out_channels();
  const Tensor q = reshape(query.forward(x), {n, dk, positions});
  const Tensor k = reshape(key.forward(x), {n, dk, positions});
  const Tensor v = reshape(value.forward(x), {n, c, positions});
  // scores[i][j] = q_i . k_j / sqrt(dk)
  const Tensor scores = scale(bmm(q, k, true, false), 1.0 / std::sqrt(static_cast<double>(dk)));
  const Tensor attention = softmax(scores);
  // mixed[c][i] = sum_j v[c][j] * attention[i][j]
  const Tensor mixed = reshape(bmm(v, attention, false, true), x.shape());
  return {add(x, mul(mixed, gamma)), attention};
}

Tensor expand_channels(const Tensor& map, int channels) {
  if (map.rank() != 4 || map.dim(1) != 1) {
    throw ShapeError("expand_channels expects N x 1 x H x W, got " + to_string(map.shape()));
  }
  if (channels == 1) return map;
  return concat(std::vector<Tensor>(static_cast<std::size_t>(channels), map));
}

}  // namespace occ
