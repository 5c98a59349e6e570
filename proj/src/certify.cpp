#include "occ/certify.hpp"

#include <algorithm>
#include <functional>
#include <memory>

#include "occ/grad_check.hpp"
#include "occ/layers.hpp"
#include "occ/losses.hpp"

namespace occ {

namespace {

using TensorFn = std::function<Tensor(const Tensor&)>;

struct Instance {
  ScalarFunction f;
  Tensor point;
};

struct Case {
  std::string name;
  std::function<Instance(Rng&)> make;
};

// Reduces a tensor-valued map to a scalar through fixed random weights.
Instance projected(TensorFn g, Tensor point, Rng& rng) {
  Tensor out;
  {
    NoTape untracked;
    out = g(point);
  }
  const Tensor w = uniform_tensor(out.shape(), rng);
  return {[g, w](const Tensor& x) { return sum(mul(g(x), w)); }, point};
}

// Moves values at least `margin` away from zero, keeping their sign.
Tensor away_from_zero(Tensor t, double margin) {
  for (Eigen::Index i = 0; i < t.size(); ++i) {
    double& v = t.data()[i];
    v += v < 0.0 ? -margin : margin;
  }
  return t;
}

// Distinct values on a coarse grid, so pooling windows have clear maxima.
Tensor well_separated(Shape shape, Rng& rng) {
  Tensor t(shape);
  const Eigen::Index n = t.size();
  for (Eigen::Index i = 0; i < n; ++i) t.data()[i] = (static_cast<double>(i) - n / 2.0) * 0.01;
  for (Eigen::Index i = n - 1; i > 0; --i) std::swap(t.data()[i], t.data()[rng.uniform_int(0, static_cast<int>(i))]);
  return t;
}

Tensor random_binary(Shape shape, Rng& rng) {
  Tensor t(shape);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform() < 0.5 ? 0.0 : 1.0;
  return t;
}

ConvParams random_conv(Rng& rng, int& kernel) {
  kernel = rng.uniform_int(1, 3);
  return {rng.uniform_int(1, 2), rng.uniform_int(0, 2), rng.uniform_int(1, 2)};
}

std::vector<Case> conv_cases() {
  std::vector<Case> cases;
  for (int arg = 0; arg < 3; ++arg) {
    static const char* names[] = {"conv2d/input", "conv2d/weight", "conv2d/bias"};
    cases.push_back({names[arg], [arg](Rng& rng) {
                       int k = 1;
                       const ConvParams p = random_conv(rng, k);
                       const int c = rng.uniform_int(1, 3), o = rng.uniform_int(1, 3);
                       const int h = rng.uniform_int(5, 7);
                       Tensor x = uniform_tensor({2, c, h, h}, rng);
                       Tensor w = uniform_tensor({o, c, k, k}, rng);
                       Tensor b = uniform_tensor({o}, rng);
                       if (arg == 0) return projected([w, b, p](const Tensor& v) { return conv2d(v, w, b, p); }, x, rng);
                       if (arg == 1) return projected([x, b, p](const Tensor& v) { return conv2d(x, v, b, p); }, w, rng);
                       return projected([x, w, p](const Tensor& v) { return conv2d(x, w, v, p); }, b, rng);
                     }});
  }
  for (int arg = 0; arg < 3; ++arg) {
    static const char* names[] = {"conv2d_transposed/input", "conv2d_transposed/weight",
                                  "conv2d_transposed/bias"};
    cases.push_back({names[arg], [arg](Rng& rng) {
                       const int k = rng.uniform_int(2, 3), s = rng.uniform_int(1, 2), pad = rng.uniform_int(0, 1);
                       const int c = rng.uniform_int(1, 3), o = rng.uniform_int(1, 3);
                       const int h = rng.uniform_int(3, 5);
                       Tensor x = uniform_tensor({2, c, h, h}, rng);
                       Tensor w = uniform_tensor({c, o, k, k}, rng);
                       Tensor b = uniform_tensor({o}, rng);
                       auto op = [s, pad](const Tensor& a, const Tensor& ww, const Tensor& bb) {
                         return conv2d_transposed(a, ww, bb, s, pad);
                       };
                       if (arg == 0) return projected([=](const Tensor& v) { return op(v, w, b); }, x, rng);
                       if (arg == 1) return projected([=](const Tensor& v) { return op(x, v, b); }, w, rng);
                       return projected([=](const Tensor& v) { return op(x, w, v); }, b, rng);
                     }});
  }
  return cases;
}

std::vector<Case> elementwise_cases() {
  std::vector<Case> cases;
  cases.push_back({"max_pool2", [](Rng& rng) {
                     return projected([](const Tensor& v) { return max_pool2(v); },
                                      well_separated({2, 2, 4, 6}, rng), rng);
                   }});
  cases.push_back({"avg_pool2", [](Rng& rng) {
                     return projected([](const Tensor& v) { return avg_pool2(v); },
                                      uniform_tensor({2, 2, 4, 6}, rng), rng);
                   }});
  cases.push_back({"upsample_nearest2", [](Rng& rng) {
                     return projected([](const Tensor& v) { return upsample_nearest2(v); },
                                      uniform_tensor({2, 2, 3, 3}, rng), rng);
                   }});
  for (Activation a : {Activation::identity, Activation::relu, Activation::leaky_relu,
                       Activation::sigmoid, Activation::tanh, Activation::elu}) {
    cases.push_back({std::string("activation/") + activation_name(a), [a](Rng& rng) {
                       Tensor x = away_from_zero(uniform_tensor({2, 3, 3, 3}, rng, -2.0, 2.0), 0.01);
                       return projected([a](const Tensor& v) { return activation(v, a); }, x, rng);
                     }});
  }
  using Binary = Tensor (*)(const Tensor&, const Tensor&);
  const std::pair<const char*, Binary> binaries[] = {{"add", add}, {"sub", sub}, {"mul", mul}};
  for (const auto& [name, op] : binaries) {
    const Binary f = op;
    cases.push_back({std::string(name) + "/a", [f](Rng& rng) {
                       Tensor b = uniform_tensor({3, 4}, rng);
                       return projected([f, b](const Tensor& v) { return f(v, b); }, uniform_tensor({3, 4}, rng), rng);
                     }});
    cases.push_back({std::string(name) + "/b", [f](Rng& rng) {
                       Tensor a = uniform_tensor({3, 4}, rng);
                       return projected([f, a](const Tensor& v) { return f(a, v); }, uniform_tensor({3, 4}, rng), rng);
                     }});
    cases.push_back({std::string(name) + "/broadcast", [f](Rng& rng) {
                       Tensor a = uniform_tensor({3, 4}, rng);
                       return projected([f, a](const Tensor& v) { return f(a, v); }, uniform_tensor({1}, rng), rng);
                     }});
  }
  cases.push_back({"scale", [](Rng& rng) {
                     const double k = rng.uniform(-2.0, 2.0);
                     return projected([k](const Tensor& v) { return scale(v, k); }, uniform_tensor({5}, rng), rng);
                   }});
  cases.push_back({"add_scalar", [](Rng& rng) {
                     const double k = rng.uniform(-2.0, 2.0);
                     return projected([k](const Tensor& v) { return add_scalar(v, k); }, uniform_tensor({5}, rng), rng);
                   }});
  cases.push_back({"square", [](Rng& rng) {
                     return projected([](const Tensor& v) { return square(v); }, uniform_tensor({2, 5}, rng), rng);
                   }});
  cases.push_back({"concat", [](Rng& rng) {
                     Tensor a = uniform_tensor({2, 1, 3, 3}, rng), c = uniform_tensor({2, 3, 3, 3}, rng);
                     return projected([a, c](const Tensor& v) { return concat({a, v, c}); },
                                      uniform_tensor({2, 2, 3, 3}, rng), rng);
                   }});
  cases.push_back({"reshape", [](Rng& rng) {
                     return projected([](const Tensor& v) { return reshape(v, {3, 8}); },
                                      uniform_tensor({2, 3, 4}, rng), rng);
                   }});
  cases.push_back({"softmax", [](Rng& rng) {
                     return projected([](const Tensor& v) { return softmax(v); },
                                      uniform_tensor({2, 3, 5}, rng, -3.0, 3.0), rng);
                   }});
  cases.push_back({"sum", [](Rng& rng) {
                     return Instance{[](const Tensor& v) { return sum(v); }, uniform_tensor({3, 4}, rng)};
                   }});
  cases.push_back({"mean", [](Rng& rng) {
                     return Instance{[](const Tensor& v) { return mean(v); }, uniform_tensor({3, 4}, rng)};
                   }});
  cases.push_back({"abs_mean", [](Rng& rng) {
                     return Instance{[](const Tensor& v) { return abs_mean(v); },
                                     away_from_zero(uniform_tensor({3, 4}, rng), 0.01)};
                   }});
  cases.push_back({"bce", [](Rng& rng) {
                     Tensor t = random_binary({2, 1, 3, 3}, rng);
                     return Instance{[t](const Tensor& v) { return bce(v, t); },
                                     uniform_tensor({2, 1, 3, 3}, rng, 0.05, 0.95)};
                   }});
  cases.push_back({"smooth3x3", [](Rng& rng) {
                     return projected([](const Tensor& v) { return smooth3x3(v); },
                                      uniform_tensor({2, 2, 4, 5}, rng), rng);
                   }});
  return cases;
}

std::vector<Case> matrix_cases() {
  std::vector<Case> cases;
  for (int ta = 0; ta < 2; ++ta) {
    for (int tb = 0; tb < 2; ++tb) {
      for (int arg = 0; arg < 2; ++arg) {
        const std::string name = "bmm/" + std::string(ta ? "T" : "N") + (tb ? "T" : "N") +
                                 (arg ? "/b" : "/a");
        cases.push_back({name, [ta, tb, arg](Rng& rng) {
                           const int m = rng.uniform_int(1, 4), k = rng.uniform_int(1, 4), n = rng.uniform_int(1, 4);
                           Tensor a = uniform_tensor(ta ? Shape{2, k, m} : Shape{2, m, k}, rng);
                           Tensor b = uniform_tensor(tb ? Shape{2, n, k} : Shape{2, k, n}, rng);
                           if (arg == 0) {
                             return projected([=](const Tensor& v) { return bmm(v, b, ta, tb); }, a, rng);
                           }
                           return projected([=](const Tensor& v) { return bmm(a, v, ta, tb); }, b, rng);
                         }});
      }
    }
  }
  cases.push_back({"matmul/a", [](Rng& rng) {
                     Tensor b = uniform_tensor({4, 3}, rng);
                     return projected([b](const Tensor& v) { return matmul(v, b); }, uniform_tensor({2, 4}, rng), rng);
                   }});
  cases.push_back({"matmul/b", [](Rng& rng) {
                     Tensor a = uniform_tensor({2, 4}, rng);
                     return projected([a](const Tensor& v) { return matmul(a, v); }, uniform_tensor({4, 3}, rng), rng);
                   }});
  for (int arg = 0; arg < 3; ++arg) {
    static const char* names[] = {"linear/input", "linear/weight", "linear/bias"};
    cases.push_back({names[arg], [arg](Rng& rng) {
                       Tensor x = uniform_tensor({3, 5}, rng), w = uniform_tensor({2, 5}, rng), b = uniform_tensor({2}, rng);
                       if (arg == 0) return projected([w, b](const Tensor& v) { return linear(v, w, b); }, x, rng);
                       if (arg == 1) return projected([x, b](const Tensor& v) { return linear(x, v, b); }, w, rng);
                       return projected([x, w](const Tensor& v) { return linear(x, w, v); }, b, rng);
                     }});
  }
  return cases;
}

std::vector<Case> layer_cases() {
  std::vector<Case> cases;
  for (int arg = 0; arg < 3; ++arg) {
    static const char* names[] = {"batch_norm/input", "batch_norm/gamma", "batch_norm/beta"};
    cases.push_back({names[arg], [arg](Rng& rng) {
                       ParamStore store;
                       auto bn = std::make_shared<BatchNorm2d>(store, "bn", 2);
                       bn->gamma.values() = uniform_tensor({2}, rng, 0.5, 1.5).values();
                       bn->beta.values() = uniform_tensor({2}, rng).values();
                       Tensor x = uniform_tensor({3, 2, 3, 3}, rng);
                       auto run = [bn](const Tensor& in, const Tensor& g, const Tensor& b) {
                         BatchNorm2d local = *bn;
                         local.gamma = g;
                         local.beta = b;
                         local.running_mean = bn->running_mean.clone();
                         local.running_var = bn->running_var.clone();
                         return local.forward(in, true);
                       };
                       const Tensor g = bn->gamma.detach(), b = bn->beta.detach();
                       if (arg == 0) return projected([=](const Tensor& v) { return run(v, g, b); }, x, rng);
                       if (arg == 1) return projected([=](const Tensor& v) { return run(x, v, b); }, g, rng);
                       return projected([=](const Tensor& v) { return run(x, g, v); }, b, rng);
                     }});
  }
  cases.push_back({"spectral_norm", [](Rng& rng) {
                     const int rows = rng.uniform_int(2, 5), cols = rng.uniform_int(2, 6);
                     auto sn = std::make_shared<SpectralNorm>(rows, rng, 3);
                     Tensor w = uniform_tensor({rows, cols}, rng);
                     {
                       NoTape untracked;
                       sn->apply(w, true);
                     }
                     return projected([sn](const Tensor& v) { return sn->apply(v, false); }, w, rng);
                   }});
  for (int arg = 0; arg < 3; ++arg) {
    static const char* names[] = {"gated_conv/input", "gated_conv/feature_weight", "gated_conv/gate_weight"};
    cases.push_back({names[arg], [arg](Rng& rng) {
                       ParamStore store;
                       const GatedConvSpec spec{2, 3, 3, rng.uniform_int(1, 2), 1, rng.uniform_int(1, 2), Activation::elu};
                       const GatedConv layer(store, "g", spec, rng);
                       Tensor x = uniform_tensor({2, 2, 5, 5}, rng);
                       if (arg == 0) return projected([layer](const Tensor& v) { return layer.forward(v); }, x, rng);
                       if (arg == 1) {
                         return projected([layer, x](const Tensor& v) {
                           GatedConv l = layer;
                           l.feature_weight = v;
                           return l.forward(x);
                         }, layer.feature_weight.detach(), rng);
                       }
                       return projected([layer, x](const Tensor& v) {
                         GatedConv l = layer;
                         l.gate_weight = v;
                         return l.forward(x);
                       }, layer.gate_weight.detach(), rng);
                     }});
  }
  for (int arg = 0; arg < 2; ++arg) {
    static const char* names[] = {"sn_conv/input", "sn_conv/weight"};
    cases.push_back({names[arg], [arg](Rng& rng) {
                       ParamStore store;
                       auto conv = std::make_shared<SNConv2d>(store, "d", 2, 3, 4, ConvParams{2, 2, 1}, rng, 1);
                       Tensor x = uniform_tensor({2, 2, 6, 6}, rng);
                       {
                         NoTape untracked;
                         conv->forward(x, true);
                       }
                       if (arg == 0) {
                         return projected([conv](const Tensor& v) { return conv->forward(v, false); }, x, rng);
                       }
                       return projected([conv, x](const Tensor& v) {
                         SNConv2d local = *conv;
                         local.weight = v;
                         return local.forward(x, false);
                       }, conv->weight.detach(), rng);
                     }});
  }
  cases.push_back({"dense_block", [](Rng& rng) {
                     ParamStore store;
                     const DenseBlock block(store, "db", DenseBlockSpec{2, 2, {1, 1, 1}, Activation::elu, true}, rng);
                     return projected([block](const Tensor& v) { return block.forward(v); },
                                      uniform_tensor({1, 2, 5, 5}, rng), rng);
                   }});
  cases.push_back({"dilated_dense_block", [](Rng& rng) {
                     ParamStore store;
                     const DenseBlock block(store, "ddb", DenseBlockSpec{2, 2, {2, 4}, Activation::elu, true}, rng);
                     return projected([block](const Tensor& v) { return block.forward(v); },
                                      uniform_tensor({1, 2, 6, 6}, rng), rng);
                   }});
  cases.push_back({"aspp", [](Rng& rng) {
                     ParamStore store;
                     const ASPP aspp(store, "aspp", ASPPSpec{2, 3, {2, 4, 6, 8}}, rng);
                     return projected([aspp](const Tensor& v) { return aspp.forward(v); },
                                      uniform_tensor({1, 2, 5, 5}, rng), rng);
                   }});
  for (int arg = 0; arg < 2; ++arg) {
    static const char* names[] = {"self_attention/input", "self_attention/gamma"};
    cases.push_back({names[arg], [arg](Rng& rng) {
                       ParamStore store;
                       SelfAttention attn(store, "attn", AttentionSpec{4, 2}, rng);
                       attn.gamma.values()[0] = rng.uniform(0.5, 1.5);
                       Tensor x = uniform_tensor({2, 4, 3, 3}, rng);
                       if (arg == 0) return projected([attn](const Tensor& v) { return attn.forward(v).output; }, x, rng);
                       return projected([attn, x](const Tensor& v) {
                         SelfAttention local = attn;
                         local.gamma = v;
                         return local.forward(x).output;
                       }, attn.gamma.detach(), rng);
                     }});
  }
  return cases;
}

std::vector<Case> loss_cases() {
  std::vector<Case> cases;
  cases.push_back({"loss/bce", [](Rng& rng) {
                     Tensor t = random_binary({2, 1, 4, 4}, rng);
                     return Instance{[t](const Tensor& v) { return bce_loss(v, t); },
                                     uniform_tensor({2, 1, 4, 4}, rng, 0.05, 0.95)};
                   }});
  cases.push_back({"loss/rec", [](Rng& rng) {
                     Tensor y = uniform_tensor({2, 3, 4, 4}, rng);
                     Tensor diff = away_from_zero(uniform_tensor({2, 3, 4, 4}, rng), 0.01);
                     return Instance{[y](const Tensor& v) { return rec_loss(v, y); },
                                     Tensor(y.shape(), Vector(y.values() + diff.values()))};
                   }});
  cases.push_back({"loss/perceptual", [](Rng& rng) {
                     auto fx = std::make_shared<FeatureExtractor>(7, 3);
                     Tensor y = uniform_tensor({1, 3, 8, 8}, rng);
                     return Instance{[fx, y](const Tensor& v) { return perceptual_loss(*fx, v, y); },
                                     uniform_tensor({1, 3, 8, 8}, rng)};
                   }});
  cases.push_back({"loss/structure", [](Rng& rng) {
                     const StructureOperator op(5);
                     Tensor y = uniform_tensor({1, 3, 6, 6}, rng);
                     return Instance{[op, y](const Tensor& v) { return structure_loss(op, v, y); },
                                     uniform_tensor({1, 3, 6, 6}, rng)};
                   }});
  for (int arg = 0; arg < 2; ++arg) {
    static const char* names[] = {"loss/d_texture/real", "loss/d_texture/fake"};
    cases.push_back({names[arg], [arg](Rng& rng) {
                       Tensor other = uniform_tensor({4, 1}, rng);
                       if (arg == 0) return Instance{[other](const Tensor& v) { return d_texture_loss(v, other); }, uniform_tensor({4, 1}, rng)};
                       return Instance{[other](const Tensor& v) { return d_texture_loss(other, v); }, uniform_tensor({4, 1}, rng)};
                     }});
  }
  cases.push_back({"loss/d_structure", [](Rng& rng) {
                     Tensor other = uniform_tensor({4, 1}, rng);
                     return Instance{[other](const Tensor& v) { return d_structure_loss(v, other); }, uniform_tensor({4, 1}, rng)};
                   }});
  cases.push_back({"loss/g_adversarial", [](Rng& rng) {
                     Tensor s = uniform_tensor({4, 1}, rng);
                     return Instance{[s](const Tensor& v) {
                                       const auto [t, u] = g_adversarial_loss(v, s);
                                       return add(t, u);
                                     },
                                     uniform_tensor({4, 1}, rng)};
                   }});
  cases.push_back({"loss/total_generator", [](Rng& rng) {
                     const LossWeights w;
                     return Instance{[w](const Tensor& v) {
                                       GeneratorLossTerms t;
                                       t.rec = sum(mul(v, Tensor({5}, Vector::Unit(5, 0))));
                                       t.per = sum(mul(v, Tensor({5}, Vector::Unit(5, 1))));
                                       t.str = sum(mul(v, Tensor({5}, Vector::Unit(5, 2))));
                                       t.adv_t = sum(mul(v, Tensor({5}, Vector::Unit(5, 3))));
                                       t.adv_s = sum(mul(v, Tensor({5}, Vector::Unit(5, 4))));
                                       return total_generator_loss(w, t);
                                     },
                                     uniform_tensor({5}, rng, 0.0, 2.0)};
                   }});
  return cases;
}

}  // namespace

std::vector<CertificationResult> run_certification(std::uint64_t seed, int instances, double tolerance,
                                                   double epsilon) {
  std::vector<Case> cases;
  for (auto group : {conv_cases, elementwise_cases, matrix_cases, layer_cases, loss_cases}) {
    for (Case& c : group()) cases.push_back(std::move(c));
  }
  std::vector<CertificationResult> results;
  for (const Case& c : cases) {
    Rng rng(seed, "certify/" + c.name);
    CertificationResult r;
    r.name = c.name;
    for (int i = 0; i < instances; ++i) {
      const Instance inst = c.make(rng);
      r.max_error = std::max(r.max_error, grad_check(inst.f, inst.point, epsilon));
      ++r.instances;
    }
    r.passed = r.max_error <= tolerance;
    results.push_back(r);
  }
  return results;
}

}  // namespace occ
