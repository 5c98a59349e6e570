#include "doctest.h"

#include <cmath>

#include "occ/losses.hpp"
#include "support.hpp"

using namespace occ;

TEST_CASE("bce") {
  CHECK(std::abs(bce_loss(Tensor({1}, 0.5), Tensor({1}, 1.0)).item() - 0.693147) < 1e-6);
  const Tensor y({2}, Vector((Vector(2) << 1, 0).finished()));
  CHECK(std::abs(bce_loss(Tensor({2}, 0.5), y).item() - 0.693147) < 1e-6);
  const Tensor perfect({2}, Vector((Vector(2) << 1, 0).finished()));
  CHECK(bce_loss(perfect, y).item() <= 1.1e-7);
  CHECK_THROWS(bce_loss(Tensor({2}, 0.5), Tensor({2}, 0.3)));
}

TEST_CASE("rec loss") {
  Rng rng(1, "rec");
  const Tensor a = uniform_tensor({2, 3, 4, 5}, rng), b = uniform_tensor({2, 3, 4, 5}, rng);
  CHECK(rec_loss(a, a).item() == 0.0);
  CHECK(rec_loss(add_scalar(a, 0.1), a).item() == doctest::Approx(0.1).epsilon(1e-12));
  double s = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) s += std::abs(a.data()[i] - b.data()[i]);
  CHECK(std::abs(rec_loss(a, b).item() - s / a.size()) <= 1e-12);
  CHECK_THROWS_AS(rec_loss(a, Tensor({2, 3, 4, 4})), ShapeError);
}

TEST_CASE("perceptual loss") {
  Rng rng(2, "perceptual");
  const FeatureExtractor fx(7, 3);
  const Tensor a = uniform_tensor({1, 3, 16, 16}, rng), b = uniform_tensor({1, 3, 16, 16}, rng);
  CHECK(perceptual_loss(fx, a, a).item() == 0.0);
  CHECK(perceptual_loss(fx, a, b).item() == perceptual_loss(fx, b, a).item());

  const std::vector<Tensor> fa = fx.features(a), fb = fx.features(b);
  REQUIRE(fa.size() == 3);
  CHECK(fa[0].shape() == Shape{1, 8, 8, 8});
  CHECK(fa[1].shape() == Shape{1, 16, 4, 4});
  CHECK(fa[2].shape() == Shape{1, 16, 2, 2});
  double parts = 0.0;
  for (int i = 0; i < 3; ++i) parts += rec_loss(fa[i], fb[i]).item();
  CHECK(std::abs(perceptual_loss(fx, a, b).item() - parts / 3.0) <= 1e-12);

  // Same seed, same features.
  const FeatureExtractor again(7, 3);
  CHECK(occ::testing::bitwise_equal(again.features(a)[2], fa[2]));
  const FeatureExtractor other(8, 3);
  CHECK_FALSE(occ::testing::bitwise_equal(other.features(a)[2], fa[2]));

  // Only the prediction receives a gradient; the extractor stays frozen.
  Tensor p = a.clone();
  p.set_requires_grad(true);
  Tensor t = b.clone();
  t.set_requires_grad(true);
  Tape tape;
  tape.backward(perceptual_loss(fx, p, t));
  CHECK(p.has_grad());
  CHECK_FALSE(t.has_grad());
}

TEST_CASE("structure loss") {
  Rng rng(3, "structure");
  const StructureOperator op(5);
  const Tensor a = uniform_tensor({2, 3, 7, 9}, rng), b = uniform_tensor({2, 3, 7, 9}, rng);
  CHECK(structure_loss(op, a, a).item() == 0.0);
  CHECK(structure_loss(op, Tensor({1, 3, 6, 6}, 0.8), Tensor({1, 3, 6, 6}, 0.25)).item() ==
        doctest::Approx(0.55).epsilon(1e-12));
  CHECK(std::abs(structure_loss(op, a, b).item() - rec_loss(op.apply(a), op.apply(b)).item()) <= 1e-12);

  SUBCASE("the operator is linear and fixes constants") {
    const Tensor c({1, 2, 5, 5}, 0.3);
    CHECK(occ::testing::max_abs_diff(op.apply(c), c) <= 1e-15);
    const Tensor s = op.apply(add(a, b));
    CHECK(occ::testing::max_abs_diff(s, add(op.apply(a), op.apply(b))) <= 1e-12);
  }
  SUBCASE("one smoothing pass against a direct 3x3 average") {
    const Tensor x = uniform_tensor({1, 1, 4, 5}, rng);
    const Tensor y = smooth3x3(x);
    const double tap[3] = {1, 2, 1};
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 5; ++j) {
        double acc = 0.0, norm = 0.0;
        for (int a2 = -1; a2 <= 1; ++a2)
          for (int b2 = -1; b2 <= 1; ++b2) {
            if (i + a2 < 0 || i + a2 >= 4 || j + b2 < 0 || j + b2 >= 5) continue;
            const double w = tap[a2 + 1] * tap[b2 + 1];
            acc += w * x.data()[(i + a2) * 5 + j + b2];
            norm += w;
          }
        CHECK(std::abs(y.data()[i * 5 + j] - acc / norm) <= 1e-15);
      }
  }
}

TEST_CASE("least-squares adversarial losses") {
  CHECK(d_texture_loss(1.0, 0.0) == 0.0);
  CHECK(d_texture_loss(0.0, 1.0) == 1.0);
  CHECK(d_texture_loss(0.5, 0.5) == 0.25);
  CHECK(d_structure_loss(1.0, 0.0) == 0.0);
  CHECK(d_structure_loss(0.0, 1.0) == 1.0);
  CHECK(d_structure_loss(0.5, 0.5) == 0.25);
  CHECK(g_adversarial_loss(1.0, 1.0).first == 0.0);
  CHECK(g_adversarial_loss(0.0, 0.0).second == 0.5);
  CHECK(g_adversarial_loss(0.5, 0.0).first == 0.125);

  // Tensor forms average over the batch.
  const Tensor real({4, 1}, Vector((Vector(4) << 1, 0, 0.5, 1).finished()));
  const Tensor fake({4, 1}, Vector((Vector(4) << 0, 1, 0.5, 0).finished()));
  double want = 0.0;
  for (int i = 0; i < 4; ++i) want += d_texture_loss(real.data()[i], fake.data()[i]);
  CHECK(d_texture_loss(real, fake).item() == doctest::Approx(want / 4.0).epsilon(1e-15));
  CHECK(g_adversarial_loss(fake, real).first.item() == doctest::Approx((0.5 + 0.0 + 0.125 + 0.5) / 4.0));
}

TEST_CASE("total generator loss") {
  const LossWeights w;
  CHECK(w.rec == 1.0);
  CHECK(w.per == 0.01);
  CHECK(w.str == 1.0);
  CHECK(w.adv_t == 0.1);
  CHECK(w.adv_s == 0.1);
  CHECK(total_generator_loss(w, 1, 1, 1, 1, 1) == 2.21);
  CHECK(total_generator_loss(w, 0, 0, 0, 0, 0) == 0.0);
  CHECK(total_generator_loss(LossWeights{1, 0, 0, 0, 0}, 0.3, 5, 5, 5, 5) == 0.3);
  CHECK_THROWS_AS(total_generator_loss(w, 1, NAN, 1, 1, 1), NumericError);
  CHECK_THROWS_AS((LossWeights{1, -0.1, 1, 0.1, 0.1}.validate()), ConfigError);

  const Tensor one = Tensor::scalar(1.0);
  CHECK(total_generator_loss(w, GeneratorLossTerms{one, one, one, one, one}).item() == 2.21);
  try {
    total_generator_loss(w, GeneratorLossTerms{one, one, Tensor::scalar(INFINITY), one, one});
    FAIL("expected a numeric error");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("str") != std::string::npos);
  }
}
