#include "doctest.h"

#include <cmath>

#include "occ/grad_check.hpp"
#include "occ/losses.hpp"
#include "support.hpp"

using namespace occ;
using occ::testing::max_abs_diff;

TEST_CASE("tensor handles share storage, clone does not") {
  Tensor a({2, 3}, 1.5);
  Tensor b = a;
  b.data()[0] = 7.0;
  CHECK(a.data()[0] == 7.0);
  Tensor c = a.clone();
  c.data()[1] = -1.0;
  CHECK(a.data()[1] == 1.5);
  CHECK(a.size() == 6);
  CHECK(a.dim(-1) == 3);
  CHECK_THROWS_AS(a.item(), ShapeError);
  CHECK_THROWS_AS(Tensor({2, 2}, Vector::Zero(3)), ShapeError);
}

TEST_CASE("backward of sum(sigmoid(x)) at zero is a quarter everywhere") {
  Tensor x({5}, 0.0);
  x.set_requires_grad(true);
  Tape tape;
  const Tensor loss = sum(sigmoid(x));
  tape.backward(loss);
  for (int i = 0; i < 5; ++i) CHECK(x.grad()[i] == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("backward of mean is 1/n") {
  Rng rng(3, "mean");
  Tensor x = uniform_tensor({7}, rng);
  x.set_requires_grad(true);
  Tape tape;
  tape.backward(mean(x));
  for (int i = 0; i < 7; ++i) CHECK(x.grad()[i] == doctest::Approx(1.0 / 7.0));
}

TEST_CASE("gradients accumulate across uses of the same tensor") {
  Tensor x({1}, 3.0);
  x.set_requires_grad(true);
  Tape tape;
  tape.backward(sum(mul(x, x)));
  CHECK(x.grad()[0] == doctest::Approx(6.0));
}

TEST_CASE("NoTape suspends recording and nested tapes restore the outer one") {
  Tensor x({2}, 1.0);
  x.set_requires_grad(true);
  Tape outer;
  {
    NoTape off;
    const Tensor y = scale(x, 2.0);
    CHECK(Tape::active() == nullptr);
    CHECK(outer.size() == 0);
  }
  {
    Tape inner;
    (void)scale(x, 2.0);
    CHECK(inner.size() == 1);
    CHECK(outer.size() == 0);
  }
  CHECK(Tape::active() == &outer);
  (void)scale(x, 2.0);
  CHECK(outer.size() == 1);
}

TEST_CASE("backward rejects non-scalar losses and a missing tape") {
  Tensor x({3}, 1.0);
  x.set_requires_grad(true);
  {
    Tape tape;
    const Tensor y = scale(x, 2.0);
    CHECK_THROWS_AS(tape.backward(y), ShapeError);
  }
  CHECK_THROWS(backward(sum(x)));
}

TEST_CASE("non-finite values raise a numeric error") {
  Tensor x({2}, 0.0);
  x.data()[0] = NAN;
  CHECK_THROWS_AS(square(x), NumericError);
}

TEST_CASE("conv2d small examples") {
  SUBCASE("scalar product") {
    const Tensor y = conv2d(Tensor({1, 1, 1, 1}, 3.0), Tensor({1, 1, 1, 1}, 2.0), Tensor({1}, 0.0), {});
    CHECK(y.item() == 6.0);
  }
  SUBCASE("3x3 ones with padding 1") {
    const Tensor y = conv2d(Tensor({1, 1, 3, 3}, 1.0), Tensor({1, 1, 3, 3}, 1.0), Tensor(), {1, 1, 1});
    const double want[9] = {4, 6, 4, 6, 9, 6, 4, 6, 4};
    for (int i = 0; i < 9; ++i) CHECK(y.data()[i] == want[i]);
  }
  SUBCASE("shape errors") {
    CHECK_THROWS_AS(conv2d(Tensor({1, 2, 3, 3}), Tensor({1, 1, 3, 3}), Tensor(), {}), ShapeError);
    CHECK_THROWS_AS(conv2d(Tensor({1, 1, 2, 2}), Tensor({1, 1, 3, 3}), Tensor(), {}), ShapeError);
  }
}

TEST_CASE("conv2d matches the naive loop over stride, dilation and padding") {
  const auto r = occ::testing::conv2d_oracle_suite(1);
  CHECK(r.cases >= 50);
  CHECK(r.max_error <= 1e-12);
}

TEST_CASE("conv2d_transposed") {
  SUBCASE("kernel stamping") {
    const Tensor y = conv2d_transposed(Tensor({1, 1, 1, 1}, 1.0), Tensor({1, 1, 2, 2}, 1.0), Tensor(), 2, 0);
    CHECK(y.shape() == Shape{1, 1, 2, 2});
    for (int i = 0; i < 4; ++i) CHECK(y.data()[i] == 1.0);
  }
  SUBCASE("output extent") {
    const Tensor y = conv2d_transposed(Tensor({1, 2, 4, 4}), Tensor({2, 3, 4, 4}), Tensor(), 2, 1);
    CHECK(y.shape() == Shape{1, 3, 8, 8});
  }
  SUBCASE("adjoint of conv2d") {
    Rng rng(5, "adjoint");
    for (int t = 0; t < 60; ++t) {
      const int stride = rng.uniform_int(1, 3), pad = rng.uniform_int(0, 2), k = rng.uniform_int(1, 4);
      const int c = rng.uniform_int(1, 3), o = rng.uniform_int(1, 3);
      // Extents the transposed op maps back onto exactly.
      const int oh = rng.uniform_int(1, 5), ow = rng.uniform_int(1, 5);
      const int h = (oh - 1) * stride + k - 2 * pad, w = (ow - 1) * stride + k - 2 * pad;
      if (h < 1 || w < 1) continue;
      const Tensor x = uniform_tensor({2, c, h, w}, rng);
      const Tensor wt = uniform_tensor({o, c, k, k}, rng);
      const Tensor y = conv2d(x, wt, Tensor(), {stride, pad, 1});
      REQUIRE(y.shape() == Shape{2, o, oh, ow});
      const Tensor r = uniform_tensor(y.shape(), rng);
      // The O x C conv weight read as C_in x C_out for the transposed op.
      const Tensor back = conv2d_transposed(r, wt, Tensor(), stride, pad);
      const double inner = occ::testing::dot(x, back);
      CHECK(std::abs(occ::testing::dot(y, r) - inner) <= 1e-10);
    }
  }
}

TEST_CASE("max_pool2") {
  SUBCASE("window maximum") {
    const Tensor y = max_pool2(Tensor({1, 1, 2, 2}, Vector((Vector(4) << 1, 2, 3, 4).finished())));
    CHECK(y.item() == 4.0);
  }
  SUBCASE("ties send the gradient to the top-left element") {
    Tensor x({1, 1, 2, 2}, 5.0);
    x.set_requires_grad(true);
    Tape tape;
    tape.backward(sum(max_pool2(x)));
    CHECK(x.grad()[0] == 1.0);
    CHECK(x.grad().tail(3).isZero());
  }
  SUBCASE("loop oracle") {
    const auto r = occ::testing::max_pool_oracle_suite(2);
    CHECK(r.cases >= 50);
    CHECK(r.max_error <= 1e-12);
  }
  CHECK_THROWS_AS(max_pool2(Tensor({1, 1, 3, 2})), ShapeError);
}

TEST_CASE("avg_pool2 averages each window") {
  const Tensor y = avg_pool2(Tensor({1, 1, 2, 2}, Vector((Vector(4) << 1, 2, 3, 6).finished())));
  CHECK(y.item() == 3.0);
}

TEST_CASE("upsample_nearest2") {
  const Tensor y = upsample_nearest2(Tensor({1, 1, 1, 1}, 1.0));
  CHECK(y.shape() == Shape{1, 1, 2, 2});
  CHECK((y.values().array() == 1.0).all());
  const Tensor c({1, 2, 4, 4}, 0.375);
  CHECK(max_abs_diff(upsample_nearest2(max_pool2(c)), c) == 0.0);

  Rng rng(9, "upsample");
  const Tensor x = uniform_tensor({2, 3, 3, 5}, rng);
  const Tensor r = uniform_tensor({2, 3, 6, 10}, rng);
  // Adjoint of nearest upsampling is 2x2 sum pooling.
  Tensor pooled({2, 3, 3, 5});
  for (int p = 0; p < 6; ++p)
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 10; ++j) pooled.data()[(p * 3 + i / 2) * 5 + j / 2] += r.data()[(p * 6 + i) * 10 + j];
  CHECK(std::abs(occ::testing::dot(upsample_nearest2(x), r) - occ::testing::dot(x, pooled)) <= 1e-10);
}

TEST_CASE("activations") {
  CHECK(sigmoid(Tensor::scalar(0.0)).item() == 0.5);
  CHECK(relu(Tensor::scalar(-3.0)).item() == 0.0);
  CHECK(relu(Tensor::scalar(3.0)).item() == 3.0);
  CHECK(sigmoid(Tensor::scalar(10.0)).item() == doctest::Approx(1.0 / (1.0 + std::exp(-10.0))).epsilon(1e-15));
  CHECK(std::abs(sigmoid(Tensor::scalar(10.0)).item() - 0.9999546) < 1e-7);
  CHECK(activation(Tensor::scalar(-1.0), Activation::leaky_relu).item() == doctest::Approx(-0.2));
  CHECK(activation(Tensor::scalar(-1.0), Activation::elu).item() == doctest::Approx(std::exp(-1.0) - 1.0));
  CHECK(activation(Tensor::scalar(0.3), Activation::tanh).item() == doctest::Approx(std::tanh(0.3)));
  CHECK(activation(Tensor::scalar(-4.0), Activation::identity).item() == -4.0);
  CHECK(parse_activation("elu") == Activation::elu);
  CHECK_THROWS_AS(parse_activation("swish"), ConfigError);
}

TEST_CASE("elementwise, concat, softmax, matmul") {
  CHECK(softmax(Tensor({2}, 0.0)).data()[0] == 0.5);
  CHECK(concat(Tensor({1, 2, 3, 3}), Tensor({1, 3, 3, 3})).shape() == Shape{1, 5, 3, 3});
  CHECK_THROWS_AS(add(Tensor({2}), Tensor({3})), ShapeError);
  CHECK(add(Tensor({3}, 1.0), Tensor::scalar(2.0)).data()[2] == 3.0);

  const Tensor a({2, 3}, Vector((Vector(6) << 1, 2, 3, 4, 5, 6).finished()));
  const Tensor b({3, 2}, Vector((Vector(6) << 7, 8, 9, 10, 11, 12).finished()));
  const Tensor y = matmul(a, b);
  CHECK(y.data()[0] == 1 * 7 + 2 * 9 + 3 * 11);
  CHECK(y.data()[1] == 1 * 8 + 2 * 10 + 3 * 12);
  CHECK(y.data()[2] == 4 * 7 + 5 * 9 + 6 * 11);
  CHECK(y.data()[3] == 4 * 8 + 5 * 10 + 6 * 12);

  const auto r = occ::testing::matmul_oracle_suite(3);
  CHECK(r.cases >= 50);
  CHECK(r.max_error <= 1e-12);
}

TEST_CASE("bmm transposition flags agree with explicit products") {
  Rng rng(4, "bmm");
  const Tensor a = uniform_tensor({2, 3, 4}, rng), b = uniform_tensor({2, 4, 5}, rng);
  const Tensor y = bmm(a, b);
  for (int s = 0; s < 2; ++s) {
    const RowMatrix am = Eigen::Map<const RowMatrix>(a.data() + s * 12, 3, 4);
    const RowMatrix bm = Eigen::Map<const RowMatrix>(b.data() + s * 20, 4, 5);
    const RowMatrix want = am * bm;
    const RowMatrix at = am.transpose(), bt = bm.transpose();
    const Tensor at_t({1, 4, 3}, Vector(Eigen::Map<const Vector>(at.data(), 12)));
    const Tensor bt_t({1, 5, 4}, Vector(Eigen::Map<const Vector>(bt.data(), 20)));
    const Tensor got = bmm(at_t, bt_t, true, true);
    for (int i = 0; i < 15; ++i) {
      CHECK(std::abs(y.data()[s * 15 + i] - want.data()[i]) < 1e-12);
      CHECK(std::abs(got.data()[i] - want.data()[i]) < 1e-12);
    }
  }
}

TEST_CASE("grad_check") {
  Rng rng(6, "grad_check");
  SUBCASE("linear functions are exact") {
    const Tensor c = uniform_tensor({6}, rng);
    const auto f = [c](const Tensor& x) { return sum(mul(x, c)); };
    CHECK(grad_check(f, uniform_tensor({6}, rng)) <= 1e-10);
  }
  SUBCASE("bce of sigmoid of conv") {
    const Tensor w = uniform_tensor({1, 1, 3, 3}, rng), b = uniform_tensor({1}, rng);
    Tensor target({1, 1, 4, 4});
    for (int i = 0; i < 16; ++i) target.data()[i] = rng.uniform() < 0.5 ? 0.0 : 1.0;
    const auto f = [=](const Tensor& x) { return bce(sigmoid(conv2d(x, w, b, {1, 1, 1})), target); };
    CHECK(grad_check(f, uniform_tensor({1, 1, 4, 4}, rng)) <= 1e-4);
  }
  SUBCASE("gated conv into self-attention") {
    ParamStore store;
    const GatedConv gc(store, "g", GatedConvSpec{2, 4, 3, 1, 1, 1, Activation::elu}, rng);
    SelfAttention attn(store, "a", AttentionSpec{4, 2}, rng);
    attn.gamma.data()[0] = 0.7;
    const Tensor w = uniform_tensor({1, 4, 3, 3}, rng);
    const auto f = [=](const Tensor& x) { return sum(mul(attn.forward(gc.forward(x)).output, w)); };
    CHECK(grad_check(f, uniform_tensor({1, 2, 3, 3}, rng)) <= 1e-4);
  }
}

TEST_CASE("rng streams are reproducible and label-separated") {
  Rng a(11, "x"), b(11, "x"), c(11, "y");
  for (int i = 0; i < 10; ++i) {
    const std::uint64_t va = a.next_u64();
    CHECK(va == b.next_u64());
    CHECK(va != c.next_u64());
  }
  Rng r(11, "x");
  for (int i = 0; i < 5; ++i) r.normal();
  Rng restored = Rng::restore(11, "x", r.counter());
  CHECK(restored.next_u64() == r.next_u64());
  for (int i = 0; i < 1000; ++i) {
    const double u = a.uniform();
    CHECK((u >= 0.0 && u < 1.0));
    const int k = a.uniform_int(-2, 3);
    CHECK((k >= -2 && k <= 3));
  }
}
