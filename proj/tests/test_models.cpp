#include "doctest.h"

#include "occ/models.hpp"
#include "support.hpp"

using namespace occ;

namespace {

Tensor checkerboard_mask(int n, int h, int w) {
  Tensor m({n, 1, h, w});
  for (int s = 0; s < n; ++s)
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) m.data()[(s * h + i) * w + j] = (i + j) % 2;
  return m;
}

}  // namespace

TEST_CASE("occnet") {
  Rng rng(1, "occnet");
  OccNet net(OccNetConfig{}, rng);
  CHECK(net.encoder_conv_count() == 13);
  CHECK(net.decoder_conv_count() == 13);
  CHECK(OccNetConfig{1.0, 64}.encoder_channels() ==
        std::vector<int>{64, 64, 128, 128, 256, 256, 256, 512, 512, 512, 512, 512, 512});

  NoTape off;
  const Tensor y = net.forward(uniform_tensor({2, 3, 64, 64}, rng, 0.0, 1.0), false);
  CHECK(y.shape() == Shape{2, 1, 64, 64});
  CHECK((y.values().array() > 0.0).all());
  CHECK((y.values().array() < 1.0).all());
  CHECK(net.forward_count() == 1);

  CHECK_THROWS_AS(net.forward(Tensor({1, 3, 63, 63}), false), ShapeError);
  CHECK_THROWS_AS(net.forward(Tensor({1, 1, 64, 64}), false), ShapeError);

  // Full-size 320 input.
  OccNet wide(OccNetConfig{0.0625, 320}, rng);
  CHECK(wide.forward(uniform_tensor({1, 3, 320, 320}, rng, 0.0, 1.0), false).shape() == Shape{1, 1, 320, 320});
}

TEST_CASE("generator") {
  Rng rng(2, "generator");
  Generator g(GeneratorConfig{}, rng);
  NoTape off;
  const Tensor image = uniform_tensor({2, 3, 64, 64}, rng);
  const Tensor y = g.forward(image, checkerboard_mask(2, 64, 64));
  CHECK(y.shape() == Shape{2, 3, 64, 64});
  CHECK((y.values().array().abs() < 1.0).all());

  const Tensor clear = g.forward(image, Tensor({2, 1, 64, 64}));
  CHECK(clear.values().allFinite());
  CHECK(g.forward_count() == 2);

  Tensor bad = checkerboard_mask(2, 64, 64);
  bad.data()[3] = 0.5;
  CHECK_THROWS(g.forward(image, bad));
  CHECK_THROWS_AS(g.forward(Tensor({1, 3, 62, 62}), Tensor({1, 1, 62, 62})), ShapeError);
  CHECK_THROWS_AS(g.forward(image, Tensor({2, 1, 32, 32})), ShapeError);

  Generator small(GeneratorConfig{4, 4, 2, {2, 4, 6, 8}, 1, Activation::elu}, rng);
  CHECK(small.forward(uniform_tensor({1, 3, 256, 256}, rng), checkerboard_mask(1, 256, 256)).shape() ==
        Shape{1, 3, 256, 256});
}

TEST_CASE("discriminator") {
  Rng rng(3, "discriminator");
  SUBCASE("geometry at 256") {
    DiscriminatorConfig c;
    c.input_size = 256;
    CHECK(c.channels == std::vector<int>{64, 128, 256, 256, 256, 256, 256});
    CHECK(c.strides() == std::vector<int>(7, 2));
    // kernel 4, padding 2: each layer maps n to n / 2 + 1.
    CHECK(c.spatial_trace() == std::vector<int>{129, 65, 33, 17, 9, 5, 3});
  }
  SUBCASE("desk geometry at 64") {
    DiscriminatorConfig c;
    c.channels = {4, 8, 8, 8, 8, 8, 8};
    CHECK(c.strides() == std::vector<int>{2, 2, 2, 2, 2, 1, 1});
    Discriminator d(c, rng);
    const Tensor x = uniform_tensor({3, 3, 64, 64}, rng);
    const std::vector<Shape> shapes = d.trace_shapes(x);
    CHECK(shapes.size() == 7);
    CHECK(shapes.back()[1] == 8);
    NoTape off;
    CHECK(d.forward(x, false).shape() == Shape{3, 1});
    CHECK_THROWS_AS(d.forward(Tensor({1, 3, 32, 32}), false), ShapeError);
  }
  SUBCASE("too small an input collapses") {
    DiscriminatorConfig c;
    c.input_size = 1;
    c.padding = 0;
    CHECK_THROWS_AS(c.spatial_trace(), ShapeError);
  }
}

TEST_CASE("composite output") {
  Rng rng(4, "composite");
  const Tensor raw = uniform_tensor({2, 3, 5, 6}, rng), input = uniform_tensor({2, 3, 5, 6}, rng);
  CHECK(occ::testing::bitwise_equal(composite_output(raw, input, Tensor({2, 1, 5, 6}, 1.0)), raw));
  CHECK(occ::testing::bitwise_equal(composite_output(raw, input, Tensor({2, 1, 5, 6}, 0.0)), input));

  const Tensor m = checkerboard_mask(2, 5, 6);
  const Tensor out = composite_output(raw, input, m);
  for (int s = 0; s < 2; ++s)
    for (int c = 0; c < 3; ++c)
      for (int p = 0; p < 30; ++p) {
        const int i = ((s * 3 + c) * 30) + p;
        const double want = m.data()[s * 30 + p] == 1.0 ? raw.data()[i] : input.data()[i];
        CHECK(out.data()[i] == want);
      }
  CHECK_THROWS_AS(composite_output(raw, input, Tensor({2, 1, 4, 6})), ShapeError);
}
