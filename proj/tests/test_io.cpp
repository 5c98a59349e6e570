#include "doctest.h"

#include <fstream>

#include "occ/config.hpp"
#include "occ/image_io.hpp"
#include "occ/manifest.hpp"
#include "support.hpp"

using namespace occ;
namespace t = occ::testing;

namespace {

void write_file(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out << bytes;
}

}  // namespace

TEST_CASE("image round trips") {
  const auto dir = t::scratch_dir("images");
  Rng rng(1, "images");

  const Tensor rgb = uniform_tensor({3, 7, 5}, rng, 0.0, 1.0);
  save_image(dir / "a.ppm", rgb);
  const Tensor back = load_image(dir / "a.ppm");
  CHECK(back.shape() == rgb.shape());
  CHECK(t::max_abs_diff(back, rgb) <= 1.0 / 255.0);
  CHECK(t::max_abs_diff(back, rgb) <= 0.5 / 255.0 + 1e-12);

  Tensor mask({1, 6, 9});
  for (int i = 0; i < mask.size(); ++i) mask.data()[i] = rng.uniform() < 0.3 ? 1.0 : 0.0;
  save_image(dir / "m.pgm", mask);
  CHECK(t::bitwise_equal(load_image(dir / "m.pgm"), mask));

  // Already-quantized images survive exactly.
  save_image(dir / "b.ppm", back);
  CHECK(t::bitwise_equal(load_image(dir / "b.ppm"), back));
  CHECK(t::read_bytes(dir / "a.ppm") == t::read_bytes(dir / "b.ppm"));

  CHECK(t::read_bytes(dir / "m.pgm").rfind("P5\n9 6\n255\n", 0) == 0);

  // Out-of-range values clamp.
  save_image(dir / "c.pgm", Tensor({1, 1, 2}, Vector((Vector(2) << -0.5, 1.5).finished())));
  const Tensor c = load_image(dir / "c.pgm");
  CHECK(c.data()[0] == 0.0);
  CHECK(c.data()[1] == 1.0);

  CHECK_THROWS_AS(save_image(dir / "d.ppm", Tensor({2, 3, 3})), ShapeError);
  CHECK_THROWS_AS(save_image(dir / "e.pgm", Tensor({1, 1, 1}, NAN)), NumericError);
  CHECK_THROWS_AS(save_image(dir / "missing" / "x.pgm", mask), IoError);
  CHECK(quantize8(0.5) == 128);
  CHECK(quantize8(-1.0) == 0);
}

TEST_CASE("image headers") {
  const auto dir = t::scratch_dir("headers");
  SUBCASE("comments and small maxval") {
    write_file(dir / "x.pgm", std::string("P5\n# a comment\n2 1\n# another\n3\n") + char(0) + char(3));
    const Tensor x = load_image(dir / "x.pgm");
    CHECK(x.shape() == Shape{1, 1, 2});
    CHECK(x.data()[0] == 0.0);
    CHECK(x.data()[1] == 1.0);
  }
  SUBCASE("malformed files") {
    write_file(dir / "ascii.pgm", "P2\n1 1\n255\n0\n");
    CHECK_THROWS_AS(load_image(dir / "ascii.pgm"), FormatError);
    write_file(dir / "short.ppm", std::string("P6\n2 2\n255\n") + "abc");
    CHECK_THROWS_AS(load_image(dir / "short.ppm"), FormatError);
    write_file(dir / "wide.pgm", "P5\n99999999999999999999 1\n255\n");
    CHECK_THROWS_AS(load_image(dir / "wide.pgm"), FormatError);
    write_file(dir / "maxval.pgm", std::string("P5\n1 1\n65535\n") + "ab");
    CHECK_THROWS_AS(load_image(dir / "maxval.pgm"), FormatError);
    write_file(dir / "over.pgm", std::string("P5\n1 1\n3\n") + char(9));
    CHECK_THROWS_AS(load_image(dir / "over.pgm"), FormatError);
    write_file(dir / "empty.pgm", "");
    CHECK_THROWS_AS(load_image(dir / "empty.pgm"), FormatError);
    CHECK_THROWS_AS(load_image(dir / "nope.pgm"), IoError);
  }
}

TEST_CASE("manifest round trip") {
  const auto dir = t::scratch_dir("manifest");
  Manifest m;
  m.mean_pixel.rgb = {0.1, 1.0 / 3.0, 0.7};
  m.mean_pixel.computed = true;
  m.samples = {{"train", 1, "bg_0.ppm", "mask_0.pgm", "obs_0.ppm"},
               {"eval", 18446744073709551615ull, "bg_1.ppm", "mask_1.pgm", "obs_1.ppm"},
               {"train", 3, "sub/bg_2.ppm", "sub/mask_2.pgm", "sub/obs_2.ppm"}};
  save_manifest(dir / "m.tsv", m);
  const Manifest back = load_manifest(dir / "m.tsv");
  CHECK(back.mean_pixel.computed);
  CHECK(back.mean_pixel.rgb == m.mean_pixel.rgb);
  REQUIRE(back.samples.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back.samples[i].split == m.samples[i].split);
    CHECK(back.samples[i].seed == m.samples[i].seed);
    CHECK(back.samples[i].background == m.samples[i].background);
    CHECK(back.samples[i].mask == m.samples[i].mask);
    CHECK(back.samples[i].observation == m.samples[i].observation);
  }
  CHECK(back.resolve("x.ppm") == dir / "x.ppm");
  CHECK(back.split("train").size() == 2);

  write_file(dir / "bad.tsv", "#meanpixel 0 0 0\nvalidation\t1\ta\tb\tc\n");
  CHECK_THROWS_AS(load_manifest(dir / "bad.tsv"), FormatError);
  write_file(dir / "bad2.tsv", "train\tx\ta\tb\tc\n");
  CHECK_THROWS_AS(load_manifest(dir / "bad2.tsv"), FormatError);
  write_file(dir / "bad3.tsv", "train\t1\ta\tb\n");
  CHECK_THROWS_AS(load_manifest(dir / "bad3.tsv"), FormatError);

  for (double v : {0.1, 1.0 / 3.0, 1e-300, -2.5e17, 0.0}) CHECK(parse_double(format_double(v), "v") == v);
  CHECK_THROWS_AS(parse_double("1.5x", "v"), FormatError);
}

TEST_CASE("config parsing") {
  Config c = Config::parse("# comment\nrate = 0.5\nname=abc # trailing\nlist = 1, 2,3\nflag = true\nrate = 0.25\n");
  CHECK(c.get_double("rate", 0) == 0.25);
  CHECK(c.get_string("name", "") == "abc");
  CHECK(c.get_int_list("list", {}) == std::vector<int>{1, 2, 3});
  CHECK(c.get_bool("flag", false));
  CHECK(c.get_int("missing", 7) == 7);
  c.apply_override("rate=1e-4");
  CHECK(c.get_double("rate", 0) == 1e-4);
  CHECK_THROWS_AS(c.apply_override("rate"), ConfigError);
  CHECK_THROWS_AS(c.get_int("name", 0), ConfigError);
  CHECK_THROWS_AS(c.get_bool("name", false), ConfigError);
  CHECK_THROWS_AS(Config::parse("just words\n"), ConfigError);
  CHECK_THROWS_AS(c.require_known({"rate", "name", "list"}), ConfigError);
  CHECK_NOTHROW(c.require_known({"rate", "name", "list", "flag"}));

  const Config round = Config::parse(c.to_text());
  CHECK(round.values() == c.values());
  CHECK_THROWS_AS(Config::load("/nonexistent/x.cfg"), ConfigError);
}

TEST_CASE("shipped configs parse") {
  for (const char* name : {"desk_seg.cfg", "desk_inpaint.cfg"}) {
    const Config c = Config::load(std::filesystem::path(OCC_SOURCE_DIR) / "configs" / name);
    CHECK(c.get_int("data.count", 0) == 8);
    CHECK(c.get_int("max_steps", 0) > 0);
  }
}
