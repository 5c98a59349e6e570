#include "doctest.h"

#include <sstream>

#include "occ/cli.hpp"
#include "support.hpp"

using namespace occ;
namespace t = occ::testing;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "occ");
  std::vector<const char*> argv;
  for (const std::string& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

}  // namespace

TEST_CASE("help and usage errors") {
  const Run help = run({"--help"});
  CHECK(help.code == 0);
  for (const char* cmd : {"make-data", "train-seg", "train-inpaint", "eval-seg", "infer", "grad-check"}) {
    CHECK(help.out.find(cmd) != std::string::npos);
  }
  CHECK(run({"train-seg", "--help"}).code == 0);
  CHECK(run({}).code == 2);
  CHECK(run({"frobnicate"}).code == 2);
  CHECK(run({"make-data"}).code == 2);
  CHECK(run({"eval-seg", "--checkpoint", "x"}).code == 2);
}

TEST_CASE("configuration errors exit with 2") {
  const auto dir = t::scratch_dir("cli_config");
  const Run bad_key = run({"make-data", "--out", (dir / "d").string(), "--set", "data.colour=red"});
  CHECK(bad_key.code == 2);
  CHECK(bad_key.err.find("data.colour") != std::string::npos);
  CHECK(run({"train-seg", "--set", "learning_rate=1", "--manifest", "m.tsv"}).code == 2);
  CHECK(run({"train-seg", "--config", (dir / "missing.cfg").string()}).code == 2);
  CHECK(run({"grad-check", "--instances", "0"}).code == 2);
}

TEST_CASE("make-data, train-seg, eval-seg and infer") {
  const auto dir = t::scratch_dir("cli_pipeline");
  const std::string data = (dir / "data").string();
  const Run made = run({"make-data", "--out", data, "--seed", "4", "--set", "data.count=4",
                        "data.train_fraction=0.5"});
  REQUIRE(made.code == 0);
  CHECK(made.out.find("wrote 4 samples") != std::string::npos);

  const std::string ckpt = (dir / "seg.dfk").string();
  const Run trained = run({"train-seg", "--manifest", data + "/manifest.tsv", "--checkpoint", ckpt, "--log",
                           (dir / "seg.csv").string(), "--set", "max_steps=2", "batch_size=2",
                           "occnet.width_multiplier=0.0625"});
  REQUIRE(trained.code == 0);
  CHECK(trained.out.find("steps 2") != std::string::npos);

  const Run eval = run({"eval-seg", "--checkpoint", ckpt, "--manifest", data + "/manifest.tsv", "--split", "all",
                        "--report", (dir / "r.csv").string(), "--curve", (dir / "c.csv").string()});
  REQUIRE(eval.code == 0);
  CHECK(eval.out.find("over 4 images") != std::string::npos);
  CHECK(t::read_bytes(dir / "r.csv").find("AGGREGATE") != std::string::npos);
  CHECK(run({"eval-seg", "--checkpoint", ckpt, "--manifest", data + "/manifest.tsv", "--split", "test"}).code == 2);

  const Run inf = run({"infer", "--checkpoint", ckpt, "--image", data + "/obs_0000.ppm", "--out-dir",
                       (dir / "out").string()});
  REQUIRE(inf.code == 0);
  CHECK(inf.out.find("segmentation passes 1") != std::string::npos);
  CHECK(std::filesystem::exists(dir / "out" / "out_mask.pgm"));

  const Run missing = run({"infer", "--checkpoint", (dir / "none.dfk").string(), "--image", data + "/obs_0000.ppm"});
  CHECK(missing.code == 1);
  CHECK(missing.err.rfind("error: ", 0) == 0);
}

TEST_CASE("grad-check reports one line per operation") {
  const Run r = run({"grad-check", "--instances", "1"});
  CHECK(r.code == 0);
  CHECK(r.out.find("conv2d") != std::string::npos);
  CHECK(r.out.find("perceptual") != std::string::npos);
  CHECK(r.out.find("FAIL") == std::string::npos);
}
