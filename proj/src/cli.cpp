#include "occ/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <optional>

#include "occ/certify.hpp"
#include "occ/config.hpp"
#include "occ/infer.hpp"
#include "occ/synth.hpp"
#include "occ/train.hpp"

namespace occ {

namespace {

struct CommonOptions {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config, "key = value settings file");
  cmd->add_option("--set", o.overrides, "override a setting, key=value")->take_all();
  cmd->add_option("--seed", o.seed, "random seed");
}

Config gather_config(const CommonOptions& o) {
  Config c = o.config.empty() ? Config() : Config::load(o.config);
  for (const std::string& s : o.overrides) c.apply_override(s);
  if (o.seed) c.set("seed", std::to_string(*o.seed));
  return c;
}

DataConfig data_config(const Config& c) {
  static const std::set<std::string> known = {
      "data.count",       "data.size",        "data.mask_kind",   "data.train_fraction",
      "data.spacing_min", "data.spacing_max", "data.thickness_min", "data.thickness_max",
      "data.angle_range", "data.shear_range", "data.jitter",      "data.coverage_lo",
      "data.coverage_hi", "data.strokes",     "data.width_min",   "data.width_max",
      "data.vertices",    "data.step_min",    "data.step_max"};
  for (const auto& [key, value] : c.values()) {
    if (key.rfind("data.", 0) == 0 && known.count(key) == 0) {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
  DataConfig d;
  d.count = c.get_int("data.count", d.count);
  d.size = c.get_int("data.size", d.size);
  d.mask_kind = c.get_string("data.mask_kind", d.mask_kind);
  d.train_fraction = c.get_double("data.train_fraction", d.train_fraction);
  d.spacing_min = c.get_double("data.spacing_min", d.spacing_min);
  d.spacing_max = c.get_double("data.spacing_max", d.spacing_max);
  d.thickness_min = c.get_int("data.thickness_min", d.thickness_min);
  d.thickness_max = c.get_int("data.thickness_max", d.thickness_max);
  d.angle_range = c.get_double("data.angle_range", d.angle_range);
  d.shear_range = c.get_double("data.shear_range", d.shear_range);
  d.jitter = c.get_double("data.jitter", d.jitter);
  d.coverage_lo = c.get_double("data.coverage_lo", d.coverage_lo);
  d.coverage_hi = c.get_double("data.coverage_hi", d.coverage_hi);
  d.strokes.strokes = c.get_int("data.strokes", d.strokes.strokes);
  d.strokes.width_min = c.get_int("data.width_min", d.strokes.width_min);
  d.strokes.width_max = c.get_int("data.width_max", d.strokes.width_max);
  d.strokes.vertices = c.get_int("data.vertices", d.strokes.vertices);
  d.strokes.step_min = c.get_double("data.step_min", d.strokes.step_min);
  d.strokes.step_max = c.get_double("data.step_max", d.strokes.step_max);
  d.validate();
  return d;
}

std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

void report_training(const TrainResult& r, const TrainConfig& cfg, std::ostream& out) {
  out << "steps " << r.steps << ", checkpoints written " << r.checkpoints_written << " ("
      << cfg.checkpoint.string() << "), log " << cfg.log.string() << "\n";
}

}  // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Fence segmentation and image inpainting toolkit", "occ"};
  app.require_subcommand(1);

  CommonOptions make_o, seg_o, inp_o, eval_o, infer_o, grad_o;
  std::string data_out;
  CLI::App* make = app.add_subcommand("make-data", "generate a synthetic dataset");
  add_common(make, make_o);
  make->add_option("--out", data_out, "output directory")->required();

  std::string manifest, checkpoint, log;
  CLI::App* seg = app.add_subcommand("train-seg", "train the occlusion segmenter");
  CLI::App* inp = app.add_subcommand("train-inpaint", "train the inpainting GAN");
  for (auto [cmd, o] : {std::pair{seg, &seg_o}, std::pair{inp, &inp_o}}) {
    add_common(cmd, *o);
    cmd->add_option("--manifest", manifest, "dataset manifest");
    cmd->add_option("--checkpoint", checkpoint, "checkpoint path");
    cmd->add_option("--log", log, "loss log path");
  }

  std::string eval_ckpt, eval_manifest, split = "eval", report_path = "report.csv", curve_path = "pr_curve.csv";
  CLI::App* eval = app.add_subcommand("eval-seg", "score a segmentation checkpoint on a dataset");
  add_common(eval, eval_o);
  eval->add_option("--checkpoint", eval_ckpt, "segmentation checkpoint")->required();
  eval->add_option("--manifest", eval_manifest, "dataset manifest")->required();
  eval->add_option("--split", split, "train, eval or all")->capture_default_str();
  eval->add_option("--report", report_path, "per-image metrics output")->capture_default_str();
  eval->add_option("--curve", curve_path, "PR curve output")->capture_default_str();

  InferOptions infer_opts;
  std::string infer_ckpt, image, mask, seg_ckpt, out_dir = ".", stem = "out";
  CLI::App* inf = app.add_subcommand("infer", "run a checkpoint on one image");
  add_common(inf, infer_o);
  inf->add_option("--checkpoint", infer_ckpt, "segmentation or inpainting checkpoint")->required();
  inf->add_option("--image", image, "input PPM image")->required();
  inf->add_option("--mask", mask, "occlusion mask PGM (inpainting)");
  inf->add_option("--seg-checkpoint", seg_ckpt, "segmentation checkpoint used when no mask is given");
  inf->add_option("--out-dir", out_dir, "output directory")->capture_default_str();
  inf->add_option("--stem", stem, "output file prefix")->capture_default_str();

  int instances = 20;
  CLI::App* grad = app.add_subcommand("grad-check", "finite-difference certification of all gradients");
  add_common(grad, grad_o);
  grad->add_option("--instances", instances, "random instances per operation")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return 2;
  }

  try {
    if (make->parsed()) {
      const Config c = gather_config(make_o);
      const Manifest m = build_dataset(data_config(c), data_out, c.get_u64("seed", 1));
      out << "wrote " << m.samples.size() << " samples to " << data_out << "/manifest.tsv\n";
      return 0;
    }
    if (seg->parsed() || inp->parsed()) {
      Config c = gather_config(seg->parsed() ? seg_o : inp_o);
      if (!manifest.empty()) c.set("manifest", manifest);
      if (!checkpoint.empty()) c.set("checkpoint", checkpoint);
      if (!log.empty()) c.set("log", log);
      const TrainConfig cfg = TrainConfig::from_config(c, seg->parsed() ? "segmentation" : "inpainting");
      const TrainResult r = seg->parsed() ? train_segmentation(cfg) : train_inpainting(cfg);
      report_training(r, cfg, out);
      return 0;
    }
    if (eval->parsed()) {
      gather_config(eval_o);
      if (split != "all" && split != "train" && split != "eval") throw ConfigError("unknown split '" + split + "'");
      auto model = restore_occnet(checkpoint_load(eval_ckpt));
      const Manifest m = load_manifest(eval_manifest);
      const TrainingData data = load_training_data(m, split == "all" ? "" : split);
      const DatasetReport report = evaluate_segmentation(*model, data);
      write_report(report_path, report);
      write_pr_curve(curve_path, report.curve);
      out << "precision " << fixed(report.aggregate.precision) << " recall "
          << fixed(report.aggregate.recall) << " fmeasure " << fixed(report.aggregate.fmeasure)
          << " mae " << fixed(report.aggregate.mae) << " over " << report.images.size() << " images\n";
      return 0;
    }
    if (inf->parsed()) {
      gather_config(infer_o);
      infer_opts.checkpoint = infer_ckpt;
      infer_opts.image = image;
      infer_opts.mask = mask;
      infer_opts.seg_checkpoint = seg_ckpt;
      infer_opts.output_dir = out_dir;
      infer_opts.stem = stem;
      const InferResult r = infer(infer_opts);
      out << r.task << ": segmentation passes " << r.segmentation_passes << ", generator passes "
          << r.generator_passes << "\n";
      for (const auto& p : r.written) out << "wrote " << p.string() << "\n";
      return 0;
    }
    if (grad->parsed()) {
      const Config c = gather_config(grad_o);
      if (instances < 1) throw ConfigError("--instances must be >= 1");
      bool ok = true;
      for (const CertificationResult& r : run_certification(c.get_u64("seed", 2024), instances)) {
        out << r.name << " max_rel_error " << r.max_error << " instances " << r.instances
            << (r.passed ? " PASS" : " FAIL") << "\n";
        ok = ok && r.passed;
      }
      return ok ? 0 : 1;
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace occ
