#include "occ/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "occ/image_io.hpp"
#include "occ/synth.hpp"

namespace occ {

namespace {

class LossLog {
 public:
  LossLog(const std::filesystem::path& path, std::vector<LogRecord>& records)
      : out_(path, std::ios::binary), records_(records), path_(path) {
    if (!out_) throw IoError("cannot open log " + path.string());
    out_ << "step,term,value\n";
  }

  void add(long step, const std::string& term, double value) {
    records_.push_back({step, term, value});
    out_ << step << ',' << term << ',' << format_double(value) << '\n';
    out_.flush();
    if (!out_) throw IoError("write failed for " + path_.string());
  }

 private:
  std::ofstream out_;
  std::vector<LogRecord>& records_;
  std::filesystem::path path_;
};

// Fixed shuffling schedule: a fresh permutation at the start of every epoch.
class BatchPlan {
 public:
  BatchPlan(int samples, int batch, Rng& rng) : samples_(samples), batch_(batch), rng_(rng) {}

  int steps_per_epoch() const { return (samples_ + batch_ - 1) / batch_; }

  std::vector<int> indices(long step) {
    const int slot = static_cast<int>(step % steps_per_epoch());
    if (slot == 0 || order_.empty()) {
      order_.resize(static_cast<std::size_t>(samples_));
      std::iota(order_.begin(), order_.end(), 0);
      for (int i = samples_ - 1; i > 0; --i) std::swap(order_[i], order_[rng_.uniform_int(0, i)]);
    }
    const int begin = slot * batch_;
    const int end = std::min(samples_, begin + batch_);
    return std::vector<int>(order_.begin() + begin, order_.begin() + end);
  }

 private:
  int samples_;
  int batch_;
  Rng& rng_;
  std::vector<int> order_;
};

void require_finite(double value, const char* term, long step) {
  if (!std::isfinite(value)) {
    throw NumericError("non-finite " + std::string(term) + " loss at step " + std::to_string(step));
  }
}

std::string mean_pixel_text(const MeanPixel& mp) {
  return format_double(mp.rgb[0]) + " " + format_double(mp.rgb[1]) + " " + format_double(mp.rgb[2]);
}

void write_common_meta(Config& meta, const TrainConfig& cfg, const MeanPixel& mp, const Rng& rng,
                       long step, int epoch) {
  meta.set("task", cfg.task);
  meta.set("seed", std::to_string(cfg.seed));
  meta.set("step", std::to_string(step));
  meta.set("epoch", std::to_string(epoch));
  meta.set("rng.seed", std::to_string(rng.seed()));
  meta.set("rng.label", rng.label());
  meta.set("rng.count", std::to_string(rng.counter()));
  meta.set("mean_pixel", mean_pixel_text(mp));
}

OptimizerRecord record_of(const std::string& name, const Adam& opt) { return {name, opt.state()}; }

Checkpoint segmentation_checkpoint(const TrainConfig& cfg, const OccNet& model, const Adam& opt,
                                   const MeanPixel& mp, const Rng& rng, long step, int epoch) {
  Checkpoint cp;
  write_common_meta(cp.meta, cfg, mp, rng, step, epoch);
  write_config(cp.meta, model.config());
  export_store(model.store(), "occnet.", cp);
  cp.optimizers.push_back(record_of("occnet", opt));
  return cp;
}

Checkpoint inpainting_checkpoint(const TrainConfig& cfg, const InpaintingModels& m, const Adam& g,
                                 const Adam& dt, const Adam& ds, const MeanPixel& mp, const Rng& rng,
                                 long step, int epoch) {
  Checkpoint cp;
  write_common_meta(cp.meta, cfg, mp, rng, step, epoch);
  cp.meta.set("lambda.rec", format_double(cfg.weights.rec));
  cp.meta.set("lambda.per", format_double(cfg.weights.per));
  cp.meta.set("lambda.str", format_double(cfg.weights.str));
  cp.meta.set("lambda.adv_t", format_double(cfg.weights.adv_t));
  cp.meta.set("lambda.adv_s", format_double(cfg.weights.adv_s));
  cp.meta.set("perceptual_seed", std::to_string(cfg.perceptual_seed));
  cp.meta.set("structure_iterations", std::to_string(cfg.structure_iterations));
  write_config(cp.meta, m.generator->config());
  write_config(cp.meta, m.d_texture->config());
  export_store(m.generator->store(), "generator.", cp);
  export_store(m.d_texture->store(), "dtex.", cp);
  export_store(m.d_structure->store(), "dstr.", cp);
  cp.optimizers.push_back(record_of("generator", g));
  cp.optimizers.push_back(record_of("dtex", dt));
  cp.optimizers.push_back(record_of("dstr", ds));
  return cp;
}

long total_steps(const TrainConfig& cfg, int steps_per_epoch) {
  return cfg.max_steps > 0 ? cfg.max_steps : static_cast<long>(cfg.epochs) * steps_per_epoch;
}

std::filesystem::path last_good_path(const std::filesystem::path& checkpoint) {
  std::filesystem::path p = checkpoint;
  p += ".lastgood";
  return p;
}

}  // namespace

TrainConfig TrainConfig::defaults(const std::string& task) {
  TrainConfig c;
  c.task = task;
  if (task == "segmentation") {
    c.rate = 1e-3;
    c.epochs = 100;
  } else if (task == "inpainting") {
    c.rate = 1e-4;
    c.epochs = 50;
  } else {
    throw ConfigError("unknown task '" + task + "'");
  }
  return c;
}

const std::vector<std::string>& TrainConfig::keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k = {"manifest",       "checkpoint",  "log",
                                  "rate",           "batch_size",  "epochs",
                                  "max_steps",      "lr_decay_every", "checkpoint_every",
                                  "eval_every",     "seed",        "lambda.rec",
                                  "lambda.per",     "lambda.str",  "lambda.adv_t",
                                  "lambda.adv_s",   "perceptual_seed", "structure_iterations"};
    for (const std::string& m : model_config_keys()) k.push_back(m);
    return k;
  }();
  return keys;
}

TrainConfig TrainConfig::from_config(const Config& config, const std::string& task) {
  for (const auto& [key, value] : config.values()) {
    if (key.rfind("data.", 0) == 0) continue;
    if (std::find(keys().begin(), keys().end(), key) == keys().end()) {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
  TrainConfig c = defaults(task);
  c.manifest = config.get_string("manifest", c.manifest.string());
  c.checkpoint = config.get_string("checkpoint", c.checkpoint.string());
  c.log = config.get_string("log", c.log.string());
  c.rate = config.get_double("rate", c.rate);
  c.batch_size = config.get_int("batch_size", c.batch_size);
  c.epochs = config.get_int("epochs", c.epochs);
  c.max_steps = config.get_int("max_steps", c.max_steps);
  c.lr_decay_every = config.get_int("lr_decay_every", c.lr_decay_every);
  c.checkpoint_every = config.get_int("checkpoint_every", c.checkpoint_every);
  c.eval_every = config.get_int("eval_every", c.eval_every);
  c.seed = config.get_u64("seed", c.seed);
  c.weights.rec = config.get_double("lambda.rec", c.weights.rec);
  c.weights.per = config.get_double("lambda.per", c.weights.per);
  c.weights.str = config.get_double("lambda.str", c.weights.str);
  c.weights.adv_t = config.get_double("lambda.adv_t", c.weights.adv_t);
  c.weights.adv_s = config.get_double("lambda.adv_s", c.weights.adv_s);
  c.perceptual_seed = config.get_u64("perceptual_seed", c.perceptual_seed);
  c.structure_iterations = config.get_int("structure_iterations", c.structure_iterations);
  c.occnet = read_occnet_config(config);
  c.generator = read_generator_config(config);
  c.discriminator = read_discriminator_config(config);
  c.validate();
  return c;
}

void TrainConfig::validate() const {
  if (task != "segmentation" && task != "inpainting") throw ConfigError("unknown task '" + task + "'");
  if (!(rate > 0.0) || !std::isfinite(rate)) throw ConfigError("rate must be > 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (max_steps < 0) throw ConfigError("max_steps must be >= 0");
  if (lr_decay_every < 1) throw ConfigError("lr_decay_every must be >= 1");
  if (checkpoint_every < 0 || eval_every < 0) throw ConfigError("cadences must be >= 0");
  if (structure_iterations < 0) throw ConfigError("structure_iterations must be >= 0");
  if (manifest.empty()) throw ConfigError("no manifest given");
  weights.validate();
}

Tensor to_signed(const Tensor& image) {
  return Tensor(image.shape(), Vector((2.0 * image.values().array() - 1.0).matrix()));
}

Tensor gather(const Tensor& batch, const std::vector<int>& indices) {
  Shape shape = batch.shape();
  const Eigen::Index row = batch.size() / shape[0];
  shape[0] = static_cast<int>(indices.size());
  Tensor out(shape);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] < 0 || indices[k] >= batch.dim(0)) throw ShapeError("gather: index out of range");
    out.values().segment(static_cast<Eigen::Index>(k) * row, row) =
        batch.values().segment(indices[k] * row, row);
  }
  return out;
}

TrainingData load_training_data(const Manifest& manifest, const std::string& split) {
  TrainingData data;
  data.mean_pixel = manifest.mean_pixel.computed ? manifest.mean_pixel : compute_mean_pixel(manifest);
  const std::vector<Sample> samples = split.empty() ? manifest.samples : manifest.split(split);
  if (samples.empty()) return data;
  std::vector<Tensor> images, masks;
  int h = 0, w = 0;
  for (const Sample& s : samples) {
    Tensor bg = load_image(manifest.resolve(s.background));
    Tensor mask = load_image(manifest.resolve(s.mask));
    if (bg.dim(0) != 3) throw ShapeError(s.background + ": expected an RGB image");
    if (mask.dim(0) != 1) throw ShapeError(s.mask + ": expected a grayscale mask");
    if (mask.dim(1) != bg.dim(1) || mask.dim(2) != bg.dim(2)) {
      throw ShapeError(s.mask + ": size differs from " + s.background);
    }
    if (images.empty()) {
      h = bg.dim(1);
      w = bg.dim(2);
    } else if (bg.dim(1) != h || bg.dim(2) != w) {
      throw ShapeError(s.background + ": all samples must share one size");
    }
    for (Eigen::Index i = 0; i < mask.size(); ++i) {
      if (mask.data()[i] != 0.0 && mask.data()[i] != 1.0) throw Error(s.mask + ": mask is not binary");
    }
    images.push_back(bg);
    masks.push_back(mask);
    data.paths.push_back(s.observation);
  }
  const int n = static_cast<int>(images.size());
  data.backgrounds = Tensor({n, 3, h, w});
  data.masks = Tensor({n, 1, h, w});
  for (int i = 0; i < n; ++i) {
    data.backgrounds.values().segment(static_cast<Eigen::Index>(i) * 3 * h * w, 3 * h * w) = images[i].values();
    data.masks.values().segment(static_cast<Eigen::Index>(i) * h * w, h * w) = masks[i].values();
  }
  data.observations = occlude(data.backgrounds, data.masks, data.mean_pixel);
  return data;
}

DatasetReport evaluate_segmentation(OccNet& model, const TrainingData& data) {
  if (data.size() == 0) throw Error("evaluate_segmentation: no samples");
  NoTape untracked;
  std::vector<ReportEntry> entries;
  for (int i = 0; i < data.size(); ++i) {
    const Tensor pred = model.forward(gather(data.observations, {i}), false);
    entries.push_back({data.paths[static_cast<std::size_t>(i)], to_map(pred, 0), to_map(data.masks, i)});
  }
  return dataset_report(entries);
}

TrainResult train_segmentation(const TrainConfig& cfg) {
  cfg.validate();
  if (cfg.task != "segmentation") throw ConfigError("train_segmentation needs task = segmentation");
  const Manifest manifest = load_manifest(cfg.manifest);
  const TrainingData train = load_training_data(manifest, "train");
  if (train.size() == 0) throw Error(cfg.manifest.string() + ": no train samples");
  const TrainingData eval = load_training_data(manifest, "eval");

  Rng init(cfg.seed, "occnet");
  OccNet model(cfg.occnet, init);
  Adam opt(model.store().parameters(), cfg.rate);
  Rng shuffle(cfg.seed, "shuffle");
  BatchPlan plan(train.size(), cfg.batch_size, shuffle);

  TrainResult result;
  LossLog log(cfg.log, result.log);
  const long steps = total_steps(cfg, plan.steps_per_epoch());
  long saved_at = -1;
  int epoch = 0;
  for (long step = 0; step < steps; ++step) {
    epoch = static_cast<int>(step / plan.steps_per_epoch());
    try {
      const std::vector<int> idx = plan.indices(step);
      opt.set_rate(lr_schedule(epoch, cfg.rate, cfg.lr_decay_every));
      model.store().zero_grad();
      double value = 0.0;
      {
        Tape tape;
        const Tensor loss = bce_loss(model.forward(gather(train.observations, idx), true),
                                     gather(train.masks, idx));
        value = loss.item();
        require_finite(value, "bce", step);
        tape.backward(loss);
      }
      opt.step();
      log.add(step, "bce", value);
    } catch (const NumericError& e) {
      checkpoint_save(last_good_path(cfg.checkpoint),
                      segmentation_checkpoint(cfg, model, opt, train.mean_pixel, shuffle, step, epoch));
      throw NumericError(std::string(e.what()) + "; last good state saved to " +
                         last_good_path(cfg.checkpoint).string());
    }
    result.steps = step + 1;
    if (cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0 && eval.size() > 0) {
      const DatasetReport report = evaluate_segmentation(model, eval);
      log.add(step, "eval_fmeasure", report.aggregate.fmeasure);
      log.add(step, "eval_mae", report.aggregate.mae);
    }
    if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0) {
      checkpoint_save(cfg.checkpoint,
                      segmentation_checkpoint(cfg, model, opt, train.mean_pixel, shuffle, step + 1, epoch));
      ++result.checkpoints_written;
      saved_at = step + 1;
    }
  }
  if (saved_at != result.steps) {
    checkpoint_save(cfg.checkpoint,
                    segmentation_checkpoint(cfg, model, opt, train.mean_pixel, shuffle, result.steps, epoch));
    ++result.checkpoints_written;
  }
  return result;
}

TrainResult train_inpainting(const TrainConfig& cfg) {
  cfg.validate();
  if (cfg.task != "inpainting") throw ConfigError("train_inpainting needs task = inpainting");
  const Manifest manifest = load_manifest(cfg.manifest);
  const TrainingData train = load_training_data(manifest, "train");
  if (train.size() == 0) throw Error(cfg.manifest.string() + ": no train samples");
  if (train.backgrounds.dim(2) != cfg.discriminator.input_size ||
      train.backgrounds.dim(3) != cfg.discriminator.input_size) {
    throw ShapeError("images are " + std::to_string(train.backgrounds.dim(2)) + "x" +
                     std::to_string(train.backgrounds.dim(3)) + " but discriminator.input_size is " +
                     std::to_string(cfg.discriminator.input_size));
  }

  InpaintingModels m;
  {
    Rng g_init(cfg.seed, "generator"), t_init(cfg.seed, "dtex"), s_init(cfg.seed, "dstr");
    m.generator = std::make_unique<Generator>(cfg.generator, g_init);
    m.d_texture = std::make_unique<Discriminator>(cfg.discriminator, t_init);
    m.d_structure = std::make_unique<Discriminator>(cfg.discriminator, s_init);
  }
  Generator& gen = *m.generator;
  Discriminator& dt = *m.d_texture;
  Discriminator& ds = *m.d_structure;
  Adam opt_g(gen.store().parameters(), cfg.rate);
  Adam opt_dt(dt.store().parameters(), cfg.rate);
  Adam opt_ds(ds.store().parameters(), cfg.rate);
  const FeatureExtractor extractor(cfg.perceptual_seed, 3);
  const StructureOperator structure(cfg.structure_iterations);
  Rng shuffle(cfg.seed, "shuffle");
  BatchPlan plan(train.size(), cfg.batch_size, shuffle);

  TrainResult result;
  UpdateCounters& n = result.counters;
  LossLog log(cfg.log, result.log);
  const long steps = total_steps(cfg, plan.steps_per_epoch());
  long saved_at = -1;
  int epoch = 0;
  for (long step = 0; step < steps; ++step) {
    epoch = static_cast<int>(step / plan.steps_per_epoch());
    try {
      const std::vector<int> idx = plan.indices(step);
      const Tensor x = to_signed(gather(train.observations, idx));
      const Tensor y = to_signed(gather(train.backgrounds, idx));
      const Tensor mask = gather(train.masks, idx);
      gen.store().zero_grad();
      dt.store().zero_grad();
      ds.store().zero_grad();

      Tape g_tape;
      const Tensor raw = gen.forward(x, mask);
      Tensor fake, fake_s, real_s;
      {
        NoTape untracked;
        fake = composite_output(raw, x, mask).detach();
        fake_s = structure.apply(fake);
        real_s = structure.apply(y);
      }

      // Critics first, each on its own tape.
      if (n.d_texture != n.generator || n.d_structure != n.generator) {
        throw Error("update order violated before step " + std::to_string(step));
      }
      double loss_dt = 0.0, loss_ds = 0.0;
      {
        Tape tape;
        const Tensor l = d_texture_loss(dt.forward(y, true), dt.forward(fake, false));
        loss_dt = l.item();
        require_finite(loss_dt, "d_texture", step);
        tape.backward(l);
      }
      opt_dt.step();
      ++n.d_texture;
      {
        Tape tape;
        const Tensor l = d_structure_loss(ds.forward(real_s, true), ds.forward(fake_s, false));
        loss_ds = l.item();
        require_finite(loss_ds, "d_structure", step);
        tape.backward(l);
      }
      opt_ds.step();
      ++n.d_structure;

      if (n.d_texture != n.generator + 1 || n.d_structure != n.generator + 1) {
        throw Error("update order violated at step " + std::to_string(step));
      }
      const std::uint64_t hash_t = dt.store().parameter_hash();
      const std::uint64_t hash_s = ds.store().parameter_hash();
      const Tensor comp = composite_output(raw, x, mask);
      GeneratorLossTerms terms;
      terms.rec = rec_loss(raw, y);
      terms.per = perceptual_loss(extractor, raw, y);
      terms.str = structure_loss(structure, raw, y);
      std::tie(terms.adv_t, terms.adv_s) =
          g_adversarial_loss(dt.forward(comp, false), ds.forward(structure.apply(comp), false));
      const Tensor total = total_generator_loss(cfg.weights, terms);
      g_tape.backward(total);
      opt_g.step();
      ++n.generator;
      dt.store().zero_grad();
      ds.store().zero_grad();
      if (dt.store().parameter_hash() != hash_t || ds.store().parameter_hash() != hash_s) {
        throw Error("critic parameters changed during the generator update at step " +
                    std::to_string(step));
      }
      ++result.frozen_critic_checks;

      log.add(step, "rec", terms.rec.item());
      log.add(step, "per", terms.per.item());
      log.add(step, "str", terms.str.item());
      log.add(step, "adv_t", terms.adv_t.item());
      log.add(step, "adv_s", terms.adv_s.item());
      log.add(step, "d_texture", loss_dt);
      log.add(step, "d_structure", loss_ds);
    } catch (const NumericError& e) {
      checkpoint_save(last_good_path(cfg.checkpoint),
                      inpainting_checkpoint(cfg, m, opt_g, opt_dt, opt_ds, train.mean_pixel, shuffle,
                                            step, epoch));
      throw NumericError(std::string(e.what()) + "; last good state saved to " +
                         last_good_path(cfg.checkpoint).string());
    }
    result.steps = step + 1;
    if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0) {
      checkpoint_save(cfg.checkpoint, inpainting_checkpoint(cfg, m, opt_g, opt_dt, opt_ds,
                                                            train.mean_pixel, shuffle, step + 1, epoch));
      ++result.checkpoints_written;
      saved_at = step + 1;
    }
  }
  if (saved_at != result.steps) {
    checkpoint_save(cfg.checkpoint, inpainting_checkpoint(cfg, m, opt_g, opt_dt, opt_ds,
                                                          train.mean_pixel, shuffle, result.steps, epoch));
    ++result.checkpoints_written;
  }
  return result;
}

std::unique_ptr<OccNet> restore_occnet(const Checkpoint& checkpoint) {
  require_task(checkpoint, "segmentation");
  Rng scratch(0, "restore");
  auto model = std::make_unique<OccNet>(read_occnet_config(checkpoint.meta), scratch);
  import_store(model->store(), "occnet.", checkpoint);
  return model;
}

InpaintingModels restore_inpainting(const Checkpoint& checkpoint) {
  require_task(checkpoint, "inpainting");
  Rng scratch(0, "restore");
  InpaintingModels m;
  m.generator = std::make_unique<Generator>(read_generator_config(checkpoint.meta), scratch);
  const DiscriminatorConfig dc = read_discriminator_config(checkpoint.meta);
  m.d_texture = std::make_unique<Discriminator>(dc, scratch);
  m.d_structure = std::make_unique<Discriminator>(dc, scratch);
  import_store(m.generator->store(), "generator.", checkpoint);
  import_store(m.d_texture->store(), "dtex.", checkpoint);
  import_store(m.d_structure->store(), "dstr.", checkpoint);
  return m;
}

MeanPixel checkpoint_mean_pixel(const Checkpoint& checkpoint) {
  std::istringstream in(checkpoint.meta.get_string("mean_pixel", ""));
  MeanPixel mp;
  std::string token;
  int k = 0;
  while (in >> token && k < 3) mp.rgb[static_cast<std::size_t>(k++)] = parse_double(token, "mean_pixel");
  if (k != 3) throw CheckpointError("checkpoint has no mean pixel");
  mp.computed = true;
  return mp;
}

}  // namespace occ
