#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "occ/adam.hpp"
#include "occ/checkpoint.hpp"
#include "occ/config.hpp"
#include "occ/losses.hpp"
#include "occ/manifest.hpp"
#include "occ/models.hpp"
#include "occ/report.hpp"

namespace occ {

struct TrainConfig {
  std::string task;  // "segmentation" or "inpainting"
  std::filesystem::path manifest;
  std::filesystem::path checkpoint = "checkpoint.dfk";
  std::filesystem::path log = "loss.csv";
  double rate = 1e-3;
  int batch_size = 4;
  int epochs = 100;
  int max_steps = 0;  // > 0 overrides the epoch count
  int lr_decay_every = 25;
  int checkpoint_every = 0;  // steps; 0 writes only the final checkpoint
  int eval_every = 0;        // steps; segmentation only
  std::uint64_t seed = 1;
  LossWeights weights;
  std::uint64_t perceptual_seed = 7;
  int structure_iterations = 5;
  OccNetConfig occnet;
  GeneratorConfig generator;
  DiscriminatorConfig discriminator;

  // Task defaults: segmentation 1e-3 for 100 epochs, inpainting 1e-4 for 50.
  static TrainConfig defaults(const std::string& task);
  // Defaults overridden by the config's keys; unknown keys are rejected.
  static TrainConfig from_config(const Config& config, const std::string& task);
  static const std::vector<std::string>& keys();
  void validate() const;
};

struct LogRecord {
  long step = 0;
  std::string term;
  double value = 0.0;
};

struct UpdateCounters {
  long d_texture = 0;
  long d_structure = 0;
  long generator = 0;
};

struct TrainResult {
  long steps = 0;
  int checkpoints_written = 0;
  std::vector<LogRecord> log;
  UpdateCounters counters;
  long frozen_critic_checks = 0;
};

/// In-memory training data: N x 3 x H x W images in [0, 1] and N x 1 x H x W masks.
struct TrainingData {
  std::vector<std::string> paths;  // observation paths, for reports
  Tensor backgrounds;
  Tensor masks;
  Tensor observations;  // backgrounds occluded with the mean pixel
  MeanPixel mean_pixel;

  int size() const { return backgrounds.defined() ? backgrounds.dim(0) : 0; }
};

// An empty split selects every sample.
TrainingData load_training_data(const Manifest& manifest, const std::string& split);
// Rows `indices` of an N x ... tensor.
Tensor gather(const Tensor& batch, const std::vector<int>& indices);

TrainResult train_segmentation(const TrainConfig& config);
TrainResult train_inpainting(const TrainConfig& config);

// Evaluation-mode predictions scored against the masks.
DatasetReport evaluate_segmentation(OccNet& model, const TrainingData& data);

struct InpaintingModels {
  std::unique_ptr<Generator> generator;
  std::unique_ptr<Discriminator> d_texture;
  std::unique_ptr<Discriminator> d_structure;
};

std::unique_ptr<OccNet> restore_occnet(const Checkpoint& checkpoint);
InpaintingModels restore_inpainting(const Checkpoint& checkpoint);
MeanPixel checkpoint_mean_pixel(const Checkpoint& checkpoint);

// Images in [0, 1] to the generator's [-1, 1] range.
Tensor to_signed(const Tensor& image);

}  // namespace occ
