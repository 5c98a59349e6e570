#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "occ/manifest.hpp"
#include "occ/rng.hpp"

namespace occ {

struct FenceParams {
  double spacing = 10.0;    // px between parallel wires
  int thickness = 2;        // px
  double angle_deg = 0.0;   // first family; the second is at +90
  double shear = 0.0;       // x += shear * y before banding
  double jitter = 0.0;      // px of random phase; also +-jitter deg on the second family
  double coverage_lo = 0.05;
  double coverage_hi = 0.30;

  void validate() const;
};

struct StrokeParams {
  int strokes = 4;
  int width_min = 3;
  int width_max = 9;
  int vertices = 5;
  double step_min = 4.0;
  double step_max = 16.0;
  // Accepted coverage band; the default accepts everything.
  double coverage_lo = 0.0;
  double coverage_hi = 1.0;

  void validate() const;
};

enum class BackgroundKind { gradient, checker, sinusoid, blob_noise };

BackgroundKind parse_background_kind(const std::string& name);
const char* background_kind_name(BackgroundKind kind);

// Masks are 1 x H x W with values in {0, 1}; 1 marks an occluded pixel.
Tensor gen_fence_mask(const FenceParams& params, int height, int width, Rng& rng);
Tensor gen_freeform_mask(const StrokeParams& params, int height, int width, Rng& rng);
// 3 x H x W in [0, 1].
Tensor gen_background(BackgroundKind kind, int height, int width, Rng& rng);

double coverage(const Tensor& mask);

// Masked pixels take the fill colour; all others are copied bit for bit.
// image is C x H x W or N x C x H x W, mask the same with one channel.
Tensor occlude(const Tensor& image, const Tensor& mask, const MeanPixel& fill);

MeanPixel compute_mean_pixel(const std::vector<Tensor>& images);
// Mean over the train-split backgrounds.
MeanPixel compute_mean_pixel(const Manifest& manifest);

struct DataConfig {
  int count = 8;
  int size = 64;
  std::string mask_kind = "fence";  // or "freeform"
  double train_fraction = 0.75;
  double spacing_min = 10.0;
  double spacing_max = 16.0;
  int thickness_min = 1;
  int thickness_max = 3;
  double angle_range = 45.0;
  double shear_range = 0.2;
  double jitter = 1.0;
  double coverage_lo = 0.05;
  double coverage_hi = 0.30;
  StrokeParams strokes;

  void validate() const;
};

// Writes bg_NNNN.ppm, mask_NNNN.pgm, obs_NNNN.ppm and manifest.tsv under dir.
Manifest build_dataset(const DataConfig& config, const std::filesystem::path& dir,
                       std::uint64_t seed);

}  // namespace occ
