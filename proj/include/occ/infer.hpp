#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "occ/tensor.hpp"

namespace occ {

struct InferOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path image;
  std::filesystem::path mask;            // optional, inpainting only
  std::filesystem::path seg_checkpoint;  // used when inpainting without a mask
  std::filesystem::path output_dir = ".";
  std::string stem = "out";
};

struct InferResult {
  std::string task;
  long segmentation_passes = 0;
  long generator_passes = 0;
  Tensor probability;  // 1 x H x W, when segmentation ran
  Tensor mask;         // 1 x H x W binary mask used or predicted
  Tensor output;       // 3 x H x W inpainted image, inpainting only
  std::vector<std::filesystem::path> written;
};

// Segmentation checkpoints write <stem>_prob.pgm and <stem>_mask.pgm.
// Inpainting checkpoints write <stem>_inpainted.ppm; without a mask the
// segmentation checkpoint predicts one first and <stem>_mask.pgm is written too.
InferResult infer(const InferOptions& options);

}  // namespace occ
