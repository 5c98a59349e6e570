#pragma once

#include <filesystem>

#include "occ/tensor.hpp"

namespace occ {

// Writes a C x H x W tensor (C = 1 or 3) as binary PGM (P5) or PPM (P6),
// quantizing [0, 1] to 0..255. Values outside [0, 1] are clamped.
void save_image(const std::filesystem::path& path, const Tensor& image);

// Reads P5 or P6 with maxval up to 255; returns C x H x W with values k / maxval.
Tensor load_image(const std::filesystem::path& path);

// 8-bit level nearest to v, v clamped to [0, 1].
int quantize8(double v);

}  // namespace occ
