#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace occ {

struct MeanPixel {
  std::array<double, 3> rgb{};
  bool computed = false;
};

struct Sample {
  std::string split;  // "train" or "eval"
  std::uint64_t seed = 0;
  std::string background;
  std::string mask;
  std::string observation;
};

/// Sample list plus the dataset mean pixel. Paths are stored relative to
/// the manifest's directory.
struct Manifest {
  MeanPixel mean_pixel;
  std::vector<Sample> samples;
  std::filesystem::path base;

  std::vector<Sample> split(const std::string& name) const;
  std::filesystem::path resolve(const std::string& relative) const { return base / relative; }
};

// Tab-separated `split seed background mask observation` lines after a
// `#meanpixel r g b` header.
void save_manifest(const std::filesystem::path& path, const Manifest& manifest);
Manifest load_manifest(const std::filesystem::path& path);

// Shortest decimal text that reads back to the same double.
std::string format_double(double v);
double parse_double(const std::string& text, const std::string& what);

}  // namespace occ
