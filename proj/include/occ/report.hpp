#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "occ/manifest.hpp"
#include "occ/metrics.hpp"
#include "occ/tensor.hpp"

namespace occ {

struct ImageMetrics {
  std::string path;
  double precision = 0.0;
  double recall = 0.0;
  double fmeasure = 0.0;
  double mae = 0.0;
};

struct ReportEntry {
  std::string path;
  FenceMap prediction;
  FenceMap truth;
};

struct DatasetReport {
  std::vector<ImageMetrics> images;
  ImageMetrics aggregate;              // arithmetic means, path "AGGREGATE"
  std::vector<PrecisionRecall> curve;  // 256 points, averaged over images
};

// Single-channel H x W view of a 1 x H x W tensor, or of sample n of N x 1 x H x W.
FenceMap to_map(const Tensor& t, int n = 0);

// Adaptive-threshold precision/recall/F plus MAE of the raw map.
ImageMetrics evaluate_map(const std::string& path, const FenceMap& prediction, const FenceMap& truth);

DatasetReport dataset_report(const std::vector<ReportEntry>& entries);
// outputs are keyed by the samples' observation paths; masks are read from disk.
// An empty split selects every sample.
DatasetReport dataset_report(const Manifest& manifest, const std::map<std::string, FenceMap>& outputs,
                             const std::string& split = "");

void write_report(const std::filesystem::path& path, const DatasetReport& report);
void write_pr_curve(const std::filesystem::path& path, const std::vector<PrecisionRecall>& curve);

}  // namespace occ
