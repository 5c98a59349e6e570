#include "occ/report.hpp"

#include <fstream>
#include <sstream>

#include "occ/image_io.hpp"

namespace occ {

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace

FenceMap to_map(const Tensor& t, int n) {
  const bool single = t.rank() == 3 && t.dim(0) == 1;
  const bool batch = t.rank() == 4 && t.dim(1) == 1 && n >= 0 && n < t.dim(0);
  if (!single && !batch) {
    throw ShapeError("to_map expects 1 x H x W or N x 1 x H x W, got " + to_string(t.shape()));
  }
  const int h = t.dim(-2), w = t.dim(-1);
  const std::ptrdiff_t offset = static_cast<std::ptrdiff_t>(n) * h * w;
  return Eigen::Map<const FenceMap>(t.data() + offset, h, w);
}

ImageMetrics evaluate_map(const std::string& path, const FenceMap& prediction, const FenceMap& truth) {
  const PrecisionRecall pr = precision_recall(adaptive_threshold(prediction), truth);
  ImageMetrics m;
  m.path = path;
  m.precision = pr.precision;
  m.recall = pr.recall;
  m.fmeasure = f_measure(pr.precision, pr.recall);
  m.mae = mae(prediction, truth);
  return m;
}

DatasetReport dataset_report(const std::vector<ReportEntry>& entries) {
  if (entries.empty()) throw Error("dataset_report: no images");
  DatasetReport report;
  report.curve.assign(256, PrecisionRecall{});
  report.aggregate.path = "AGGREGATE";
  for (const ReportEntry& e : entries) {
    const ImageMetrics m = evaluate_map(e.path, e.prediction, e.truth);
    report.images.push_back(m);
    report.aggregate.precision += m.precision;
    report.aggregate.recall += m.recall;
    report.aggregate.fmeasure += m.fmeasure;
    report.aggregate.mae += m.mae;
    const std::vector<PrecisionRecall> curve = pr_curve(e.prediction, e.truth);
    for (std::size_t t = 0; t < curve.size(); ++t) {
      report.curve[t].precision += curve[t].precision;
      report.curve[t].recall += curve[t].recall;
    }
  }
  const double n = static_cast<double>(entries.size());
  report.aggregate.precision /= n;
  report.aggregate.recall /= n;
  report.aggregate.fmeasure /= n;
  report.aggregate.mae /= n;
  for (PrecisionRecall& pr : report.curve) {
    pr.precision /= n;
    pr.recall /= n;
  }
  return report;
}

DatasetReport dataset_report(const Manifest& manifest, const std::map<std::string, FenceMap>& outputs,
                             const std::string& split) {
  std::vector<ReportEntry> entries;
  for (const Sample& s : manifest.samples) {
    if (!split.empty() && s.split != split) continue;
    const auto it = outputs.find(s.observation);
    if (it == outputs.end()) throw Error("dataset_report: no output for " + s.observation);
    entries.push_back({s.observation, it->second, to_map(load_image(manifest.resolve(s.mask)))});
  }
  return dataset_report(entries);
}

void write_report(const std::filesystem::path& path, const DatasetReport& report) {
  std::ostringstream text;
  text << "path,precision,recall,fmeasure,mae\n";
  std::vector<ImageMetrics> rows = report.images;
  rows.push_back(report.aggregate);
  for (const ImageMetrics& m : rows) {
    text << m.path << ',' << format_double(m.precision) << ',' << format_double(m.recall) << ','
         << format_double(m.fmeasure) << ',' << format_double(m.mae) << '\n';
  }
  write_text(path, text.str());
}

void write_pr_curve(const std::filesystem::path& path, const std::vector<PrecisionRecall>& curve) {
  std::ostringstream text;
  for (std::size_t t = 0; t < curve.size(); ++t) {
    text << t << ',' << format_double(curve[t].precision) << ',' << format_double(curve[t].recall)
         << '\n';
  }
  write_text(path, text.str());
}

}  // namespace occ
