#pragma once

#include <Eigen/Core>

#include <cmath>
#include <string>
#include <vector>

#include "occ/error.hpp"

namespace occ {

// H x W map, values in [0, 1].
using FenceMap = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
};

namespace detail {

template <typename A, typename B>
void require_same_extent(const Eigen::DenseBase<A>& a, const Eigen::DenseBase<B>& b, const char* who) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(who) + ": " + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()));
  }
}

inline PrecisionRecall ratios(Eigen::Index hits, Eigen::Index predicted, Eigen::Index truth) {
  // Nothing predicted means no false positives.
  PrecisionRecall pr;
  pr.precision = predicted == 0 ? 1.0 : static_cast<double>(hits) / static_cast<double>(predicted);
  pr.recall = truth == 0 ? (predicted == 0 ? 1.0 : 0.0)
                         : static_cast<double>(hits) / static_cast<double>(truth);
  return pr;
}

}  // namespace detail

// |B n G| / |B| and |B n G| / |G|, counting nonzero entries.
template <typename DB, typename DG>
PrecisionRecall precision_recall(const Eigen::DenseBase<DB>& b, const Eigen::DenseBase<DG>& g) {
  detail::require_same_extent(b, g, "precision_recall");
  const auto bb = b.derived().array() != 0;
  const auto gg = g.derived().array() != 0;
  return detail::ratios((bb && gg).count(), bb.count(), gg.count());
}

inline double f_measure(double precision, double recall, double beta_sq = 0.3) {
  const double denom = beta_sq * precision + recall;
  if (precision == 0.0 && recall == 0.0) return 0.0;
  return (1.0 + beta_sq) * precision * recall / denom;
}

template <typename D>
double mean_value(const Eigen::DenseBase<D>& b) {
  return b.derived().template cast<double>().sum() / static_cast<double>(b.size());
}

// 1 where b > k * mean(b), else 0.
template <typename D>
FenceMap adaptive_threshold(const Eigen::DenseBase<D>& b, double k = 1.0) {
  const double t = k * mean_value(b);
  return (b.derived().template cast<double>().array() > t).template cast<double>();
}

template <typename DB, typename DG>
double mae(const Eigen::DenseBase<DB>& b, const Eigen::DenseBase<DG>& g) {
  detail::require_same_extent(b, g, "mae");
  return (b.derived().template cast<double>().array() - g.derived().template cast<double>().array())
             .abs()
             .sum() /
         static_cast<double>(b.size());
}

// Precision/recall of (b > t / 255) against g for t = 0..255.
template <typename DB, typename DG>
std::vector<PrecisionRecall> pr_curve(const Eigen::DenseBase<DB>& b, const Eigen::DenseBase<DG>& g) {
  detail::require_same_extent(b, g, "pr_curve");
  const FenceMap bm = b.derived().template cast<double>();
  const auto gg = g.derived().array() != 0;
  const Eigen::Index truth = gg.count();
  std::vector<PrecisionRecall> curve;
  curve.reserve(256);
  for (int t = 0; t < 256; ++t) {
    const auto pred = bm.array() > t / 255.0;
    curve.push_back(detail::ratios((pred && gg).count(), pred.count(), truth));
  }
  return curve;
}

}  // namespace occ
