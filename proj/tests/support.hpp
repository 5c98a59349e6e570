#pragma once

// Brute-force reference implementations shared by the unit tests and the
// acceptance runner. Nothing here calls into the library's kernels.

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "occ/layers.hpp"
#include "occ/metrics.hpp"
#include "occ/ops.hpp"
#include "occ/rng.hpp"

namespace occ::testing {

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return INFINITY;
  return a.size() == 0 ? 0.0 : (a.values() - b.values()).cwiseAbs().maxCoeff();
}

inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    if (std::memcmp(a.data() + i, b.data() + i, sizeof(double)) != 0) return false;
  }
  return true;
}

inline std::string read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("occ_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// ---- tensor kernels ----

inline Tensor naive_conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad,
                           int dil) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int o = w.dim(0), k = w.dim(2);
  const int oh = (h + 2 * pad - dil * (k - 1) - 1) / stride + 1;
  const int ow = (wd + 2 * pad - dil * (k - 1) - 1) / stride + 1;
  Tensor y({n, o, oh, ow});
  for (int s = 0; s < n; ++s)
    for (int f = 0; f < o; ++f)
      for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j) {
          double acc = b.defined() ? b.data()[f] : 0.0;
          for (int ch = 0; ch < c; ++ch)
            for (int a = 0; a < k; ++a)
              for (int q = 0; q < k; ++q) {
                const int yy = i * stride - pad + a * dil, xx = j * stride - pad + q * dil;
                if (yy < 0 || yy >= h || xx < 0 || xx >= wd) continue;
                acc += x.data()[((s * c + ch) * h + yy) * wd + xx] *
                       w.data()[((f * c + ch) * k + a) * k + q];
              }
          y.data()[((s * o + f) * oh + i) * ow + j] = acc;
        }
  return y;
}

inline Tensor naive_max_pool2(const Tensor& x) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor y({n, c, h / 2, w / 2});
  for (int p = 0; p < n * c; ++p)
    for (int i = 0; i < h / 2; ++i)
      for (int j = 0; j < w / 2; ++j) {
        double m = -INFINITY;
        for (int a = 0; a < 2; ++a)
          for (int q = 0; q < 2; ++q) m = std::max(m, x.data()[(p * h + 2 * i + a) * w + 2 * j + q]);
        y.data()[(p * (h / 2) + i) * (w / 2) + j] = m;
      }
  return y;
}

inline Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor y({m, n});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int t = 0; t < k; ++t) acc += a.data()[i * k + t] * b.data()[t * n + j];
      y.data()[i * n + j] = acc;
    }
  return y;
}

inline double dot(const Tensor& a, const Tensor& b) { return a.values().dot(b.values()); }

// ---- metrics ----

inline PrecisionRecall naive_precision_recall(const FenceMap& b, const FenceMap& g) {
  long hits = 0, predicted = 0, truth = 0;
  for (Eigen::Index i = 0; i < b.rows(); ++i)
    for (Eigen::Index j = 0; j < b.cols(); ++j) {
      const bool bb = b(i, j) != 0.0, gg = g(i, j) != 0.0;
      predicted += bb;
      truth += gg;
      hits += bb && gg;
    }
  PrecisionRecall pr;
  pr.precision = predicted == 0 ? 1.0 : double(hits) / double(predicted);
  pr.recall = truth == 0 ? (predicted == 0 ? 1.0 : 0.0) : double(hits) / double(truth);
  return pr;
}

inline double naive_mean(const FenceMap& b) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < b.rows(); ++i)
    for (Eigen::Index j = 0; j < b.cols(); ++j) s += b(i, j);
  return s / double(b.rows() * b.cols());
}

inline FenceMap naive_adaptive_threshold(const FenceMap& b, double k) {
  const double t = k * naive_mean(b);
  FenceMap out(b.rows(), b.cols());
  for (Eigen::Index i = 0; i < b.rows(); ++i)
    for (Eigen::Index j = 0; j < b.cols(); ++j) out(i, j) = b(i, j) > t ? 1.0 : 0.0;
  return out;
}

inline double naive_mae(const FenceMap& b, const FenceMap& g) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < b.rows(); ++i)
    for (Eigen::Index j = 0; j < b.cols(); ++j) s += std::abs(b(i, j) - g(i, j));
  return s / double(b.rows() * b.cols());
}

inline std::vector<PrecisionRecall> naive_pr_curve(const FenceMap& b, const FenceMap& g) {
  std::vector<PrecisionRecall> out;
  for (int t = 0; t < 256; ++t) {
    FenceMap bin(b.rows(), b.cols());
    for (Eigen::Index i = 0; i < b.rows(); ++i)
      for (Eigen::Index j = 0; j < b.cols(); ++j) bin(i, j) = b(i, j) > t / 255.0 ? 1.0 : 0.0;
    out.push_back(naive_precision_recall(bin, g));
  }
  return out;
}

inline FenceMap random_map(int h, int w, Rng& rng) {
  FenceMap m(h, w);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform();
  return m;
}

inline FenceMap random_binary_map(int h, int w, Rng& rng, double p = 0.5) {
  FenceMap m(h, w);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform() < p ? 1.0 : 0.0;
  return m;
}

// Quantized to k / 255 so pr_curve thresholds land on exact ties sometimes.
inline FenceMap random_quantized_map(int h, int w, Rng& rng) {
  FenceMap m(h, w);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform_int(0, 255) / 255.0;
  return m;
}

// ---- oracle suites: worst error and number of cases ----

struct SuiteResult {
  int cases = 0;
  double max_error = 0.0;
  void add(double e) {
    ++cases;
    max_error = std::max(max_error, e);
  }
};

inline SuiteResult conv2d_oracle_suite(std::uint64_t seed) {
  Rng rng(seed, "oracle/conv2d");
  SuiteResult r;
  for (int stride : {1, 2, 3})
    for (int dil : {1, 2, 4})
      for (int pad : {0, 1, 2})
        for (int k : {1, 2, 3}) {
          const int reach = dil * (k - 1) + 1;
          const int n = rng.uniform_int(1, 2), c = rng.uniform_int(1, 3), o = rng.uniform_int(1, 3);
          const int h = std::max(1, reach - 2 * pad) + rng.uniform_int(0, 5);
          const int w = std::max(1, reach - 2 * pad) + rng.uniform_int(0, 5);
          const Tensor x = uniform_tensor({n, c, h, w}, rng);
          const Tensor wt = uniform_tensor({o, c, k, k}, rng);
          const Tensor b = rng.uniform() < 0.5 ? uniform_tensor({o}, rng) : Tensor();
          r.add(max_abs_diff(conv2d(x, wt, b, {stride, pad, dil}), naive_conv2d(x, wt, b, stride, pad, dil)));
        }
  return r;
}

inline SuiteResult max_pool_oracle_suite(std::uint64_t seed, int count = 60) {
  Rng rng(seed, "oracle/max_pool2");
  SuiteResult r;
  for (int t = 0; t < count; ++t) {
    const Tensor x = uniform_tensor({rng.uniform_int(1, 2), rng.uniform_int(1, 3), 2 * rng.uniform_int(1, 5),
                                     2 * rng.uniform_int(1, 5)},
                                    rng);
    r.add(max_abs_diff(max_pool2(x), naive_max_pool2(x)));
  }
  return r;
}

inline SuiteResult matmul_oracle_suite(std::uint64_t seed, int count = 60) {
  Rng rng(seed, "oracle/matmul");
  SuiteResult r;
  for (int t = 0; t < count; ++t) {
    const int m = rng.uniform_int(1, 9), k = rng.uniform_int(1, 9), n = rng.uniform_int(1, 9);
    const Tensor a = uniform_tensor({m, k}, rng), b = uniform_tensor({k, n}, rng);
    r.add(max_abs_diff(matmul(a, b), naive_matmul(a, b)));
  }
  return r;
}

inline SuiteResult adaptive_threshold_oracle_suite(std::uint64_t seed, int count = 60) {
  Rng rng(seed, "oracle/adaptive_threshold");
  SuiteResult r;
  for (int t = 0; t < count; ++t) {
    const FenceMap b = t % 2 ? random_map(rng.uniform_int(1, 12), rng.uniform_int(1, 12), rng)
                             : random_quantized_map(rng.uniform_int(1, 12), rng.uniform_int(1, 12), rng);
    const double k = t % 3 == 0 ? 1.0 : rng.uniform(0.5, 1.5);
    const double mean_err = std::abs(mean_value(b) - naive_mean(b));
    const double map_err = (adaptive_threshold(b, k) - naive_adaptive_threshold(b, k)).abs().maxCoeff();
    r.add(std::max(mean_err, map_err));
  }
  return r;
}

inline SuiteResult mae_oracle_suite(std::uint64_t seed, int count = 60) {
  Rng rng(seed, "oracle/mae");
  SuiteResult r;
  for (int t = 0; t < count; ++t) {
    const int h = rng.uniform_int(1, 12), w = rng.uniform_int(1, 12);
    const FenceMap b = random_map(h, w, rng), g = random_binary_map(h, w, rng);
    r.add(std::abs(mae(b, g) - naive_mae(b, g)));
  }
  return r;
}

// Random pairs plus every pair of 2 x 4 binary maps (2^16 cases).
inline SuiteResult precision_recall_oracle_suite(std::uint64_t seed, int count = 60) {
  Rng rng(seed, "oracle/precision_recall");
  SuiteResult r;
  auto check = [&r](const FenceMap& b, const FenceMap& g) {
    const PrecisionRecall got = precision_recall(b, g), want = naive_precision_recall(b, g);
    r.add(std::max(std::abs(got.precision - want.precision), std::abs(got.recall - want.recall)));
  };
  for (int t = 0; t < count; ++t) {
    const int h = rng.uniform_int(1, 12), w = rng.uniform_int(1, 12);
    check(random_binary_map(h, w, rng, rng.uniform()), random_binary_map(h, w, rng, rng.uniform()));
  }
  FenceMap b(2, 4), g(2, 4);
  for (int bits = 0; bits < (1 << 16); ++bits) {
    for (int i = 0; i < 8; ++i) {
      b.data()[i] = (bits >> i) & 1;
      g.data()[i] = (bits >> (8 + i)) & 1;
    }
    check(b, g);
  }
  return r;
}

inline SuiteResult pr_curve_oracle_suite(std::uint64_t seed, int count = 60) {
  Rng rng(seed, "oracle/pr_curve");
  SuiteResult r;
  for (int t = 0; t < count; ++t) {
    const int h = rng.uniform_int(1, 8), w = rng.uniform_int(1, 8);
    const FenceMap b = t % 2 ? random_map(h, w, rng) : random_quantized_map(h, w, rng);
    const FenceMap g = random_binary_map(h, w, rng);
    const auto got = pr_curve(b, g), want = naive_pr_curve(b, g);
    double e = got.size() == 256 ? 0.0 : INFINITY;
    for (std::size_t i = 0; i < std::min(got.size(), want.size()); ++i) {
      e = std::max({e, std::abs(got[i].precision - want[i].precision), std::abs(got[i].recall - want[i].recall)});
    }
    r.add(e);
  }
  return r;
}

// ---- spectral norm ----

// Largest singular value as the square root of the dominant eigenvalue of W^T W.
inline double sigma_max_oracle(const RowMatrix& w) {
  const Eigen::MatrixXd gram = w.transpose() * w;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(gram, Eigen::EigenvaluesOnly);
  return std::sqrt(solver.eigenvalues().maxCoeff());
}

inline RowMatrix as_matrix(const Tensor& t, int rows) {
  return Eigen::Map<const RowMatrix>(t.data(), rows, t.size() / rows);
}

}  // namespace occ::testing
