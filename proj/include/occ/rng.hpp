#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "occ/tensor.hpp"

namespace occ {

/// Named, seeded random stream.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the
/// standard; the conversions to doubles and normals are done here rather
/// than through <random> distributions, whose algorithms are
/// implementation-defined. Identical (seed, label, call sequence) therefore
/// gives identical values on every platform.
class Rng {
 public:
  Rng(std::uint64_t seed, std::string label);

  std::uint64_t seed() const { return seed_; }
  const std::string& label() const { return label_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64();
  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  // Uniform integer on [lo, hi].
  int uniform_int(int lo, int hi);
  double normal();

  // Independent child stream, determined by (seed, label/child).
  Rng split(const std::string& child) const;

  // Reconstructs the stream state after `count` raw draws.
  static Rng restore(std::uint64_t seed, const std::string& label, std::uint64_t count);

 private:
  std::uint64_t seed_;
  std::string label_;
  std::uint64_t counter_ = 0;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

Tensor uniform_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0);
Tensor normal_tensor(Shape shape, Rng& rng, double stddev = 1.0);

}  // namespace occ
