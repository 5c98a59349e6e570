#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace occ {

struct CertificationResult {
  std::string name;
  int instances = 0;
  double max_error = 0.0;  // worst relative error over all instances
  bool passed = false;
};

// Finite-difference checks of every differentiable primitive, composite
// layer and loss against the tape's gradients.
std::vector<CertificationResult> run_certification(std::uint64_t seed = 2024, int instances = 20,
                                                   double tolerance = 1e-4, double epsilon = 1e-5);

}  // namespace occ
