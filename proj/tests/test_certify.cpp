#include "doctest.h"

#include <chrono>
#include <set>

#include "occ/certify.hpp"

using namespace occ;

TEST_CASE("every gradient passes finite-difference certification") {
  const auto start = std::chrono::steady_clock::now();
  const std::vector<CertificationResult> results = run_certification();
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  CHECK(seconds < 120.0);
  std::set<std::string> names;
  for (const CertificationResult& r : results) {
    INFO(r.name << " max error " << r.max_error);
    CHECK(r.passed);
    CHECK(r.instances == 20);
    CHECK(r.max_error <= 1e-4);
    names.insert(r.name);
  }
  CHECK(names.size() == results.size());
  for (const char* needed : {"conv2d/input", "gated_conv/input", "self_attention/input", "loss/bce", "loss/perceptual", "loss/structure", "spectral_norm"}) {
    CHECK(names.count(needed) == 1);
  }
}

TEST_CASE("certification catches a loose tolerance") {
  // A zero tolerance cannot be met by central differences.
  bool any_failed = false;
  for (const CertificationResult& r : run_certification(1, 2, 0.0)) any_failed = any_failed || !r.passed;
  CHECK(any_failed);
}
