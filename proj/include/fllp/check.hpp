// SPDX-License-Identifier: Apache-2.0
//
// Randomised property suites runnable as an executable self-test.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace fllp {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;  // worst observed error, or the failure
};

struct CheckOptions {
  double curvature = 1.0;
  std::uint64_t seed = 0;
  int trials = 1000;

  void validate() const;  // throws std::invalid_argument
};

std::vector<CheckResult> check_manifold(const CheckOptions& opts);
std::vector<CheckResult> check_entailment(const CheckOptions& opts);

/// suite is "manifold", "entailment" or "all".
std::vector<CheckResult> run_checks(const std::string& suite, const CheckOptions& opts);

}  // namespace fllp
