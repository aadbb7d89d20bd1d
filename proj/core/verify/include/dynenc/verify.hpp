// SPDX-License-Identifier: Apache-2.0
//
// Oracle and property suites behind `dynenc verify`. The test targets run the
// same functions, so a green verify and a green ctest mean the same thing.
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace dynenc::verify {

struct SuiteResult {
  std::string name;
  bool passed = true;
  std::size_t checks = 0;
  /// Names of failing checks; for the gradient suite, the op of each case.
  std::vector<std::string> failures;
  /// Largest error observed against the suite's reference.
  double max_error = 0.0;
  double seconds = 0.0;

  void expect(bool ok, const std::string& what);
  std::string summary() const;
};

struct Options {
  std::uint64_t seed = 20240611;
  /// Seeds per primitive in the gradient suite.
  std::size_t grad_seeds = 50;
  std::size_t ctc_instances = 200;
  std::size_t topk_triples = 1000;
  std::size_t mask_trials = 1000;
};

/// Central differences (eps 1e-5, rel. tol 1e-5) for every primitive and
/// operand, ctc loss, both relaxations, the zero-out gate and the encoder's
/// gate gradient.
SuiteResult gradient_suite(const Options& options = {});
/// DP loss against alignment enumeration (T <= 6, S <= 3, V <= 4), 1e-9.
SuiteResult ctc_suite(const Options& options = {});
/// sum(alpha) = k and 0 <= alpha <= 1 on random triples; convergence to the
/// hard mask at tau = 0.01 with score gaps of at least 0.5.
SuiteResult relaxed_topk_suite(const Options& options = {});
/// Nested masks with exact cardinalities; zero-out suppression size and
/// revival.
SuiteResult mask_suite(const Options& options = {});
/// k-schedule endpoints and iteration counts; learning-rate anchor values.
SuiteResult schedule_suite(const Options& options = {});

std::vector<SuiteResult> run_all(const Options& options = {});

}  // namespace dynenc::verify
