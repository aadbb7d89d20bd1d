// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <vector>

#include "dynenc/tape.hpp"

namespace dynenc::grad {

/// Builds a scalar-valued graph from a leaf on the given tape.
using ScalarFunction = std::function<Var(Tape&, Var)>;

struct GradCheckReport {
  /// max_i |analytic_i - numeric_i| / max(|analytic|_inf, |numeric|_inf);
  /// zero when both gradients vanish.
  double max_rel_error = 0.0;
  bool passed = false;
  /// Coordinates where f or its analytic gradient was not finite.
  std::vector<std::size_t> non_finite;
  std::vector<double> analytic;
  std::vector<double> numeric;
};

/// Compares reverse-mode gradients of f at x against central differences
/// (f(x + eps e_i) - f(x - eps e_i)) / (2 eps).
GradCheckReport finite_difference_check(const ScalarFunction& f, const Tensor& x,
                                        double eps = 1e-5, double tol = 1e-5);

}  // namespace dynenc::grad
