// SPDX-License-Identifier: Apache-2.0
#include "dynenc/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace dynenc::grad {

namespace {
double evaluate(const ScalarFunction& f, const Tensor& x) {
  Tape tape(false);
  Var out = f(tape, tape.leaf(x, false));
  return out.item();
}
}  // namespace

GradCheckReport finite_difference_check(const ScalarFunction& f, const Tensor& x, double eps,
                                        double tol) {
  GradCheckReport report;
  {
    Tape tape;
    Var leaf = tape.leaf(x, true);
    Var out = f(tape, leaf);
    tape.backward(out);
    report.analytic = tape.grad(leaf);
  }
  report.numeric.resize(x.size());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double up = evaluate(f, probe);
    probe[i] = orig - eps;
    const double down = evaluate(f, probe);
    probe[i] = orig;
    report.numeric[i] = (up - down) / (2.0 * eps);
    if (!std::isfinite(up) || !std::isfinite(down) || !std::isfinite(report.analytic[i])) {
      report.non_finite.push_back(i);
    }
  }

  double scale = 0.0, worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(report.numeric[i]) || !std::isfinite(report.analytic[i])) continue;
    scale = std::max({scale, std::fabs(report.analytic[i]), std::fabs(report.numeric[i])});
    worst = std::max(worst, std::fabs(report.analytic[i] - report.numeric[i]));
  }
  report.max_rel_error = scale > 0.0 ? worst / scale : 0.0;
  report.passed = report.non_finite.empty() && report.max_rel_error <= tol;
  return report;
}

}  // namespace dynenc::grad
