// SPDX-License-Identifier: Apache-2.0
//
// Randomized gradient-check cases, one per primitive operand. Shared by the
// unit tests and `dynenc verify`.
#pragma once

#include <string>
#include <vector>

#include "dynenc/gradcheck.hpp"
#include "dynenc/rng.hpp"

namespace dynenc::grad {

struct GradCase {
  /// "<op>" or "<op>/<operand>".
  std::string name;
  /// Op name as recorded on the tape, used for fault attribution.
  std::string op;
  Tensor input;
  ScalarFunction f;
};

/// Builds one randomly shaped case for every differentiable primitive and
/// operand. Outputs are reduced to a scalar through a fixed random weighting
/// so every output element contributes to the checked gradient.
std::vector<GradCase> primitive_grad_cases(std::uint64_t seed);

/// Random tensor with entries drawn from N(0, sigma^2).
Tensor random_tensor(Rng& rng, Shape shape, double sigma = 1.0);

/// sum(out * w) for a constant w drawn from rng.
Var weighted_sum(Var out, Rng& rng);

}  // namespace dynenc::grad
