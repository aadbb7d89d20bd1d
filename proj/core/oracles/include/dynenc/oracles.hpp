// SPDX-License-Identifier: Apache-2.0
//
// Slow reference computations used to check the fast paths. Nothing here
// calls into the implementations it is meant to verify.
#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace dynenc::oracle {

/// -log of the total probability of every frame path that collapses to
/// `labels` (repeats merged, blank 0 removed). Enumerates vocab^frames paths.
double ctc_brute_force(std::span<const double> log_probs, std::size_t frames, std::size_t vocab,
                       const std::vector<int>& labels);

/// Threshold relaxation of top-k computed by plain bisection in extended
/// precision: alpha_j = sigmoid((s_j - t) / tau) with sum(alpha) = k.
std::vector<double> soft_topk_bisection(const std::vector<double>& scores, std::size_t k,
                                        double tau);

/// Index of the template closest (Euclidean) to `frame`.
std::size_t nearest_template(std::span<const double> frame,
                             const std::vector<std::vector<double>>& templates);

}  // namespace dynenc::oracle
