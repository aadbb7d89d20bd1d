// SPDX-License-Identifier: Apache-2.0
//
// Layer importance scores and the two self-pruning gates built on them.
//
// Simple-Top-k: the forward pass uses the hard top-k mask of the scores; the
// backward pass substitutes a relaxed k-hot vector alpha (sum k, entries in
// [0, 1]) and routes the mask gradient through d(alpha)/d(scores).
//
// Iterative-Zero-Out: gates are sigmoid(scores), with the L-k lowest-ranked
// layers multiplied by zero. The suppressed set is recomputed from the live
// scores at every iteration boundary, so a layer can come back.
#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dynenc/tape.hpp"

namespace dynenc::pruning {

/// How the relaxed k-hot vector is built from the scores.
enum class Relaxation {
  /// alpha_j = sigmoid((s_j - t) / tau) with the threshold t solved so that
  /// sum(alpha) = k. Satisfies both constraints exactly.
  kThreshold,
  /// k rounds of softmax(w / tau) with w <- w + log(max(1 - kappa, 1e-12)),
  /// alpha = clamp(sum of rounds, 0, 1). Individual entries can exceed one
  /// before the clamp, in which case the clamped sum falls short of k.
  kIterativeSoftmax,
};

std::string to_string(Relaxation r);
Relaxation relaxation_from_string(const std::string& name);

struct RelaxedTopKConfig {
  double temperature = 1.0;
  Relaxation method = Relaxation::kThreshold;

  void validate() const;
};

/// Decreasing layer counts k_1 = L > k_2 > ... > k_M >= 1.
struct SubnetSpec {
  std::vector<std::size_t> sizes;

  std::size_t count() const { return sizes.size(); }
  std::size_t smallest() const { return sizes.back(); }
  /// Throws std::invalid_argument unless the sizes form a valid spec for L.
  void validate(std::size_t layers) const;
};

/// Layer indices ranked by descending score; equal scores keep index order.
std::vector<std::size_t> rank_layers(std::span<const double> scores);

/// Binary mask with ones at the k highest scores; ties go to the lower index.
std::vector<double> hard_topk_mask(std::span<const double> scores, std::size_t k);

std::vector<double> relaxed_topk(std::span<const double> scores, std::size_t k,
                                 const RelaxedTopKConfig& config);

/// Differentiable relaxed k-hot vector.
grad::Var relaxed_topk(grad::Var scores, std::size_t k, const RelaxedTopKConfig& config);

/// Hard top-k mask in the forward pass; in the backward pass the incoming
/// gradient g is mapped to J_alpha(scores)^T g.
grad::Var simple_topk_gate(grad::Var scores, std::size_t k, const RelaxedTopKConfig& config);

struct ZeroOutState {
  /// Suppressed layer indices, ascending.
  std::vector<std::size_t> suppressed;
  std::size_t target = 0;

  bool is_suppressed(std::size_t layer) const;
};

/// Suppresses the L-k lowest-ranked layers (ties: higher index first).
ZeroOutState zero_out_update(std::span<const double> scores, std::size_t k);

/// sigmoid(s_j), or 0 for suppressed layers.
grad::Var zero_out_gate(grad::Var scores, const ZeroOutState& state);

/// gamma * |sum(g) - k| / L with subgradient 0 at sum(g) = k.
grad::Var sparsity_penalty(grad::Var gate, std::size_t k, double gamma);

/// One binary mask per subnet size; mask m keeps the top k_m layers, so the
/// masks are nested.
std::vector<std::vector<double>> masks_from_scores(std::span<const double> scores,
                                                   const SubnetSpec& spec);

/// Indices of layers outside the top-k_min set.
std::vector<std::size_t> droppable_layers(std::span<const double> scores, std::size_t k_min);

}  // namespace dynenc::pruning
