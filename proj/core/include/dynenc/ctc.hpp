// SPDX-License-Identifier: Apache-2.0
//
// Connectionist temporal classification: negative log-likelihood via the
// log-space forward-backward recursions, greedy decoding and label error rate.
// Blank is symbol 0.
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dynenc/ops.hpp"
#include "dynenc/tape.hpp"

namespace dynenc::ctc {

inline constexpr int kBlank = 0;

using LabelSeq = std::vector<int>;

/// Throws std::invalid_argument unless every label lies in [1, vocab).
void validate_labels(const LabelSeq& labels, std::size_t vocab);

/// Fewest frames able to emit `labels`: one per label plus a separating
/// blank between equal neighbours.
std::size_t min_frames(const LabelSeq& labels);

struct CtcResult {
  /// -log p(labels | log_probs); +inf when the sequence is too short.
  double loss = 0.0;
  bool feasible = false;
  /// d loss / d log_probs, row-major [T, V]. Empty when infeasible.
  std::vector<double> grad;
};

/// log_probs is a row-major [frames, vocab] table of per-frame log
/// probabilities. The gradient is taken with every entry as a free variable.
CtcResult forward_backward(std::span<const double> log_probs, std::size_t frames,
                           std::size_t vocab, const LabelSeq& labels, bool with_grad = true);

/// Scalar loss of one utterance; +inf (with zero gradient) when infeasible.
grad::Var loss(grad::Var log_probs, const LabelSeq& labels);

struct BatchLoss {
  /// Mean over feasible utterances of the per-utterance loss; shape [1].
  grad::Var mean;
  std::vector<double> per_utterance;
  std::size_t skipped = 0;
};

/// CTC over utterances packed row-wise in log_probs [N, V].
BatchLoss batch_loss(grad::Var log_probs, const grad::Segments& segments,
                     const std::vector<LabelSeq>& labels);

/// Per-frame argmax, repeats collapsed, blanks removed.
LabelSeq greedy_decode(std::span<const double> log_probs, std::size_t frames, std::size_t vocab);

std::size_t edit_distance(const LabelSeq& hyp, const LabelSeq& ref);

/// edit_distance(hyp, ref) / |ref|; throws std::invalid_argument for an empty
/// reference.
double label_error_rate(const LabelSeq& hyp, const LabelSeq& ref);

}  // namespace dynenc::ctc
