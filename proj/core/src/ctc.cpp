// SPDX-License-Identifier: Apache-2.0
#include "dynenc/ctc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>

namespace dynenc::ctc {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::fabs(a - b)));
}

}  // namespace

void validate_labels(const LabelSeq& labels, std::size_t vocab) {
  for (int l : labels) {
    if (l <= kBlank || static_cast<std::size_t>(l) >= vocab) {
      throw std::invalid_argument("ctc: label " + std::to_string(l) + " outside [1, " +
                                  std::to_string(vocab) + ")");
    }
  }
}

std::size_t min_frames(const LabelSeq& labels) {
  std::size_t n = labels.size();
  for (std::size_t i = 1; i < labels.size(); ++i) {
    if (labels[i] == labels[i - 1]) ++n;
  }
  return n;
}

CtcResult forward_backward(std::span<const double> log_probs, std::size_t frames,
                           std::size_t vocab, const LabelSeq& labels, bool with_grad) {
  if (log_probs.size() != frames * vocab) {
    throw std::invalid_argument("ctc: log-prob table has " + std::to_string(log_probs.size()) +
                                " entries, expected " + std::to_string(frames) + "x" +
                                std::to_string(vocab));
  }
  validate_labels(labels, vocab);
  CtcResult result;
  if (frames < min_frames(labels) || frames == 0) {
    result.loss = std::numeric_limits<double>::infinity();
    return result;
  }

  // Extended sequence: blank, l1, blank, l2, ..., blank.
  const std::size_t states = 2 * labels.size() + 1;
  std::vector<int> ext(states, kBlank);
  for (std::size_t i = 0; i < labels.size(); ++i) ext[2 * i + 1] = labels[i];
  auto can_skip = [&](std::size_t s) {  // may enter state s from s-2
    return s >= 2 && ext[s] != kBlank && ext[s] != ext[s - 2];
  };
  auto lp = [&](std::size_t t, std::size_t s) {
    return log_probs[t * vocab + static_cast<std::size_t>(ext[s])];
  };

  std::vector<double> alpha(frames * states, kNegInf);
  alpha[0] = lp(0, 0);
  if (states > 1) alpha[1] = lp(0, 1);
  for (std::size_t t = 1; t < frames; ++t) {
    const double* prev = alpha.data() + (t - 1) * states;
    double* cur = alpha.data() + t * states;
    for (std::size_t s = 0; s < states; ++s) {
      double a = prev[s];
      if (s >= 1) a = log_add(a, prev[s - 1]);
      if (can_skip(s)) a = log_add(a, prev[s - 2]);
      cur[s] = a == kNegInf ? kNegInf : a + lp(t, s);
    }
  }
  const double* last = alpha.data() + (frames - 1) * states;
  const double log_p = states > 1 ? log_add(last[states - 1], last[states - 2]) : last[0];
  result.loss = -log_p;
  result.feasible = std::isfinite(log_p);
  if (!result.feasible || !with_grad) return result;

  // beta[t][s]: log-probability of finishing from state s at frame t,
  // excluding the emission at t.
  std::vector<double> beta(frames * states, kNegInf);
  double* tail = beta.data() + (frames - 1) * states;
  tail[states - 1] = 0.0;
  if (states > 1) tail[states - 2] = 0.0;
  for (std::size_t t = frames - 1; t-- > 0;) {
    const double* next = beta.data() + (t + 1) * states;
    double* cur = beta.data() + t * states;
    for (std::size_t s = 0; s < states; ++s) {
      double b = next[s] == kNegInf ? kNegInf : next[s] + lp(t + 1, s);
      if (s + 1 < states && next[s + 1] != kNegInf) b = log_add(b, next[s + 1] + lp(t + 1, s + 1));
      if (s + 2 < states && can_skip(s + 2) && next[s + 2] != kNegInf) {
        b = log_add(b, next[s + 2] + lp(t + 1, s + 2));
      }
      cur[s] = b;
    }
  }

  result.grad.assign(frames * vocab, 0.0);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t s = 0; s < states; ++s) {
      const double a = alpha[t * states + s];
      const double b = beta[t * states + s];
      if (a == kNegInf || b == kNegInf) continue;
      result.grad[t * vocab + static_cast<std::size_t>(ext[s])] -= std::exp(a + b - log_p);
    }
  }
  return result;
}

grad::Var loss(grad::Var log_probs, const LabelSeq& labels) {
  const Tensor& lp = log_probs.value();
  if (lp.rank() != 2) {
    throw ShapeError("ctc_loss: expected [frames, vocab] log-probs, got shape " +
                     to_string(lp.shape));
  }
  auto res = std::make_shared<CtcResult>(
      forward_backward(lp.data, lp.dim(0), lp.dim(1), labels, log_probs.tape->grad_enabled()));
  return log_probs.tape->record("ctc_loss", Tensor::scalar(res->loss), {log_probs},
                                [res](grad::BackwardContext& ctx) {
    auto gx = ctx.input_grad(0);
    if (gx.empty() || !res->feasible) return;
    const double g = ctx.out_grad()[0];
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g * res->grad[i];
  });
}

BatchLoss batch_loss(grad::Var log_probs, const grad::Segments& segments,
                     const std::vector<LabelSeq>& labels) {
  const Tensor& lp = log_probs.value();
  if (lp.rank() != 2 || segments.total() != lp.dim(0)) {
    throw ShapeError("ctc_loss: segments cover " + std::to_string(segments.total()) +
                     " frames, log-probs have shape " + to_string(lp.shape));
  }
  if (labels.size() != segments.count()) {
    throw std::invalid_argument("ctc_loss: " + std::to_string(labels.size()) +
                                " label sequences for " + std::to_string(segments.count()) +
                                " utterances");
  }
  const std::size_t vocab = lp.dim(1);
  const auto offsets = segments.offsets();
  const bool with_grad = log_probs.tape->grad_enabled();

  auto results = std::make_shared<std::vector<CtcResult>>();
  BatchLoss out;
  double total = 0.0;
  std::size_t feasible = 0;
  for (std::size_t u = 0; u < segments.count(); ++u) {
    std::span<const double> rows(lp.data.data() + offsets[u] * vocab,
                                 segments.lengths[u] * vocab);
    results->push_back(forward_backward(rows, segments.lengths[u], vocab, labels[u], with_grad));
    const CtcResult& r = results->back();
    out.per_utterance.push_back(r.loss);
    if (r.feasible) {
      total += r.loss;
      ++feasible;
    } else {
      ++out.skipped;
    }
  }
  const double denom = feasible ? static_cast<double>(feasible) : 1.0;
  out.mean = log_probs.tape->record(
      "ctc_loss", Tensor::scalar(total / denom), {log_probs},
      [results, offsets, vocab, denom](grad::BackwardContext& ctx) {
        auto gx = ctx.input_grad(0);
        if (gx.empty()) return;
        const double g = ctx.out_grad()[0] / denom;
        for (std::size_t u = 0; u < results->size(); ++u) {
          const CtcResult& r = (*results)[u];
          if (!r.feasible) continue;
          double* dst = gx.data() + offsets[u] * vocab;
          for (std::size_t i = 0; i < r.grad.size(); ++i) dst[i] += g * r.grad[i];
        }
      });
  return out;
}

LabelSeq greedy_decode(std::span<const double> log_probs, std::size_t frames, std::size_t vocab) {
  LabelSeq out;
  int prev = kBlank;
  for (std::size_t t = 0; t < frames; ++t) {
    const double* row = log_probs.data() + t * vocab;
    const int best = static_cast<int>(std::max_element(row, row + vocab) - row);
    if (best != kBlank && best != prev) out.push_back(best);
    prev = best;
  }
  return out;
}

std::size_t edit_distance(const LabelSeq& hyp, const LabelSeq& ref) {
  std::vector<std::size_t> row(ref.size() + 1);
  for (std::size_t j = 0; j <= ref.size(); ++j) row[j] = j;
  for (std::size_t i = 1; i <= hyp.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= ref.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (hyp[i - 1] == ref[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[ref.size()];
}

double label_error_rate(const LabelSeq& hyp, const LabelSeq& ref) {
  if (ref.empty()) throw std::invalid_argument("label_error_rate: empty reference");
  return static_cast<double>(edit_distance(hyp, ref)) / static_cast<double>(ref.size());
}

}  // namespace dynenc::ctc
