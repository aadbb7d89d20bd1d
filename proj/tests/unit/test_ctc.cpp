// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "dynenc/ctc.hpp"
#include "dynenc/grad_cases.hpp"
#include "dynenc/gradcheck.hpp"
#include "dynenc/oracles.hpp"

namespace dynenc::ctc {
namespace {

using grad::Tape;
using grad::Var;

Tensor random_log_probs(Rng& rng, std::size_t frames, std::size_t vocab) {
  Tape tape(false);
  return grad::log_softmax(tape.constant(grad::random_tensor(rng, {frames, vocab})), 1).value();
}

LabelSeq random_labels(Rng& rng, std::size_t max_len, std::size_t vocab) {
  LabelSeq l(uniform_index(rng, max_len + 1));
  for (int& s : l) s = 1 + static_cast<int>(uniform_index(rng, vocab - 1));
  return l;
}

TEST(CtcLoss, SingleFrameSingleLabel) {
  Rng rng(1);
  Tensor lp = random_log_probs(rng, 1, 4);
  EXPECT_NEAR(forward_backward(lp.data, 1, 4, {2}).loss, -lp.at(0, 2), 1e-15);
}

TEST(CtcLoss, EmptyLabelsFollowTheBlankPath) {
  Rng rng(2);
  Tensor lp = random_log_probs(rng, 2, 4);
  EXPECT_NEAR(forward_backward(lp.data, 2, 4, {}).loss, -(lp.at(0, 0) + lp.at(1, 0)), 1e-15);
}

TEST(CtcLoss, ThreeFramesMatchEnumeration) {
  Rng rng(3);
  Tensor lp = random_log_probs(rng, 3, 4);
  EXPECT_NEAR(forward_backward(lp.data, 3, 4, {1, 2}).loss,
              oracle::ctc_brute_force(lp.data, 3, 4, {1, 2}), 1e-12);
}

TEST(CtcLoss, RandomInstancesMatchEnumeration) {
  Rng rng(4);
  for (int n = 0; n < 200; ++n) {
    const std::size_t frames = 1 + uniform_index(rng, 6);
    const std::size_t vocab = 2 + uniform_index(rng, 3);
    const LabelSeq labels = random_labels(rng, 3, vocab);
    Tensor lp = random_log_probs(rng, frames, vocab);
    const double dp = forward_backward(lp.data, frames, vocab, labels).loss;
    const double ref = oracle::ctc_brute_force(lp.data, frames, vocab, labels);
    if (std::isinf(ref)) {
      EXPECT_TRUE(std::isinf(dp)) << "instance " << n;
    } else {
      EXPECT_NEAR(dp, ref, 1e-9) << "instance " << n;
    }
  }
}

TEST(CtcLoss, TooFewFramesIsSkippedNotThrown) {
  std::vector<double> lp(2 * 3, std::log(1.0 / 3.0));
  const CtcResult r = forward_backward(lp, 2, 3, {1, 1});
  EXPECT_FALSE(r.feasible);
  EXPECT_TRUE(std::isinf(r.loss));
  EXPECT_EQ(min_frames({1, 1}), 3u);
  EXPECT_EQ(min_frames({1, 2, 2, 2}), 6u);
}

TEST(CtcLoss, RejectsBlankInLabels) {
  std::vector<double> lp(3, std::log(1.0 / 3.0));
  EXPECT_THROW(forward_backward(lp, 1, 3, {0}), std::invalid_argument);
  EXPECT_THROW(forward_backward(lp, 1, 3, {3}), std::invalid_argument);
}

TEST(CtcLoss, GradientMatchesFiniteDifferences) {
  Rng rng(5);
  for (int n = 0; n < 20; ++n) {
    const std::size_t frames = 3 + uniform_index(rng, 6);
    const LabelSeq labels = random_labels(rng, 3, 5);
    Tensor logits = grad::random_tensor(rng, {frames, 5});
    // Through log-softmax so the check covers the normalized parameterization.
    auto report = grad::finite_difference_check(
        [&](Tape&, Var x) { return loss(grad::log_softmax(x, 1), labels); }, logits);
    EXPECT_TRUE(report.passed) << report.max_rel_error;
    // Raw log-prob table, every entry free.
    auto raw = grad::finite_difference_check([&](Tape&, Var x) { return loss(x, labels); },
                                             random_log_probs(rng, frames, 5));
    EXPECT_TRUE(raw.passed) << raw.max_rel_error;
  }
}

TEST(CtcLoss, PerFrameShiftOfLogitsLeavesLossUnchanged) {
  Rng rng(6);
  Tensor logits = grad::random_tensor(rng, {7, 5});
  Tensor shifted = logits;
  for (std::size_t t = 0; t < 7; ++t) {
    const double c = 10.0 * normal(rng);
    for (std::size_t v = 0; v < 5; ++v) shifted.at(t, v) += c;
  }
  Tape tape(false);
  const double a = loss(grad::log_softmax(tape.constant(logits), 1), {1, 3, 3}).item();
  const double b = loss(grad::log_softmax(tape.constant(shifted), 1), {1, 3, 3}).item();
  EXPECT_NEAR(a, b, 1e-10);
}

TEST(CtcLoss, BatchIsMeanOverFeasibleUtterances) {
  Rng rng(7);
  Tensor lp({9, 4});
  const Tensor a = random_log_probs(rng, 4, 4), b = random_log_probs(rng, 2, 4),
               c = random_log_probs(rng, 3, 4);
  std::copy(a.data.begin(), a.data.end(), lp.data.begin());
  std::copy(b.data.begin(), b.data.end(), lp.data.begin() + 16);
  std::copy(c.data.begin(), c.data.end(), lp.data.begin() + 24);
  Tape tape;
  Var x = tape.leaf(lp);
  BatchLoss bl = batch_loss(x, grad::Segments{{4, 2, 3}}, {{1, 2}, {3, 3}, {2}});
  EXPECT_EQ(bl.skipped, 1u);
  const double la = forward_backward(a.data, 4, 4, {1, 2}).loss;
  const double lc = forward_backward(c.data, 3, 4, {2}).loss;
  EXPECT_NEAR(bl.mean.item(), 0.5 * (la + lc), 1e-14);
  tape.backward(bl.mean);
  const auto g = tape.grad(x);
  for (std::size_t i = 16; i < 24; ++i) EXPECT_EQ(g[i], 0.0);
}

TEST(GreedyDecode, CollapsesRepeatsAndDropsBlanks) {
  auto path_table = [](const std::vector<int>& path) {
    std::vector<double> lp(path.size() * 4, -5.0);
    for (std::size_t t = 0; t < path.size(); ++t) lp[t * 4 + path[t]] = -0.1;
    return lp;
  };
  EXPECT_EQ(greedy_decode(path_table({1, 1, 0, 2}), 4, 4), (LabelSeq{1, 2}));
  EXPECT_EQ(greedy_decode(path_table({0, 0, 0}), 3, 4), LabelSeq{});
  EXPECT_EQ(greedy_decode(path_table({1, 0, 1}), 3, 4), (LabelSeq{1, 1}));
}

TEST(LabelErrorRate, Examples) {
  EXPECT_EQ(label_error_rate({1, 2, 3}, {1, 2, 3}), 0.0);
  EXPECT_EQ(label_error_rate({}, {1, 2, 3}), 1.0);
  EXPECT_EQ(label_error_rate({1, 2, 3}, {1, 3}), 0.5);
  EXPECT_THROW(label_error_rate({1}, {}), std::invalid_argument);
}

}  // namespace
}  // namespace dynenc::ctc
