// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "dynenc/encoder.hpp"
#include "dynenc/grad_cases.hpp"
#include "dynenc/gradcheck.hpp"

namespace dynenc::encoder {
namespace {

using grad::Segments;
using grad::Tape;
using grad::Var;

EncoderConfig tiny() {
  EncoderConfig c;
  c.blocks = 2;
  c.model_dim = 8;
  c.ff_dim = 16;
  c.heads = 2;
  c.conv_kernel = 3;
  c.input_dim = 5;
  c.vocab = 4;
  return c;
}

struct Batch {
  Tensor features;
  Segments segments;
};

Batch random_batch(Rng& rng, std::vector<std::size_t> lengths, std::size_t dim) {
  Segments s{std::move(lengths)};
  return {grad::random_tensor(rng, {s.total(), dim}), s};
}

TEST(Encoder, ZeroGateLeavesFrontendAndHead) {
  Encoder enc(tiny(), 1);
  Rng rng(2);
  Batch b = random_batch(rng, {5, 3}, 5);
  Gate zeros = Gate::constant(std::vector<double>(8, 0.0));
  Tape tape;
  const Tensor out = enc.forward(tape, b.features, b.segments, {.gate = &zeros}).log_probs.value();
  Segments seg;
  Var h = enc.frontend(tape, tape.constant(b.features), b.segments, seg);
  EXPECT_EQ(out.data, enc.project(tape, h, "head").value().data);
}

TEST(Encoder, AllOnesGateMatchesNoGate) {
  Encoder enc(tiny(), 3);
  Rng rng(4);
  Batch b = random_batch(rng, {6, 4}, 5);
  Gate ones = Gate::constant(std::vector<double>(8, 1.0));
  Tape tape;
  EXPECT_EQ(enc.forward(tape, b.features, b.segments, {.gate = &ones}).log_probs.value().data,
            enc.forward(tape, b.features, b.segments).log_probs.value().data);
}

TEST(Encoder, GatedOffLayerMatchesDeletedLayer) {
  Encoder enc(tiny(), 5);
  Rng rng(6);
  Batch b = random_batch(rng, {7, 2, 5}, 5);
  for (std::size_t off = 0; off < 8; ++off) {
    std::vector<double> g(8, 1.0);
    g[off] = 0.0;
    Gate gate = Gate::constant(g);
    Tape tape;
    const Tensor masked =
        enc.forward(tape, b.features, b.segments, {.gate = &gate}).log_probs.value();
    // Build the smaller network by hand.
    Segments seg;
    Var x = enc.frontend(tape, tape.constant(b.features), b.segments, seg);
    for (std::size_t j = 0; j < 8; ++j) {
      if (j == off) continue;
      const LayerId id = LayerId::from_flat(j);
      Var h = enc.sublayer(tape, x, id, seg);
      if (residual_scale(id.kind) != 1.0) h = grad::scale(h, residual_scale(id.kind));
      x = grad::add(x, h);
    }
    const Tensor deleted = enc.project(tape, x, "head").value();
    for (std::size_t i = 0; i < masked.size(); ++i) EXPECT_NEAR(masked[i], deleted[i], 1e-12);
  }
}

TEST(Encoder, PackedBatchMatchesSingleUtterances) {
  Encoder enc(tiny(), 7);
  Rng rng(8);
  Batch b = random_batch(rng, {9, 4, 6}, 5);
  Tape tape;
  EncoderOutput packed = enc.forward(tape, b.features, b.segments);
  const auto in_off = b.segments.offsets();
  const auto out_off = packed.segments.offsets();
  for (std::size_t u = 0; u < 3; ++u) {
    const std::size_t t = b.segments.lengths[u];
    Tensor one({t, 5});
    std::copy_n(b.features.data.begin() + static_cast<std::ptrdiff_t>(in_off[u] * 5), t * 5,
                one.data.begin());
    const Tensor single = enc.forward(tape, one, Segments{{t}}).log_probs.value();
    for (std::size_t i = 0; i < single.size(); ++i) {
      EXPECT_NEAR(single[i], packed.log_probs.value()[out_off[u] * 4 + i], 1e-12);
    }
  }
}

TEST(Encoder, SubsampledLengthsAreCeilings) {
  for (std::size_t factor : {1u, 2u, 3u, 4u, 6u}) {
    EncoderConfig c = tiny();
    c.subsample = factor;
    Encoder enc(c, 9);
    Rng rng(10);
    Batch b = random_batch(rng, {1, 7, 12, 13}, 5);
    Tape tape(false);
    EncoderOutput out = enc.forward(tape, b.features, b.segments);
    for (std::size_t u = 0; u < 4; ++u) {
      const std::size_t t = b.segments.lengths[u];
      EXPECT_EQ(out.segments.lengths[u], (t + factor - 1) / factor) << "factor " << factor;
    }
    EXPECT_EQ(out.log_probs.shape(), (Shape{out.segments.total(), 4}));
  }
}

TEST(Encoder, RejectsBadGatesAndConfigs) {
  Encoder enc(tiny(), 11);
  Rng rng(12);
  Batch b = random_batch(rng, {4}, 5);
  Tape tape;
  Gate short_gate = Gate::constant(std::vector<double>(7, 1.0));
  EXPECT_THROW(enc.forward(tape, b.features, b.segments, {.gate = &short_gate}),
               std::invalid_argument);
  Gate big = Gate::constant(std::vector<double>(8, 1.5));
  EXPECT_THROW(enc.forward(tape, b.features, b.segments, {.gate = &big}), std::invalid_argument);
  EncoderConfig c = tiny();
  c.heads = 3;
  EXPECT_THROW(Encoder(c, 1), std::invalid_argument);
  c = tiny();
  c.conv_kernel = 4;
  EXPECT_THROW(Encoder(c, 1), std::invalid_argument);
}

TEST(Encoder, NonFiniteActivationNamesTheLayer) {
  Encoder enc(tiny(), 13);
  enc.params().get("block1.mhsa.out.bias").value[0] = std::numeric_limits<double>::infinity();
  Rng rng(14);
  Batch b = random_batch(rng, {4}, 5);
  Tape tape;
  try {
    enc.forward(tape, b.features, b.segments);
    FAIL() << "expected NonFiniteError";
  } catch (const NonFiniteError& e) {
    EXPECT_NE(std::string(e.what()).find("block1.mhsa"), std::string::npos) << e.what();
  }
}

TEST(Encoder, ClosedGateBlocksParameterGradients) {
  Encoder enc(tiny(), 15);
  Rng rng(16);
  Batch b = random_batch(rng, {6, 3}, 5);
  std::vector<double> g(8, 1.0);
  g[2] = 0.0;
  Gate gate = Gate::constant(g);
  Tape tape;
  enc.params().zero_grad();
  Var lp = enc.forward(tape, b.features, b.segments, {.gate = &gate}).log_probs;
  tape.backward(grad::weighted_sum(lp, rng));
  for (const auto& name : enc.layer_param_names(2)) {
    for (double v : enc.params().get(name).grad) EXPECT_EQ(v, 0.0) << name;
  }
  double other = 0.0;
  for (const auto& name : enc.layer_param_names(3)) {
    for (double v : enc.params().get(name).grad) other += std::fabs(v);
  }
  EXPECT_GT(other, 0.0);
}

TEST(Encoder, GateGradientMatchesFiniteDifferences) {
  Encoder enc(tiny(), 17);
  Rng rng(18);
  Batch b = random_batch(rng, {5, 4}, 5);
  Tensor g0({8});
  for (double& v : g0.data) v = uniform01(rng);
  auto report = grad::finite_difference_check(
      [&](Tape& tape, Var g) {
        Gate gate = Gate::from_var(g);
        Rng w(19);
        return grad::weighted_sum(
            enc.forward(tape, b.features, b.segments, {.gate = &gate}).log_probs, w);
      },
      g0);
  EXPECT_TRUE(report.passed) << report.max_rel_error;
  EXPECT_LE(report.max_rel_error, 1e-5);
}

TEST(Encoder, LayerDropoutSkipsOnlyListedLayers) {
  Encoder enc(tiny(), 20);
  Rng data(21);
  Batch b = random_batch(data, {5}, 5);
  Rng rng(22);
  Tape tape;
  ForwardOptions opts{.layer_dropout = {{1, 0.0}, {5, 0.0}, {6, 1.0}}, .train = true, .rng = &rng};
  EncoderOutput out = enc.forward(tape, b.features, b.segments, opts);
  EXPECT_EQ(out.dropped, (std::vector<std::size_t>{1, 5}));
  std::vector<double> g(8, 1.0);
  g[1] = g[5] = 0.0;
  Gate gate = Gate::constant(g);
  EXPECT_EQ(out.log_probs.value().data,
            enc.forward(tape, b.features, b.segments, {.gate = &gate}).log_probs.value().data);
  opts.train = false;
  EXPECT_TRUE(enc.forward(tape, b.features, b.segments, opts).dropped.empty());
}

TEST(Encoder, CountsForwardCalls) {
  Encoder enc(tiny(), 23);
  Rng rng(24);
  Batch b = random_batch(rng, {3}, 5);
  reset_forward_count();
  Tape tape(false);
  for (int i = 0; i < 3; ++i) enc.forward(tape, b.features, b.segments);
  EXPECT_EQ(forward_count(), 3u);
}

TEST(ParamCount, MatchesParameterStoreWalk) {
  EncoderConfig c;  // desk-scale defaults
  Encoder enc(c, 1);
  const std::size_t L = c.layers();
  EXPECT_EQ(L, 32u);
  EXPECT_EQ(param_count(c, std::vector<double>(L, 1.0)), enc.params().scalar_count());
  std::size_t walked_layers = 0;
  for (std::size_t j = 0; j < L; ++j) {
    std::size_t n = 0;
    for (const auto& name : enc.layer_param_names(j)) n += enc.params().get(name).value.size();
    EXPECT_EQ(n, layer_param_count(c, LayerId::from_flat(j).kind)) << j;
    walked_layers += n;
  }
  EXPECT_EQ(param_count(c, std::vector<double>(L, 0.0)),
            enc.params().scalar_count() - walked_layers);
  std::vector<double> m(L, 1.0);
  m[4] = 0.0;  // block1.ffn1
  const std::size_t d = c.model_dim, f = c.ff_dim;
  EXPECT_EQ(param_count(c, m), enc.params().scalar_count() - (2 * d * f + f + d + 2 * d));
  m[5] = 0.5;
  EXPECT_THROW(param_count(c, m), std::invalid_argument);
}

TEST(ParamCount, MonotoneInNestedMasks) {
  EncoderConfig c;
  Rng rng(25);
  for (int n = 0; n < 100; ++n) {
    std::vector<double> big(c.layers()), small(c.layers());
    for (std::size_t j = 0; j < big.size(); ++j) {
      big[j] = uniform01(rng) < 0.6 ? 1.0 : 0.0;
      small[j] = big[j] == 1.0 && uniform01(rng) < 0.5 ? 1.0 : 0.0;
    }
    EXPECT_LE(param_count(c, small), param_count(c, big));
  }
}

}  // namespace
}  // namespace dynenc::encoder
