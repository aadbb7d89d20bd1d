// SPDX-License-Identifier: Apache-2.0
//
// Differentiable primitives. Every function records one node on the tape of
// its first argument and throws ShapeError, naming the op and the offending
// shapes, when operands do not fit together.
#pragma once

#include <cstddef>
#include <vector>

#include "dynenc/rng.hpp"
#include "dynenc/tape.hpp"

namespace dynenc::grad {

/// Lengths of variable-length sequences packed row-wise into one [N, C]
/// tensor. Sequence-aware ops (convolution, attention, unfold) never mix rows
/// across sequence boundaries.
struct Segments {
  std::vector<std::size_t> lengths;

  std::size_t count() const { return lengths.size(); }
  std::size_t total() const;
  std::vector<std::size_t> offsets() const;
  /// Lengths after a stride-s reduction: ceil(T / s) per sequence.
  Segments strided(std::size_t stride) const;
};

Var matmul(Var a, Var b);
/// Elementwise sum. b may also be a vector broadcast over the rows of a.
Var add(Var a, Var b);
Var mul(Var a, Var b);
/// Multiplies every element of x by the single element of s.
Var mul_scalar(Var x, Var s);
Var scale(Var x, double c);
Var add_scalar(Var x, double c);

/// x W + b with W of shape [in, out] and b of shape [out].
Var linear(Var x, Var weight, Var bias);

/// Normalizes over the last axis, then applies gamma and beta.
Var layernorm(Var x, Var gamma, Var beta, double eps = 1e-5);
Var layernorm(Var x, double eps = 1e-5);

Var softmax(Var x, std::size_t axis);
Var log_softmax(Var x, std::size_t axis);

Var sigmoid(Var x);
Var swish(Var x);
Var relu(Var x);
/// |x| with subgradient 0 at 0.
Var abs(Var x);
/// log(max(x, floor)); gradient is zero where the floor is active.
Var log(Var x, double floor);
Var clamp(Var x, double lo, double hi);

/// Splits the last axis in halves [a, b] and returns a * sigmoid(b).
Var glu(Var x);

/// Per-channel 1-D convolution with "same" zero padding inside each segment.
/// x: [N, C], weight: [K, C] with K odd, bias: [C].
Var depthwise_conv1d(Var x, Var weight, Var bias, const Segments& segments);

/// Strided frame stacking: output row t of a segment concatenates input rows
/// t*stride - (K-1)/2 ... t*stride + K/2 (zeros outside the segment), giving
/// [segments.strided(stride).total(), K*C]. Followed by linear() this is a
/// strided 1-D convolution.
Var unfold(Var x, const Segments& segments, std::size_t kernel, std::size_t stride);

/// Multi-head scaled dot-product attention, each segment attending only to
/// itself. q, k, v: [N, d] with d divisible by heads.
Var attention(Var q, Var k, Var v, const Segments& segments, std::size_t heads);

Var transpose(Var x);
Var slice(Var x, std::size_t axis, std::size_t start, std::size_t length);
Var concat(const std::vector<Var>& xs, std::size_t axis);

/// Reductions drop the reduced axis; a full reduction yields shape [1].
Var sum(Var x, std::size_t axis);
Var mean(Var x, std::size_t axis);
Var sum_all(Var x);

/// Inverted dropout: kept entries are divided by (1 - p) at train time.
Var dropout(Var x, double p, Rng& rng, bool train);

}  // namespace dynenc::grad
