// SPDX-License-Identifier: Apache-2.0
//
// Layer-maskable Conformer-lite encoder. A strided frontend feeds B blocks of
// four residual sublayers (FFN1, Conv, MHSA, FFN2), followed by a final
// layernorm and a projection to log-probabilities. Sublayer j updates the
// residual stream as x <- x + c_j * g_j * Sub_j(x), with c_j = 0.5 for the
// feed-forward kinds and 1 otherwise.
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dynenc/ops.hpp"
#include "dynenc/rng.hpp"
#include "dynenc/tape.hpp"

namespace dynenc::encoder {

enum class LayerKind { kFfn1 = 0, kConv = 1, kMhsa = 2, kFfn2 = 3 };

inline constexpr std::array<LayerKind, 4> kKinds = {LayerKind::kFfn1, LayerKind::kConv,
                                                    LayerKind::kMhsa, LayerKind::kFfn2};

/// "ffn1", "conv", "mhsa", "ffn2" (parameter-name form).
std::string_view kind_key(LayerKind kind);
/// "FFN1", "Conv", "MHSA", "FFN2".
std::string_view kind_label(LayerKind kind);
double residual_scale(LayerKind kind);

struct LayerId {
  std::size_t block = 0;
  LayerKind kind = LayerKind::kFfn1;

  std::size_t flat() const { return 4 * block + static_cast<std::size_t>(kind); }
  static LayerId from_flat(std::size_t j) { return {j / 4, kKinds[j % 4]}; }
  /// "block3.mhsa"
  std::string name() const;

  friend bool operator==(const LayerId&, const LayerId&) = default;
};

struct EncoderConfig {
  std::size_t blocks = 8;
  std::size_t model_dim = 64;
  std::size_t ff_dim = 256;
  std::size_t heads = 4;
  std::size_t conv_kernel = 7;
  std::size_t subsample = 2;
  std::size_t input_dim = 20;
  std::size_t vocab = 13;
  /// Dropout on every sublayer output at train time.
  double dropout = 0.0;
  /// Adds a second output head ("aux.*") for an intermediate tap.
  bool aux_head = false;

  std::size_t layers() const { return 4 * blocks; }
  /// Frame-stacking strides of the two frontend convolutions; their product
  /// is the subsample factor.
  std::pair<std::size_t, std::size_t> frontend_strides() const;
  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

/// Closed-form scalar count of one sublayer.
std::size_t layer_param_count(const EncoderConfig& config, LayerKind kind);
/// Scalars outside all sublayers: frontend, final layernorm, projection.
std::size_t base_param_count(const EncoderConfig& config);
/// base_param_count plus every sublayer whose mask entry is 1. Throws
/// std::invalid_argument for a non-binary mask or one of the wrong length.
std::size_t param_count(const EncoderConfig& config, const std::vector<double>& mask);

/// Per-layer gate. When `var` is set (a [L] tensor on the forward tape) every
/// sublayer is computed and scaled by its gate entry, so gradients reach the
/// gate; otherwise a zero entry skips its sublayer outright.
struct Gate {
  std::vector<double> values;
  std::optional<grad::Var> var;

  static Gate constant(std::vector<double> values) { return {std::move(values), std::nullopt}; }
  static Gate from_var(grad::Var v) { return {v.value().data, v}; }
};

struct ForwardOptions {
  /// nullptr means every gate is 1.
  const Gate* gate = nullptr;
  /// (layer, survival probability) pairs, applied only when `train` is set:
  /// a layer that does not survive contributes identity for this call.
  std::vector<std::pair<std::size_t, double>> layer_dropout;
  bool train = false;
  /// Drives layer dropout and regular dropout; required when either is active.
  Rng* rng = nullptr;
  /// Records the residual stream after this many blocks (0 < n < B).
  std::optional<std::size_t> tap_after_blocks;
};

struct EncoderOutput {
  /// [sum T', V] log-probabilities, packed like the input.
  grad::Var log_probs;
  grad::Segments segments;
  std::optional<grad::Var> tap;
  /// Layers skipped by layer dropout in this call.
  std::vector<std::size_t> dropped;
};

class Encoder {
 public:
  Encoder(EncoderConfig config, std::uint64_t seed);

  const EncoderConfig& config() const { return config_; }
  grad::ParamStore& params() { return params_; }
  const grad::ParamStore& params() const { return params_; }

  /// features: [sum T, F] rows of all utterances, packed.
  EncoderOutput forward(grad::Tape& tape, const Tensor& features, const grad::Segments& segments,
                        const ForwardOptions& options = {});

  grad::Var frontend(grad::Tape& tape, grad::Var x, const grad::Segments& segments,
                     grad::Segments& out_segments);
  /// Sub_j(x) without the residual connection or gate.
  grad::Var sublayer(grad::Tape& tape, grad::Var x, LayerId id, const grad::Segments& segments);
  /// Final layernorm, projection and log-softmax of a head ("head" or "aux").
  grad::Var project(grad::Tape& tape, grad::Var hidden, std::string_view head);

  /// Names of the parameters owned by layer j, in creation order.
  std::vector<std::string> layer_param_names(std::size_t j) const;

 private:
  grad::Var p(grad::Tape& tape, const std::string& name);
  grad::Var apply_dense(grad::Tape& tape, grad::Var x, const std::string& prefix);

  EncoderConfig config_;
  grad::ParamStore params_;
};

/// Calls to Encoder::forward on this thread since the last reset.
std::size_t forward_count();
void reset_forward_count();

}  // namespace dynenc::encoder
