// SPDX-License-Identifier: Apache-2.0
#include "dynenc/encoder.hpp"

#include <cmath>
#include <stdexcept>

namespace dynenc::encoder {

namespace {

thread_local std::size_t g_forward_calls = 0;

constexpr std::size_t kFrontendKernel = 3;

std::string block_prefix(std::size_t block, LayerKind kind) {
  return "block" + std::to_string(block) + "." + std::string(kind_key(kind));
}

}  // namespace

std::string_view kind_key(LayerKind kind) {
  switch (kind) {
    case LayerKind::kFfn1: return "ffn1";
    case LayerKind::kConv: return "conv";
    case LayerKind::kMhsa: return "mhsa";
    case LayerKind::kFfn2: return "ffn2";
  }
  return "?";
}

std::string_view kind_label(LayerKind kind) {
  switch (kind) {
    case LayerKind::kFfn1: return "FFN1";
    case LayerKind::kConv: return "Conv";
    case LayerKind::kMhsa: return "MHSA";
    case LayerKind::kFfn2: return "FFN2";
  }
  return "?";
}

double residual_scale(LayerKind kind) {
  return kind == LayerKind::kFfn1 || kind == LayerKind::kFfn2 ? 0.5 : 1.0;
}

std::string LayerId::name() const { return block_prefix(block, kind); }

std::pair<std::size_t, std::size_t> EncoderConfig::frontend_strides() const {
  if (subsample > 2 && subsample % 2 == 0) return {2, subsample / 2};
  return {subsample, 1};
}

void EncoderConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("encoder config: " + msg); };
  if (blocks == 0) fail("blocks must be positive");
  if (model_dim == 0 || ff_dim == 0) fail("model_dim and ff_dim must be positive");
  if (heads == 0 || model_dim % heads != 0) {
    fail("model_dim " + std::to_string(model_dim) + " not divisible by heads " +
         std::to_string(heads));
  }
  if (conv_kernel % 2 == 0) fail("conv_kernel must be odd");
  if (subsample == 0) fail("subsample must be at least 1");
  if (input_dim == 0) fail("input_dim must be positive");
  if (vocab < 2) fail("vocab must include blank and at least one symbol");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
}

std::size_t layer_param_count(const EncoderConfig& c, LayerKind kind) {
  const std::size_t d = c.model_dim;
  switch (kind) {
    case LayerKind::kFfn1:
    case LayerKind::kFfn2: return 2 * d * c.ff_dim + c.ff_dim + d + 2 * d;
    case LayerKind::kConv: return 3 * d * d + (c.conv_kernel + 8) * d;
    case LayerKind::kMhsa: return 4 * d * d + 6 * d;
  }
  return 0;
}

std::size_t base_param_count(const EncoderConfig& c) {
  const std::size_t d = c.model_dim;
  const std::size_t frontend =
      kFrontendKernel * c.input_dim * d + d + kFrontendKernel * d * d + d;
  return frontend + 2 * d + d * c.vocab + c.vocab;
}

std::size_t param_count(const EncoderConfig& config, const std::vector<double>& mask) {
  if (mask.size() != config.layers()) {
    throw std::invalid_argument("param_count: mask has " + std::to_string(mask.size()) +
                                " entries, encoder has " + std::to_string(config.layers()) +
                                " layers");
  }
  std::size_t n = base_param_count(config);
  for (std::size_t j = 0; j < mask.size(); ++j) {
    if (mask[j] != 0.0 && mask[j] != 1.0) {
      throw std::invalid_argument("param_count: mask entry " + std::to_string(j) +
                                  " is not binary");
    }
    if (mask[j] == 1.0) n += layer_param_count(config, LayerId::from_flat(j).kind);
  }
  return n;
}

Encoder::Encoder(EncoderConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(seed);
  const std::size_t d = config_.model_dim;
  auto dense = [&](const std::string& prefix, std::size_t in, std::size_t out) {
    Tensor w({in, out});
    const double sd = 1.0 / std::sqrt(static_cast<double>(in));
    for (double& v : w.data) v = sd * normal(rng);
    params_.add(prefix + ".weight", std::move(w));
    params_.add(prefix + ".bias", Tensor::zeros({out}));
  };
  auto norm = [&](const std::string& prefix) {
    params_.add(prefix + ".gamma", Tensor::filled({d}, 1.0));
    params_.add(prefix + ".beta", Tensor::zeros({d}));
  };

  dense("frontend.conv1", kFrontendKernel * config_.input_dim, d);
  dense("frontend.conv2", kFrontendKernel * d, d);
  for (std::size_t b = 0; b < config_.blocks; ++b) {
    for (LayerKind kind : kKinds) {
      const std::string pre = block_prefix(b, kind);
      norm(pre + ".norm");
      switch (kind) {
        case LayerKind::kFfn1:
        case LayerKind::kFfn2:
          dense(pre + ".linear1", d, config_.ff_dim);
          dense(pre + ".linear2", config_.ff_dim, d);
          break;
        case LayerKind::kConv: {
          dense(pre + ".pointwise1", d, 2 * d);
          Tensor w({config_.conv_kernel, d});
          const double sd = 1.0 / std::sqrt(static_cast<double>(config_.conv_kernel));
          for (double& v : w.data) v = sd * normal(rng);
          params_.add(pre + ".depthwise.weight", std::move(w));
          params_.add(pre + ".depthwise.bias", Tensor::zeros({d}));
          norm(pre + ".conv_norm");
          dense(pre + ".pointwise2", d, d);
          break;
        }
        case LayerKind::kMhsa:
          dense(pre + ".query", d, d);
          dense(pre + ".key", d, d);
          dense(pre + ".value", d, d);
          dense(pre + ".out", d, d);
          break;
      }
    }
  }
  norm("head.norm");
  dense("head.proj", d, config_.vocab);
  if (config_.aux_head) {
    norm("aux.norm");
    dense("aux.proj", d, config_.vocab);
  }
}

grad::Var Encoder::p(grad::Tape& tape, const std::string& name) {
  return tape.param(params_.get(name));
}

grad::Var Encoder::apply_dense(grad::Tape& tape, grad::Var x, const std::string& prefix) {
  return grad::linear(x, p(tape, prefix + ".weight"), p(tape, prefix + ".bias"));
}

grad::Var Encoder::frontend(grad::Tape& tape, grad::Var x, const grad::Segments& segments,
                            grad::Segments& out_segments) {
  const auto [a, b] = config_.frontend_strides();
  grad::Var h = grad::unfold(x, segments, kFrontendKernel, a);
  h = grad::swish(apply_dense(tape, h, "frontend.conv1"));
  const grad::Segments mid = segments.strided(a);
  h = grad::unfold(h, mid, kFrontendKernel, b);
  out_segments = mid.strided(b);
  return apply_dense(tape, h, "frontend.conv2");
}

grad::Var Encoder::sublayer(grad::Tape& tape, grad::Var x, LayerId id,
                            const grad::Segments& segments) {
  const std::string pre = id.name();
  grad::Var h = grad::layernorm(x, p(tape, pre + ".norm.gamma"), p(tape, pre + ".norm.beta"));
  switch (id.kind) {
    case LayerKind::kFfn1:
    case LayerKind::kFfn2:
      h = grad::swish(apply_dense(tape, h, pre + ".linear1"));
      return apply_dense(tape, h, pre + ".linear2");
    case LayerKind::kConv:
      h = grad::glu(apply_dense(tape, h, pre + ".pointwise1"));
      h = grad::depthwise_conv1d(h, p(tape, pre + ".depthwise.weight"),
                                 p(tape, pre + ".depthwise.bias"), segments);
      h = grad::layernorm(h, p(tape, pre + ".conv_norm.gamma"), p(tape, pre + ".conv_norm.beta"));
      return apply_dense(tape, grad::swish(h), pre + ".pointwise2");
    case LayerKind::kMhsa: {
      grad::Var q = apply_dense(tape, h, pre + ".query");
      grad::Var k = apply_dense(tape, h, pre + ".key");
      grad::Var v = apply_dense(tape, h, pre + ".value");
      return apply_dense(tape, grad::attention(q, k, v, segments, config_.heads), pre + ".out");
    }
  }
  throw std::logic_error("unreachable layer kind");
}

grad::Var Encoder::project(grad::Tape& tape, grad::Var hidden, std::string_view head) {
  const std::string pre(head);
  grad::Var h =
      grad::layernorm(hidden, p(tape, pre + ".norm.gamma"), p(tape, pre + ".norm.beta"));
  return grad::log_softmax(apply_dense(tape, h, pre + ".proj"), 1);
}

std::vector<std::string> Encoder::layer_param_names(std::size_t j) const {
  const std::string pre = LayerId::from_flat(j).name() + ".";
  std::vector<std::string> out;
  for (const auto& param : params_) {
    if (param.name.compare(0, pre.size(), pre) == 0) out.push_back(param.name);
  }
  return out;
}

EncoderOutput Encoder::forward(grad::Tape& tape, const Tensor& features,
                               const grad::Segments& segments, const ForwardOptions& options) {
  ++g_forward_calls;
  const std::size_t layers = config_.layers();
  if (features.rank() != 2 || features.dim(1) != config_.input_dim ||
      features.dim(0) != segments.total()) {
    throw ShapeError("encoder: features " + dynenc::to_string(features.shape) + " do not match " +
                     std::to_string(segments.total()) + " frames x " +
                     std::to_string(config_.input_dim) + " dims");
  }
  const Gate* gate = options.gate;
  if (gate) {
    if (gate->values.size() != layers) {
      throw std::invalid_argument("encoder: gate has " + std::to_string(gate->values.size()) +
                                  " entries, expected " + std::to_string(layers));
    }
    for (double g : gate->values) {
      if (!(g >= 0.0 && g <= 1.0)) throw std::invalid_argument("encoder: gate entry outside [0, 1]");
    }
    if (gate->var && gate->var->shape() != Shape{layers}) {
      throw ShapeError("encoder: gate tensor has shape " + dynenc::to_string(gate->var->shape()));
    }
  }
  const bool regular_dropout = options.train && config_.dropout > 0.0;
  const bool layer_drop = options.train && !options.layer_dropout.empty();
  if ((regular_dropout || layer_drop) && options.rng == nullptr) {
    throw std::invalid_argument("encoder: training-time dropout needs an rng");
  }
  if (options.tap_after_blocks &&
      (*options.tap_after_blocks == 0 || *options.tap_after_blocks >= config_.blocks)) {
    throw std::invalid_argument("encoder: tap point must lie strictly inside the block stack");
  }

  EncoderOutput out;
  std::vector<char> dropped(layers, 0);
  if (layer_drop) {
    for (const auto& [j, survival] : options.layer_dropout) {
      if (j >= layers || !(survival >= 0.0 && survival <= 1.0)) {
        throw std::invalid_argument("encoder: invalid layer dropout entry for layer " +
                                    std::to_string(j));
      }
      if (uniform01(*options.rng) >= survival) {
        dropped[j] = 1;
        out.dropped.push_back(j);
      }
    }
  }

  grad::Var x = frontend(tape, tape.constant(features), segments, out.segments);
  for (std::size_t b = 0; b < config_.blocks; ++b) {
    for (LayerKind kind : kKinds) {
      const LayerId id{b, kind};
      const std::size_t j = id.flat();
      if (dropped[j]) continue;
      const double g = gate ? gate->values[j] : 1.0;
      const bool live_gate = gate && gate->var;
      if (!live_gate && g == 0.0) continue;
      grad::Var h = sublayer(tape, x, id, out.segments);
      if (regular_dropout) h = grad::dropout(h, config_.dropout, *options.rng, true);
      const double c = residual_scale(kind);
      if (live_gate) {
        grad::Var gj = grad::slice(*gate->var, 0, j, 1);
        h = grad::mul_scalar(h, c == 1.0 ? gj : grad::scale(gj, c));
      } else if (c * g != 1.0) {
        h = grad::scale(h, c * g);
      }
      x = grad::add(x, h);
      if (!x.value().all_finite()) {
        throw NonFiniteError("encoder: non-finite activation after " + id.name());
      }
    }
    if (options.tap_after_blocks && b + 1 == *options.tap_after_blocks) out.tap = x;
  }
  out.log_probs = project(tape, x, "head");
  return out;
}

std::size_t forward_count() { return g_forward_calls; }
void reset_forward_count() { g_forward_calls = 0; }

}  // namespace dynenc::encoder
