// SPDX-License-Identifier: Apache-2.0
#include "dynenc/pruning.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "dynenc/ops.hpp"

namespace dynenc::pruning {

namespace {

void check_k(const char* op, std::size_t k, std::size_t layers) {
  if (k < 1 || k > layers) {
    throw std::invalid_argument(std::string(op) + ": k=" + std::to_string(k) +
                                " outside [1, " + std::to_string(layers) + "]");
  }
}

void check_finite(std::span<const double> scores) {
  for (double s : scores) {
    if (!std::isfinite(s)) throw NonFiniteError("importance scores contain a non-finite entry");
  }
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Threshold t with sum_j sigmoid((s_j - t) / tau) = k, for 1 <= k < L.
double solve_threshold(std::span<const double> scores, std::size_t k, double tau) {
  const auto [mn, mx] = std::minmax_element(scores.begin(), scores.end());
  double lo = *mn - 50.0 * tau, hi = *mx + 50.0 * tau;
  const double target = static_cast<double>(k);
  double t = 0.5 * (lo + hi);
  for (int it = 0; it < 200; ++it) {
    double mass = 0.0, slope = 0.0;
    for (double s : scores) {
      const double a = sigmoid((s - t) / tau);
      mass += a;
      slope += a * (1.0 - a) / tau;
    }
    const double f = mass - target;
    if (f == 0.0) break;
    // mass decreases in t.
    (f > 0.0 ? lo : hi) = t;
    double next = slope > 0.0 ? t + f / slope : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (next == t || hi - lo <= 4.0 * std::numeric_limits<double>::epsilon() * std::fabs(t)) break;
    t = next;
  }
  return t;
}

std::vector<double> threshold_alpha(std::span<const double> scores, std::size_t k, double tau) {
  if (k == scores.size()) return std::vector<double>(scores.size(), 1.0);
  const double t = solve_threshold(scores, k, tau);
  std::vector<double> alpha(scores.size());
  for (std::size_t j = 0; j < scores.size(); ++j) alpha[j] = sigmoid((scores[j] - t) / tau);
  return alpha;
}

grad::Var iterative_softmax(grad::Var scores, std::size_t k, double tau) {
  grad::Var w = scores;
  grad::Var total = grad::scale(scores, 0.0);
  for (std::size_t r = 0; r < k; ++r) {
    grad::Var kappa = grad::softmax(grad::scale(w, 1.0 / tau), 0);
    total = grad::add(total, kappa);
    if (r + 1 < k) {
      w = grad::add(w, grad::log(grad::add_scalar(grad::scale(kappa, -1.0), 1.0), 1e-12));
    }
  }
  return grad::clamp(total, 0.0, 1.0);
}

}  // namespace

std::string to_string(Relaxation r) {
  return r == Relaxation::kThreshold ? "threshold" : "iterative-softmax";
}

Relaxation relaxation_from_string(const std::string& name) {
  if (name == "threshold") return Relaxation::kThreshold;
  if (name == "iterative-softmax") return Relaxation::kIterativeSoftmax;
  throw std::invalid_argument("unknown relaxation '" + name + "'");
}

void RelaxedTopKConfig::validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw std::invalid_argument("relaxed top-k temperature must be positive");
  }
}

void SubnetSpec::validate(std::size_t layers) const {
  if (sizes.empty()) throw std::invalid_argument("subnet spec is empty");
  if (sizes.front() != layers) {
    throw std::invalid_argument("subnet spec must start with the full layer count " +
                                std::to_string(layers));
  }
  for (std::size_t i = 1; i < sizes.size(); ++i) {
    if (sizes[i] >= sizes[i - 1]) throw std::invalid_argument("subnet sizes must strictly decrease");
  }
  if (sizes.back() < 1) throw std::invalid_argument("subnet sizes must be positive");
}

std::vector<std::size_t> rank_layers(std::span<const double> scores) {
  check_finite(scores);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

std::vector<double> hard_topk_mask(std::span<const double> scores, std::size_t k) {
  check_k("hard_topk_mask", k, scores.size());
  const auto order = rank_layers(scores);
  std::vector<double> mask(scores.size(), 0.0);
  for (std::size_t i = 0; i < k; ++i) mask[order[i]] = 1.0;
  return mask;
}

std::vector<double> relaxed_topk(std::span<const double> scores, std::size_t k,
                                 const RelaxedTopKConfig& config) {
  check_k("relaxed_topk", k, scores.size());
  check_finite(scores);
  config.validate();
  if (config.method == Relaxation::kThreshold) {
    return threshold_alpha(scores, k, config.temperature);
  }
  grad::Tape tape(false);
  grad::Var s = tape.constant(Tensor::vector({scores.begin(), scores.end()}));
  return iterative_softmax(s, k, config.temperature).value().data;
}

grad::Var relaxed_topk(grad::Var scores, std::size_t k, const RelaxedTopKConfig& config) {
  const Tensor& sv = scores.value();
  if (sv.rank() != 1) throw ShapeError("relaxed_topk: scores must be a vector, got " + dynenc::to_string(sv.shape));
  check_k("relaxed_topk", k, sv.size());
  check_finite(sv.data);
  config.validate();
  if (config.method == Relaxation::kIterativeSoftmax) {
    return iterative_softmax(scores, k, config.temperature);
  }
  const double tau = config.temperature;
  Tensor alpha = Tensor::vector(threshold_alpha(sv.data, k, tau));
  return scores.tape->record("relaxed_topk", std::move(alpha), {scores},
                             [tau](grad::BackwardContext& ctx) {
    auto gs = ctx.input_grad(0);
    if (gs.empty()) return;
    const auto& alpha = ctx.out_value();
    auto gy = ctx.out_grad();
    // J = diag(d) - d d^T / sum(d) with d_j = alpha_j (1 - alpha_j) / tau.
    std::vector<double> d(alpha.size());
    double dsum = 0.0, dg = 0.0;
    for (std::size_t j = 0; j < d.size(); ++j) {
      d[j] = alpha[j] * (1.0 - alpha[j]) / tau;
      dsum += d[j];
      dg += d[j] * gy[j];
    }
    const double shift = dsum > 0.0 ? dg / dsum : 0.0;
    for (std::size_t j = 0; j < d.size(); ++j) gs[j] += d[j] * (gy[j] - shift);
  });
}

grad::Var simple_topk_gate(grad::Var scores, std::size_t k, const RelaxedTopKConfig& config) {
  const Tensor& sv = scores.value();
  if (sv.rank() != 1) {
    throw ShapeError("simple_topk_gate: scores must be a vector, got " + dynenc::to_string(sv.shape));
  }
  config.validate();
  Tensor mask = Tensor::vector(hard_topk_mask(sv.data, k));
  return scores.tape->record("simple_topk_gate", std::move(mask), {scores},
                             [k, config](grad::BackwardContext& ctx) {
    auto gs = ctx.input_grad(0);
    if (gs.empty()) return;
    grad::Tape inner;
    grad::Var s = inner.leaf(ctx.input(0));
    auto gy = ctx.out_grad();
    grad::Var alpha = relaxed_topk(s, k, config);
    grad::Var probe = inner.constant(Tensor::vector({gy.begin(), gy.end()}));
    inner.backward(grad::sum_all(grad::mul(alpha, probe)));
    const auto g = inner.grad(s);
    for (std::size_t j = 0; j < gs.size(); ++j) gs[j] += g[j];
  });
}

bool ZeroOutState::is_suppressed(std::size_t layer) const {
  return std::binary_search(suppressed.begin(), suppressed.end(), layer);
}

ZeroOutState zero_out_update(std::span<const double> scores, std::size_t k) {
  check_k("zero_out_update", k, scores.size());
  const auto order = rank_layers(scores);
  ZeroOutState state;
  state.target = k;
  state.suppressed.assign(order.begin() + static_cast<std::ptrdiff_t>(k), order.end());
  std::sort(state.suppressed.begin(), state.suppressed.end());
  return state;
}

grad::Var zero_out_gate(grad::Var scores, const ZeroOutState& state) {
  const Tensor& sv = scores.value();
  if (sv.rank() != 1) {
    throw ShapeError("zero_out_gate: scores must be a vector, got " + dynenc::to_string(sv.shape));
  }
  Tensor keep = Tensor::filled(sv.shape, 1.0);
  for (std::size_t j : state.suppressed) {
    if (j >= sv.size()) throw std::invalid_argument("zero_out_gate: suppressed index out of range");
    keep[j] = 0.0;
  }
  return grad::mul(grad::sigmoid(scores), scores.tape->constant(std::move(keep)));
}

grad::Var sparsity_penalty(grad::Var gate, std::size_t k, double gamma) {
  if (gamma < 0.0) throw std::invalid_argument("sparsity_penalty: gamma must be non-negative");
  const double layers = static_cast<double>(gate.value().size());
  grad::Var excess = grad::add_scalar(grad::sum_all(gate), -static_cast<double>(k));
  return grad::scale(grad::abs(excess), gamma / layers);
}

std::vector<std::vector<double>> masks_from_scores(std::span<const double> scores,
                                                   const SubnetSpec& spec) {
  spec.validate(scores.size());
  std::vector<std::vector<double>> masks;
  masks.reserve(spec.count());
  for (std::size_t k : spec.sizes) masks.push_back(hard_topk_mask(scores, k));
  return masks;
}

std::vector<std::size_t> droppable_layers(std::span<const double> scores, std::size_t k_min) {
  const auto keep = hard_topk_mask(scores, k_min);
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < keep.size(); ++j) {
    if (keep[j] == 0.0) out.push_back(j);
  }
  return out;
}

}  // namespace dynenc::pruning
