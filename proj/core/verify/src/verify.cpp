// SPDX-License-Identifier: Apache-2.0
#include "dynenc/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>
#include <sstream>

#include "dynenc/ctc.hpp"
#include "dynenc/encoder.hpp"
#include "dynenc/grad_cases.hpp"
#include "dynenc/gradcheck.hpp"
#include "dynenc/ops.hpp"
#include "dynenc/oracles.hpp"
#include "dynenc/pipeline.hpp"
#include "dynenc/pruning.hpp"

namespace dynenc::verify {

namespace {

using grad::Tape;
using grad::Var;
using Vec = std::vector<double>;

constexpr double kEps = 1e-5;
constexpr double kTol = 1e-5;

class Timer {
 public:
  explicit Timer(SuiteResult& r) : r_(r), start_(std::chrono::steady_clock::now()) {}
  ~Timer() {
    r_.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  SuiteResult& r_;
  std::chrono::steady_clock::time_point start_;
};

double sum(const Vec& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

Tensor random_log_probs(Rng& rng, std::size_t frames, std::size_t vocab) {
  Tape tape(false);
  return grad::log_softmax(tape.constant(grad::random_tensor(rng, {frames, vocab})), 1).value();
}

ctc::LabelSeq random_labels(Rng& rng, std::size_t max_len, std::size_t vocab) {
  ctc::LabelSeq l(uniform_index(rng, max_len + 1));
  for (int& s : l) s = 1 + static_cast<int>(uniform_index(rng, vocab - 1));
  return l;
}

// Records one finite-difference check under `name`.
void check_fd(SuiteResult& r, const std::string& name, const grad::ScalarFunction& f,
              const Tensor& x) {
  const auto report = grad::finite_difference_check(f, x, kEps, kTol);
  r.max_error = std::max(r.max_error, report.max_rel_error);
  r.expect(report.passed, name);
}

encoder::EncoderConfig tiny_encoder() {
  encoder::EncoderConfig c;
  c.blocks = 2;
  c.model_dim = 8;
  c.ff_dim = 16;
  c.heads = 2;
  c.conv_kernel = 3;
  c.input_dim = 5;
  c.vocab = 4;
  return c;
}

}  // namespace

void SuiteResult::expect(bool ok, const std::string& what) {
  ++checks;
  if (ok) return;
  passed = false;
  if (std::find(failures.begin(), failures.end(), what) == failures.end()) failures.push_back(what);
}

std::string SuiteResult::summary() const {
  std::ostringstream out;
  out << (passed ? "PASS " : "FAIL ") << name << ": " << checks << " checks, max error "
      << max_error << ", " << seconds << " s";
  if (!passed) {
    out << "; failing:";
    for (const auto& f : failures) out << ' ' << f;
  }
  return out.str();
}

SuiteResult gradient_suite(const Options& o) {
  SuiteResult r{.name = "gradients"};
  Timer timer(r);
  for (std::size_t s = 0; s < o.grad_seeds; ++s) {
    for (const auto& c : grad::primitive_grad_cases(derive_seed(o.seed, s))) {
      check_fd(r, c.op, c.f, c.input);
    }
  }

  Rng rng(derive_seed(o.seed, 0x6374'63ULL));
  for (int n = 0; n < 20; ++n) {
    const ctc::LabelSeq labels = random_labels(rng, 3, 5);
    const std::size_t frames = ctc::min_frames(labels) + uniform_index(rng, 4);
    check_fd(r, "ctc_loss",
             [&](Tape&, Var x) { return ctc::loss(grad::log_softmax(x, 1), labels); },
             grad::random_tensor(rng, {frames, 5}));
  }

  for (auto method : {pruning::Relaxation::kThreshold, pruning::Relaxation::kIterativeSoftmax}) {
    for (int n = 0; n < 20; ++n) {
      const std::size_t layers = 2 + uniform_index(rng, 10);
      const std::size_t k = 1 + uniform_index(rng, layers);
      const pruning::RelaxedTopKConfig cfg{0.5 + uniform01(rng), method};
      const std::uint64_t wseed = rng();
      check_fd(r, "relaxed_topk",
               [&](Tape&, Var x) {
                 Rng w(wseed);
                 return grad::weighted_sum(pruning::relaxed_topk(x, k, cfg), w);
               },
               grad::random_tensor(rng, {layers}));
    }
  }

  // The straight-through gate is piecewise constant forward, so its backward
  // is compared with central differences of the relaxed surrogate.
  for (int n = 0; n < 20; ++n) {
    const std::size_t layers = 2 + uniform_index(rng, 10);
    const std::size_t k = 1 + uniform_index(rng, layers);
    const pruning::RelaxedTopKConfig cfg{0.5 + uniform01(rng)};
    const std::uint64_t wseed = rng();
    const Tensor x0 = grad::random_tensor(rng, {layers});
    const auto surrogate = grad::finite_difference_check(
        [&](Tape&, Var x) {
          Rng w(wseed);
          return grad::weighted_sum(pruning::relaxed_topk(x, k, cfg), w);
        },
        x0, kEps, kTol);
    Tape tape;
    Var x = tape.leaf(x0);
    Rng w(wseed);
    tape.backward(grad::weighted_sum(pruning::simple_topk_gate(x, k, cfg), w));
    const Vec ste = tape.grad(x);
    double scale = 0.0, diff = 0.0;
    for (std::size_t j = 0; j < layers; ++j) {
      scale = std::max({scale, std::fabs(ste[j]), std::fabs(surrogate.numeric[j])});
      diff = std::max(diff, std::fabs(ste[j] - surrogate.numeric[j]));
    }
    const double rel = scale > 0.0 ? diff / scale : 0.0;
    r.max_error = std::max(r.max_error, rel);
    r.expect(rel <= kTol, "simple_topk_gate");
  }

  for (int n = 0; n < 20; ++n) {
    const std::size_t layers = 2 + uniform_index(rng, 10);
    const std::size_t k = 1 + uniform_index(rng, layers);
    const Tensor x0 = grad::random_tensor(rng, {layers});
    const pruning::ZeroOutState st = pruning::zero_out_update(x0.data, k);
    const std::uint64_t wseed = rng();
    check_fd(r, "zero_out_gate",
             [&](Tape&, Var x) {
               Rng w(wseed);
               return grad::weighted_sum(pruning::zero_out_gate(x, st), w);
             },
             x0);
    // Away from the kink of |sum(g) - k|.
    const double gamma = 0.5 + uniform01(rng);
    Tensor g0({layers});
    for (double& v : g0.data) v = uniform01(rng);
    if (std::fabs(sum(g0.data) - static_cast<double>(k)) > 1e-2) {
      check_fd(r, "sparsity_penalty",
               [&](Tape&, Var g) { return pruning::sparsity_penalty(g, k, gamma); }, g0);
    }
  }

  for (int n = 0; n < 3; ++n) {
    encoder::Encoder enc(tiny_encoder(), rng());
    const grad::Segments seg{{5 + uniform_index(rng, 3), 3 + uniform_index(rng, 3)}};
    const Tensor feats = grad::random_tensor(rng, {seg.total(), 5});
    Tensor g0({enc.config().layers()});
    for (double& v : g0.data) v = uniform01(rng);
    const std::uint64_t wseed = rng();
    check_fd(r, "encoder_gate",
             [&](Tape& tape, Var g) {
               encoder::Gate gate = encoder::Gate::from_var(g);
               Rng w(wseed);
               return grad::weighted_sum(enc.forward(tape, feats, seg, {.gate = &gate}).log_probs, w);
             },
             g0);
  }
  return r;
}

SuiteResult ctc_suite(const Options& o) {
  SuiteResult r{.name = "ctc-oracle"};
  Timer timer(r);
  Rng rng(derive_seed(o.seed, 0x6f72'6163ULL));
  for (std::size_t n = 0; n < o.ctc_instances; ++n) {
    const std::size_t frames = 1 + uniform_index(rng, 6);
    const std::size_t vocab = 2 + uniform_index(rng, 3);
    const ctc::LabelSeq labels = random_labels(rng, 3, vocab);
    const Tensor lp = random_log_probs(rng, frames, vocab);
    const double dp = ctc::forward_backward(lp.data, frames, vocab, labels).loss;
    const double ref = oracle::ctc_brute_force(lp.data, frames, vocab, labels);
    const std::string name = "instance " + std::to_string(n);
    if (std::isinf(ref)) {
      r.expect(std::isinf(dp), name);
      continue;
    }
    r.max_error = std::max(r.max_error, std::fabs(dp - ref));
    r.expect(std::fabs(dp - ref) <= 1e-9, name);
  }
  return r;
}

SuiteResult relaxed_topk_suite(const Options& o) {
  SuiteResult r{.name = "relaxed-topk"};
  Timer timer(r);
  Rng rng(derive_seed(o.seed, 0x746f'706bULL));
  for (std::size_t n = 0; n < o.topk_triples; ++n) {
    const std::size_t layers = 1 + uniform_index(rng, 48);
    const std::size_t k = 1 + uniform_index(rng, layers);
    const double tau = std::exp(std::log(1e-2) + uniform01(rng) * std::log(1e4));
    Vec s(layers);
    for (double& v : s) v = 3.0 * normal(rng);
    const Vec a = pruning::relaxed_topk(s, k, {tau});
    const double err = std::fabs(sum(a) - static_cast<double>(k));
    r.max_error = std::max(r.max_error, err);
    r.expect(err <= 1e-9, "sum(alpha) = k");
    r.expect(std::all_of(a.begin(), a.end(), [](double v) { return v >= 0.0 && v <= 1.0; }),
             "alpha in [0, 1]");
    if (n % 5 == 0) {
      const Vec ref = oracle::soft_topk_bisection(s, k, tau);
      double d = 0.0;
      for (std::size_t j = 0; j < layers; ++j) d = std::max(d, std::fabs(a[j] - ref[j]));
      r.expect(d <= 1e-9, "bisection oracle");
    }
  }
  for (std::size_t n = 0; n < o.topk_triples / 5; ++n) {
    const std::size_t layers = 2 + uniform_index(rng, 30);
    const std::size_t k = 1 + uniform_index(rng, layers);
    Vec s(layers);
    double level = normal(rng);
    for (double& v : s) v = level += 0.5 + uniform01(rng);
    std::shuffle(s.begin(), s.end(), rng);
    const Vec a = pruning::relaxed_topk(s, k, {0.01});
    const Vec h = pruning::hard_topk_mask(s, k);
    double d = 0.0;
    for (std::size_t j = 0; j < layers; ++j) d = std::max(d, std::fabs(a[j] - h[j]));
    r.expect(d < 1e-3, "hard-mask limit at tau 0.01");
  }
  return r;
}

SuiteResult mask_suite(const Options& o) {
  SuiteResult r{.name = "masks"};
  Timer timer(r);
  Rng rng(derive_seed(o.seed, 0x6d61'736bULL));
  for (std::size_t n = 0; n < o.mask_trials; ++n) {
    const std::size_t layers = 1 + uniform_index(rng, 48);
    Vec s(layers);
    for (double& v : s) v = std::round(2.0 * normal(rng));  // coarse, so ties occur
    pruning::SubnetSpec spec{{layers}};
    while (spec.sizes.back() > 1 && uniform01(rng) < 0.7) {
      spec.sizes.push_back(1 + uniform_index(rng, spec.sizes.back() - 1));
    }
    const auto masks = pruning::masks_from_scores(s, spec);
    r.expect(masks.size() == spec.count(), "one mask per size");
    for (std::size_t m = 0; m < masks.size(); ++m) {
      r.expect(sum(masks[m]) == static_cast<double>(spec.sizes[m]), "cardinality");
      if (m == 0) continue;
      bool nested = true;
      for (std::size_t j = 0; j < layers; ++j) nested = nested && masks[m][j] <= masks[m - 1][j];
      r.expect(nested, "nestedness");
    }
    const auto drop = pruning::droppable_layers(s, spec.smallest());
    bool complement = drop.size() == layers - spec.smallest();
    for (std::size_t j : drop) complement = complement && masks.back()[j] == 0.0;
    r.expect(complement, "droppable set");

    const std::size_t k = 1 + uniform_index(rng, layers);
    const auto st = pruning::zero_out_update(s, k);
    r.expect(st.suppressed.size() == layers - k, "|suppressed| = L - k");
    double lowest_kept = INFINITY, highest_cut = -INFINITY;
    for (std::size_t j = 0; j < layers; ++j) {
      if (st.is_suppressed(j)) highest_cut = std::max(highest_cut, s[j]);
      else lowest_kept = std::min(lowest_kept, s[j]);
    }
    r.expect(highest_cut <= lowest_kept, "suppresses the lowest scores");
  }

  // Layer 0 falls below a suppressed layer, so layer 2 comes back.
  const auto before = pruning::zero_out_update(Vec{3, 2, 1, 0}, 2);
  r.expect(before.suppressed == std::vector<std::size_t>{2, 3}, "initial suppression");
  const auto after = pruning::zero_out_update(Vec{-1, 2, 1, 0}, 2);
  r.expect(after.suppressed == std::vector<std::size_t>{0, 3}, "score crossing");
  r.expect(!after.is_suppressed(2), "revival");
  return r;
}

SuiteResult schedule_suite(const Options&) {
  SuiteResult r{.name = "schedules"};
  Timer timer(r);
  r.expect(pipeline::k_schedule(32, 48, 16, 32) == 16, "k(32) of 48 -> 16");
  r.expect(pipeline::k_schedule(16, 48, 16, 32) == 32, "k(16) of 48 -> 16");
  r.expect(pipeline::k_schedule(5, 48, 12, 32) == 42, "k(5) of 48 -> 12");
  for (std::size_t layers : {8, 32, 48}) {
    for (std::size_t k_min = 1; k_min <= layers; k_min += 3) {
      for (std::size_t iters : {1, 2, 4, 8, 32}) {
        std::size_t prev = layers;
        for (std::size_t i = 1; i <= iters; ++i) {
          const std::size_t k = pipeline::k_schedule(i, layers, k_min, iters);
          r.expect(k <= prev && k >= k_min, "k non-increasing within [k_min, L]");
          prev = k;
        }
        r.expect(prev == k_min, "k(I) = k_min");
      }
    }
  }

  for (std::size_t iters : {1, 2, 4, 8, 32}) {
    pipeline::TrainConfig c;
    c.iterations = iters;
    const std::size_t n1 = c.step1_steps();
    r.expect(n1 == 3600, "Step 1 takes floor(0.6 N) steps");
    std::vector<std::size_t> per(iters + 1, 0);
    bool monotone = true;
    for (std::size_t step = 0; step < c.steps; ++step) {
      const std::size_t i = c.iteration_at(step);
      if (step < n1) monotone = monotone && i >= 1 && (step == 0 || i >= c.iteration_at(step - 1));
      else monotone = monotone && i == 0;
      ++per[i];
    }
    r.expect(monotone, "iterations advance in order");
    bool counts = per[0] == c.steps - n1;
    for (std::size_t i = 1; i < iters; ++i) counts = counts && per[i] == c.iteration_steps();
    counts = counts && per[iters] == n1 - (iters - 1) * c.iteration_steps();
    r.expect(counts, "I iterations of " + std::to_string(c.iteration_steps()) + " steps");
  }

  const pipeline::OclrConfig lr;
  for (std::size_t n : {6000, 1000, 777}) {
    const std::size_t warm = static_cast<std::size_t>(std::llround(0.45 * static_cast<double>(n)));
    r.expect(pipeline::oclr_lr(0, n, lr) == 4e-6, "lr(0) = 4e-6");
    r.expect(n % 20 != 0 || pipeline::oclr_lr(warm, n, lr) == 4e-4, "lr(0.45 N) = 4e-4");
    r.expect(pipeline::oclr_lr(n - 1, n, lr) == 1e-7, "lr(N - 1) = 1e-7");
    double peak = 0.0;
    for (std::size_t s = 0; s < n; ++s) peak = std::max(peak, pipeline::oclr_lr(s, n, lr));
    r.expect(peak <= 4e-4, "lr never exceeds the peak");
  }
  return r;
}

std::vector<SuiteResult> run_all(const Options& options) {
  return {gradient_suite(options), ctc_suite(options), relaxed_topk_suite(options),
          mask_suite(options), schedule_suite(options)};
}

}  // namespace dynenc::verify
