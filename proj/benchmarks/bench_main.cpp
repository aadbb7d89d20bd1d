// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <numeric>

#include <benchmark/benchmark.h>

#include "dynenc/config.hpp"
#include "dynenc/ctc.hpp"
#include "dynenc/data.hpp"
#include "dynenc/encoder.hpp"
#include "dynenc/pipeline.hpp"
#include "dynenc/pruning.hpp"
#include "dynenc/rng.hpp"

namespace {

using namespace dynenc;

std::vector<double> random_log_probs(std::size_t frames, std::size_t vocab, Rng& rng) {
  std::vector<double> lp(frames * vocab);
  for (std::size_t t = 0; t < frames; ++t) {
    double z = 0.0;
    for (std::size_t v = 0; v < vocab; ++v) z += lp[t * vocab + v] = std::exp(normal(rng));
    for (std::size_t v = 0; v < vocab; ++v) lp[t * vocab + v] = std::log(lp[t * vocab + v] / z);
  }
  return lp;
}

void BM_CtcForwardBackward(benchmark::State& state) {
  const auto frames = static_cast<std::size_t>(state.range(0));
  const std::size_t vocab = 32;
  Rng rng(1);
  const auto lp = random_log_probs(frames, vocab, rng);
  ctc::LabelSeq labels;
  while (labels.size() < frames / 4) {
    const int s = 1 + static_cast<int>(uniform_index(rng, vocab - 1));
    if (labels.empty() || labels.back() != s) labels.push_back(s);
  }
  for (auto _ : state) {
    auto r = ctc::forward_backward(lp, frames, vocab, labels);
    benchmark::DoNotOptimize(r.loss);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(frames));
}
BENCHMARK(BM_CtcForwardBackward)->Arg(32)->Arg(64)->Arg(128)->Arg(256);

void BM_RelaxedTopK(benchmark::State& state) {
  const auto layers = static_cast<std::size_t>(state.range(0));
  pruning::RelaxedTopKConfig cfg;
  cfg.method = state.range(1) == 0 ? pruning::Relaxation::kThreshold
                                   : pruning::Relaxation::kIterativeSoftmax;
  Rng rng(2);
  std::vector<double> scores(layers);
  for (auto& s : scores) s = normal(rng);
  for (auto _ : state) {
    auto a = pruning::relaxed_topk(scores, layers / 2, cfg);
    benchmark::DoNotOptimize(a.data());
  }
  state.SetLabel(pruning::to_string(cfg.method));
}
BENCHMARK(BM_RelaxedTopK)->ArgsProduct({{32, 48, 128}, {0, 1}});

config::RunConfig default_run() {
  config::RunConfig r;
  config::finalize(r);
  return r;
}

struct EncoderFixture {
  config::RunConfig run = default_run();
  data::Dataset ds = data::gen_dataset(run.data, run.data_seed);
  encoder::Encoder enc{run.encoder, 3};
  data::Batch batch;

  EncoderFixture() {
    std::vector<std::size_t> idx(16);
    std::iota(idx.begin(), idx.end(), 0);
    batch = data::make_batch(ds.train, idx);
  }
};

// Full encoder at the default size, batch of 16. Arg: active layers.
void BM_EncoderForward(benchmark::State& state) {
  EncoderFixture f;
  std::vector<double> g(f.enc.config().layers(), 0.0);
  std::fill_n(g.begin(), state.range(0), 1.0);
  const auto gate = encoder::Gate::constant(g);
  for (auto _ : state) {
    grad::Tape tape(false);
    auto out = f.enc.forward(tape, f.batch.features, f.batch.segments, {.gate = &gate});
    benchmark::DoNotOptimize(out.log_probs.value().data.data());
  }
}
BENCHMARK(BM_EncoderForward)->Arg(32)->Arg(16)->Arg(8)->Unit(benchmark::kMillisecond);

void BM_EncoderForwardBackward(benchmark::State& state) {
  EncoderFixture f;
  for (auto _ : state) {
    grad::Tape tape;
    auto out = f.enc.forward(tape, f.batch.features, f.batch.segments);
    auto loss = ctc::batch_loss(out.log_probs, out.segments, f.batch.labels);
    tape.backward(loss.mean);
    f.enc.params().zero_grad();
  }
}
BENCHMARK(BM_EncoderForwardBackward)->Unit(benchmark::kMillisecond);

// One optimizer step per mode: 0 separate, 1 joint (step 1), 2 aux-loss.
void BM_TrainStep(benchmark::State& state) {
  config::RunConfig run = default_run();
  const data::Dataset ds = data::gen_dataset(run.data, run.data_seed);
  pipeline::TrainConfig cfg = run.train;
  cfg.mode = state.range(0) == 0   ? pipeline::Mode::kSeparate
             : state.range(0) == 1 ? pipeline::Mode::kJoint
                                   : pipeline::Mode::kAuxLoss;
  cfg.steps = 1000000;
  cfg.validate(run.encoder.layers(), run.encoder.blocks);
  pipeline::Trainer trainer(run.encoder, cfg, ds);
  for (auto _ : state) benchmark::DoNotOptimize(trainer.train_step().step);
  state.SetLabel(pipeline::to_string(cfg.mode));
}
BENCHMARK(BM_TrainStep)->DenseRange(0, 2)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
