// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include <unistd.h>

#include "dynenc/pipeline.hpp"
#include "fixtures.hpp"

namespace dynenc::pipeline {
namespace {

using testing::tiny_encoder;
using testing::tiny_task;
using testing::tiny_train;

std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() /
             ("dynenc_test_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  return dir;
}

TEST(KSchedule, Examples) {
  EXPECT_EQ(k_schedule(32, 48, 16, 32), 16u);
  EXPECT_EQ(k_schedule(16, 48, 16, 32), 32u);
  EXPECT_EQ(k_schedule(5, 48, 12, 32), 42u);  // 42.375
  EXPECT_EQ(k_schedule(1, 32, 8, 1), 8u);
  EXPECT_EQ(k_schedule(1, 32, 8, 32), 31u);  // 31.25
  EXPECT_THROW(k_schedule(0, 32, 8, 4), std::invalid_argument);
  EXPECT_THROW(k_schedule(5, 32, 8, 4), std::invalid_argument);
  EXPECT_THROW(k_schedule(1, 8, 9, 4), std::invalid_argument);
}

TEST(KSchedule, HalvesRoundAwayFromZero) {
  // 32 - 24 * 1 / 16 = 30.5
  EXPECT_EQ(k_schedule(1, 32, 8, 16), 31u);
}

TEST(Oclr, AnchorValues) {
  const OclrConfig c;
  EXPECT_EQ(oclr_lr(0, 6000, c), 4e-6);
  EXPECT_EQ(oclr_lr(2700, 6000, c), 4e-4);
  EXPECT_EQ(oclr_lr(5400, 6000, c), 4e-6);
  EXPECT_EQ(oclr_lr(5999, 6000, c), 1e-7);
  EXPECT_NEAR(oclr_lr(1350, 6000, c), 0.5 * (4e-6 + 4e-4), 1e-18);
}

TEST(Sandwich, SelectsLargestSmallestAndOneMedium) {
  Rng rng(1);
  EXPECT_EQ(sandwich_select(rng, 2), (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(sandwich_select(rng, 3), (std::vector<std::size_t>{0, 1, 2}));
  std::map<std::size_t, int> hits;
  for (int n = 0; n < 4000; ++n) {
    const auto s = sandwich_select(rng, 6);
    ASSERT_EQ(s.size(), 3u);
    EXPECT_EQ(s.front(), 0u);
    EXPECT_EQ(s.back(), 5u);
    ++hits[s[1]];
  }
  ASSERT_EQ(hits.size(), 4u);
  for (const auto& [m, n] : hits) {
    EXPECT_GE(m, 1u);
    EXPECT_LE(m, 4u);
    EXPECT_NEAR(n, 1000, 150);
  }
  EXPECT_THROW(sandwich_select(rng, 1), std::invalid_argument);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  grad::Parameter p{"w", Tensor::vector({1.0, -2.0}), {0.0, 0.0}};
  Adam adam({&p});
  EXPECT_TRUE(adam.step(1e-2));
  EXPECT_EQ(p.value.data, (std::vector<double>{1.0, -2.0}));
}

TEST(Adam, FirstStepMovesByLearningRateAgainstTheGradientSign) {
  grad::Parameter p{"w", Tensor::vector({1.0, -2.0}), {3.0, -0.5}};
  Adam adam({&p});
  adam.step(1e-2);
  EXPECT_NEAR(p.value[0], 1.0 - 1e-2, 1e-10);
  EXPECT_NEAR(p.value[1], -2.0 + 1e-2, 1e-9);
}

TEST(Adam, ScaleZeroFreezesAParameter) {
  grad::Parameter a{"a", Tensor::vector({1.0}), {1.0}};
  grad::Parameter b{"b", Tensor::vector({1.0}), {1.0}};
  Adam adam({&a, &b});
  adam.step(0.1, [&](const grad::Parameter& p) { return &p == &b ? 0.0 : 1.0; });
  EXPECT_LT(a.value[0], 1.0);
  EXPECT_EQ(b.value[0], 1.0);
}

TEST(Adam, NonFiniteGradientSkipsTheUpdate) {
  grad::Parameter p{"w", Tensor::vector({1.0, 2.0}), {0.5, NAN}};
  Adam adam({&p});
  EXPECT_FALSE(adam.step(0.1));
  EXPECT_EQ(p.value.data, (std::vector<double>{1.0, 2.0}));
  EXPECT_EQ(adam.t(), 0u);
}

TEST(TrainConfig, StepBudgetAndIterations) {
  TrainConfig c;
  EXPECT_EQ(c.step1_steps(), 3600u);
  EXPECT_EQ(c.iteration_steps(), 112u);
  EXPECT_EQ(c.iteration_at(0), 1u);
  EXPECT_EQ(c.iteration_at(111), 1u);
  EXPECT_EQ(c.iteration_at(112), 2u);
  EXPECT_EQ(c.iteration_at(3599), 32u);  // the last iteration absorbs the remainder
  EXPECT_EQ(c.iteration_at(3600), 0u);
  c.mode = Mode::kSeparate;
  EXPECT_EQ(c.step1_steps(), 0u);
}

TEST(TrainConfig, ValidationNamesTheKey) {
  TrainConfig c;
  c.layer_dropout = 1.0;
  try {
    c.validate(32, 8);
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_EQ(std::string(e.what()).rfind("pipeline.layer_dropout", 0), 0u);
  }
  c = TrainConfig{};
  c.subnets = {32, 16, 16};
  EXPECT_THROW(c.validate(32, 8), std::invalid_argument);
  c.subnets = {24, 8};
  EXPECT_THROW(c.validate(32, 8), std::invalid_argument);
}

class TrainerTest : public ::testing::Test {
 protected:
  data::Dataset ds = data::gen_dataset(tiny_task(), 5);
};

TEST_F(TrainerTest, DegenerateJointMatchesSupernetGradients) {
  TrainConfig joint = tiny_train();
  joint.subnet_scale = 0.0;
  joint.layer_dropout = 0.0;
  TrainConfig plain = joint;
  plain.mode = Mode::kSeparate;
  plain.separate_layers = 8;
  Trainer a(tiny_encoder(), joint, ds);
  Trainer b(tiny_encoder(), plain, ds);
  const data::Batch fixed = data::make_batch(ds.train, {0, 3, 5, 7});
  std::set<std::string> phases;
  while (!a.done()) {
    phases.insert(a.phase());
    a.loss_and_gradients(fixed);
    b.loss_and_gradients(fixed);
    double worst = 0.0;
    for (const auto& p : a.encoder().params()) {
      const auto& q = b.encoder().params().get(p.name);
      for (std::size_t i = 0; i < p.grad.size(); ++i) {
        worst = std::max(worst, std::fabs(p.grad[i] - q.grad[i]));
      }
    }
    EXPECT_LE(worst, 1e-12) << "step " << a.step();
    a.train_step();
    b.train_step();
  }
  EXPECT_EQ(phases, (std::set<std::string>{"step1", "step2"}));
}

TEST_F(TrainerTest, StepTwoRunsMinOfMAndThreeForwards) {
  const std::vector<std::vector<std::size_t>> specs = {
      {8, 4}, {8, 6, 4}, {8, 6, 4, 2}, {8, 7, 6, 5, 4, 3}};
  for (const auto& subnets : specs) {
    TrainConfig c = tiny_train();
    c.subnets = subnets;
    Trainer t(tiny_encoder(), c, ds);
    t.step1_train();
    while (!t.done()) {
      encoder::reset_forward_count();
      const StepRecord r = t.train_step();
      EXPECT_EQ(encoder::forward_count(), std::min<std::size_t>(subnets.size(), 3));
      EXPECT_EQ(r.selected.size(), std::min<std::size_t>(subnets.size(), 3));
      EXPECT_EQ(r.selected.front(), 8u);
      EXPECT_EQ(r.selected.back(), subnets.back());
    }
  }
}

TEST_F(TrainerTest, StepOneSchedulesKAndFreezesMasks) {
  TrainConfig c = tiny_train();
  c.steps = 20;
  c.iterations = 4;
  c.score_lr_scale = 50.0;
  Trainer t(tiny_encoder(), c, ds);
  std::vector<std::size_t> ks;
  t.step1_train([&](const StepRecord& r) {
    EXPECT_EQ(r.phase, "step1");
    EXPECT_TRUE(r.losses.count("supernet"));
    EXPECT_TRUE(r.losses.count("k" + std::to_string(r.k)));
    ks.push_back(r.k);
  });
  EXPECT_EQ(ks, (std::vector<std::size_t>{7, 7, 6, 6, 5, 5, 4, 4, 4, 4}));
  const auto scores = t.scores();
  const auto masks = t.masks();
  EXPECT_EQ(masks, pruning::masks_from_scores(scores, {{8, 4}}));
  EXPECT_NE(scores, std::vector<double>(8, 0.0));
  t.step2_train();
  EXPECT_EQ(t.scores(), scores);
  EXPECT_EQ(t.masks(), masks);
  const MaskExport e = t.mask_export();
  EXPECT_EQ(e.sizes, (std::vector<std::size_t>{8, 4}));
  EXPECT_EQ(MaskExport::from_json(e.to_json()).masks, masks);
}

TEST_F(TrainerTest, ZeroOutSuppressesAtIterationBoundaries) {
  TrainConfig c = tiny_train();
  c.method = Method::kIterativeZeroOut;
  c.steps = 20;
  c.iterations = 4;
  Trainer t(tiny_encoder(), c, ds);
  EXPECT_TRUE(t.zero_out_state().suppressed.empty());
  t.step1_train([&](const StepRecord& r) {
    ASSERT_TRUE(r.penalty.has_value());
    EXPECT_GE(*r.penalty, 0.0);
    // Boundaries fall every two steps; the last iteration ends with Step 1.
    if (t.step() % 2 == 0 && (r.iteration < 4 || t.step() == 10)) {
      EXPECT_EQ(t.zero_out_state().suppressed.size(), 8 - r.k) << "after step " << t.step();
    }
  });
  EXPECT_EQ(t.zero_out_state().suppressed.size(), 4u);
}

TEST_F(TrainerTest, AuxModeLogsTheTapLoss) {
  TrainConfig c = tiny_train();
  c.mode = Mode::kAuxLoss;
  Trainer t(tiny_encoder(), c, ds);
  const StepRecord r = t.train_step();
  EXPECT_EQ(r.phase, "aux-loss");
  EXPECT_TRUE(r.losses.count("aux"));
  EXPECT_TRUE(r.losses.count("supernet"));
  const MaskExport e = t.mask_export();
  ASSERT_TRUE(e.aux_blocks.has_value());
  EXPECT_EQ(*e.aux_blocks, 1u);
}

TEST_F(TrainerTest, CheckpointResumeIsBitIdentical) {
  const TrainConfig c = tiny_train();
  Trainer full(tiny_encoder(), c, ds);
  std::vector<std::string> reference;
  while (!full.done()) reference.push_back(full.train_step().to_json().dump());

  const auto dir = scratch_dir("resume");
  Trainer first(tiny_encoder(), c, ds);
  for (int i = 0; i < 5; ++i) first.train_step();
  first.save(dir, "hash-a");
  Trainer resumed(tiny_encoder(), c, ds);
  resumed.load(dir, "hash-a");
  EXPECT_EQ(resumed.step(), 5u);
  std::vector<std::string> tail;
  while (!resumed.done()) tail.push_back(resumed.train_step().to_json().dump());
  EXPECT_EQ(tail, std::vector<std::string>(reference.begin() + 5, reference.end()));
  for (const auto& p : full.encoder().params()) {
    EXPECT_EQ(p.value.data, resumed.encoder().params().get(p.name).value.data) << p.name;
  }
  EXPECT_EQ(full.masks(), resumed.masks());

  Trainer other(tiny_encoder(), c, ds);
  EXPECT_THROW(other.load(dir, "hash-b"), std::invalid_argument);
  std::filesystem::remove_all(dir);
}

TEST_F(TrainerTest, EvaluateFullGateMatchesNoGate) {
  encoder::Encoder enc(tiny_encoder(), 3);
  const std::vector<double> ones(8, 1.0);
  const EvalResult a = evaluate(enc, ds.test, nullptr, {}, 2);
  const EvalResult b = evaluate(enc, ds.test, &ones);
  EXPECT_EQ(a.errors, b.errors);
  EXPECT_EQ(a.reference_symbols, b.reference_symbols);
  EXPECT_TRUE(std::isfinite(a.ler));
  EXPECT_GE(a.ler, 0.0);
  EXPECT_EQ(a.samples.size(), 2u);
}

}  // namespace
}  // namespace dynenc::pipeline
