// SPDX-License-Identifier: Apache-2.0
//
// Two-step training. Step 1 trains the supernet jointly with one subnet whose
// layer count k shrinks over I iterations while the importance scores learn
// which layers to keep. Step 2 freezes the M nested masks derived from the
// scores and trains the supernet, the smallest subnet and one sampled medium
// subnet per step (sandwich rule), with layer dropout on the supernet's
// layers outside the smallest subnet.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dynenc/data.hpp"
#include "dynenc/encoder.hpp"
#include "dynenc/pruning.hpp"

namespace dynenc::pipeline {

enum class Mode { kJoint, kSeparate, kAuxLoss };
enum class Method { kSimpleTopK, kIterativeZeroOut };

std::string to_string(Mode m);
std::string to_string(Method m);
Mode mode_from_string(const std::string& s);
Method method_from_string(const std::string& s);

struct OclrConfig {
  double peak = 4e-4;
  double floor = 4e-6;
  double final = 1e-7;
  double warm_fraction = 0.45;
  double decay_fraction = 0.45;
};

/// Linear floor -> peak over [0, wN), peak -> floor over [wN, (w+d)N), then
/// floor -> final, reaching `final` at step N-1.
double oclr_lr(std::size_t step, std::size_t total, const OclrConfig& config);

/// round(L - (L - k_min) * i / I), halves away from zero, for 1 <= i <= I.
std::size_t k_schedule(std::size_t i, std::size_t layers, std::size_t k_min, std::size_t iterations);

/// Subnet indices (0 = supernet, M-1 = smallest) trained in one Step-2 step:
/// supernet, smallest, and one uniformly drawn medium when M > 2.
std::vector<std::size_t> sandwich_select(Rng& rng, std::size_t subnets);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction over a fixed list of parameters.
class Adam {
 public:
  Adam(std::vector<grad::Parameter*> params, AdamConfig config = {});

  /// Applies one update with learning rate lr * scale_of(param). Returns
  /// false, leaving everything untouched, if any gradient is non-finite.
  bool step(double lr, const std::function<double(const grad::Parameter&)>& scale_of = {});

  std::size_t t() const { return t_; }
  void set_t(std::size_t t) { t_ = t; }
  std::vector<double>& first_moment(std::size_t i) { return m_[i]; }
  std::vector<double>& second_moment(std::size_t i) { return v_[i]; }
  const std::vector<double>& first_moment(std::size_t i) const { return m_[i]; }
  const std::vector<double>& second_moment(std::size_t i) const { return v_[i]; }
  const std::vector<grad::Parameter*>& params() const { return params_; }

 private:
  std::vector<grad::Parameter*> params_;
  AdamConfig config_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

struct TrainConfig {
  Mode mode = Mode::kJoint;
  Method method = Method::kSimpleTopK;
  std::size_t steps = 6000;
  double step1_fraction = 0.6;
  std::size_t iterations = 32;
  double subnet_scale = 0.3;  // lambda
  double sparsity_scale = 2.0;  // gamma
  double layer_dropout = 0.3;
  pruning::RelaxedTopKConfig relaxed;
  std::vector<std::size_t> subnets = {32, 16, 8};
  /// Layer count of the separately trained model (first k layers).
  std::size_t separate_layers = 32;
  double aux_scale = 0.3;
  OclrConfig lr;
  AdamConfig adam;
  double score_lr_scale = 1.0;
  std::size_t batch_size = 16;
  std::uint64_t seed = 1;
  std::size_t checkpoint_every = 0;  // 0 = only at the end

  std::size_t step1_steps() const;
  /// floor(step1_steps / I); the last iteration absorbs the remainder.
  std::size_t iteration_steps() const;
  /// Step-1 iteration (1-based) that optimizer step `step` belongs to; 0 once
  /// Step 1 is over or outside joint mode.
  std::size_t iteration_at(std::size_t step) const;
  /// Throws std::invalid_argument naming the offending key.
  void validate(std::size_t layers, std::size_t blocks) const;
};

/// Mask export: per subnet size the binary mask, plus the raw scores.
struct MaskExport {
  std::size_t layers = 0;
  std::size_t blocks = 0;
  std::vector<std::size_t> sizes;
  std::vector<std::vector<double>> masks;
  std::vector<double> scores;
  /// Set for aux-loss runs: number of blocks under the auxiliary head.
  std::optional<std::size_t> aux_blocks;

  nlohmann::json to_json() const;
  static MaskExport from_json(const nlohmann::json& j);
};

struct StepRecord {
  std::size_t step = 0;
  std::string phase;
  std::size_t iteration = 0;
  std::size_t k = 0;
  double lr = 0.0;
  std::map<std::string, double> losses;
  std::optional<double> penalty;
  std::vector<std::size_t> selected;
  std::vector<std::size_t> dropped;
  std::size_t skipped_utterances = 0;
  bool update_skipped = false;

  nlohmann::json to_json() const;
};

/// Everything a training run mutates.
class Trainer {
 public:
  Trainer(encoder::EncoderConfig encoder_config, TrainConfig config, const data::Dataset& data);

  const TrainConfig& config() const { return config_; }
  encoder::Encoder& encoder() { return encoder_; }
  const std::vector<double>& scores() const { return scores_.value.data; }
  grad::Parameter& score_param() { return scores_; }
  const pruning::ZeroOutState& zero_out_state() const { return zero_out_; }
  const std::vector<std::vector<double>>& masks() const { return masks_; }
  std::size_t step() const { return step_; }
  bool done() const { return step_ >= config_.steps; }
  std::string phase() const;
  /// Step-1 iteration (1-based) of the next step.
  std::size_t iteration() const;

  /// Runs one optimizer step of whichever phase is current.
  StepRecord train_step();
  /// Runs Step 1 to completion; fixes the masks at its end.
  void step1_train(const std::function<void(const StepRecord&)>& on_step = {});
  void step2_train(const std::function<void(const StepRecord&)>& on_step = {});

  /// Total loss of a fixed batch and the resulting parameter gradients, without
  /// updating anything. Used to compare objectives.
  double loss_and_gradients(const data::Batch& batch);

  MaskExport mask_export() const;

  void save(const std::filesystem::path& dir, const std::string& config_hash) const;
  /// Restores a state written by save(); rejects a different config hash.
  void load(const std::filesystem::path& dir, const std::string& config_hash);

 private:
  struct Objective {
    grad::Var loss;
    StepRecord record;
  };
  Objective build_objective(grad::Tape& tape, const data::Batch& batch, bool train);
  Objective step1_objective(grad::Tape& tape, const data::Batch& batch);
  Objective step2_objective(grad::Tape& tape, const data::Batch& batch, bool train);
  Objective separate_objective(grad::Tape& tape, const data::Batch& batch);
  Objective aux_objective(grad::Tape& tape, const data::Batch& batch);
  double ctc_term(const encoder::EncoderOutput& out, const data::Batch& batch, StepRecord& rec,
                  const std::string& key, std::vector<grad::Var>& terms, double weight,
                  grad::Var* log_probs = nullptr);
  void finish_step1();

  TrainConfig config_;
  encoder::Encoder encoder_;
  grad::Parameter scores_;
  data::BatchStream stream_;
  Rng rng_;
  Adam adam_;
  std::size_t step_ = 0;
  pruning::ZeroOutState zero_out_;
  std::vector<std::vector<double>> masks_;
  std::vector<double> separate_mask_;
};

struct EvalResult {
  /// Total edit distance over total reference length.
  double ler = 0.0;
  std::size_t errors = 0;
  std::size_t reference_symbols = 0;
  std::vector<std::pair<ctc::LabelSeq, ctc::LabelSeq>> samples;  // (hyp, ref)
};

/// Greedy-decodes a split. `gate` selects a subnet (nullptr = all layers);
/// `aux_blocks` evaluates the auxiliary head tapped after that many blocks.
EvalResult evaluate(encoder::Encoder& enc, const std::vector<data::Utterance>& split,
                    const std::vector<double>* gate, std::optional<std::size_t> aux_blocks = {},
                    std::size_t samples = 0);

}  // namespace dynenc::pipeline
