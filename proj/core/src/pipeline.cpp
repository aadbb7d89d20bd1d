// SPDX-License-Identifier: Apache-2.0
#include "dynenc/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "dynenc/ctc.hpp"
#include "dynenc/io.hpp"

namespace dynenc::pipeline {

namespace {

constexpr const char* kScoreName = "scores.s";

std::string subnet_key(std::size_t k) { return "k" + std::to_string(k); }

}  // namespace

std::string to_string(Mode m) {
  switch (m) {
    case Mode::kJoint: return "joint";
    case Mode::kSeparate: return "separate";
    case Mode::kAuxLoss: return "aux-loss";
  }
  return "?";
}

std::string to_string(Method m) {
  return m == Method::kSimpleTopK ? "simple-top-k" : "iterative-zero-out";
}

Mode mode_from_string(const std::string& s) {
  if (s == "joint") return Mode::kJoint;
  if (s == "separate") return Mode::kSeparate;
  if (s == "aux-loss") return Mode::kAuxLoss;
  throw std::invalid_argument("unknown mode '" + s + "'");
}

Method method_from_string(const std::string& s) {
  if (s == "simple-top-k") return Method::kSimpleTopK;
  if (s == "iterative-zero-out") return Method::kIterativeZeroOut;
  throw std::invalid_argument("unknown pruning method '" + s + "'");
}

double oclr_lr(std::size_t step, std::size_t total, const OclrConfig& c) {
  const double n = static_cast<double>(total);
  const double s = static_cast<double>(step);
  const double warm_end = c.warm_fraction * n;
  const double decay_end = (c.warm_fraction + c.decay_fraction) * n;
  if (s < warm_end) return std::lerp(c.floor, c.peak, s / warm_end);
  if (s < decay_end) return std::lerp(c.peak, c.floor, (s - warm_end) / (decay_end - warm_end));
  const double span = n - 1.0 - decay_end;
  if (span <= 0.0) return c.final;
  return std::lerp(c.floor, c.final, std::min(1.0, (s - decay_end) / span));
}

std::size_t k_schedule(std::size_t i, std::size_t layers, std::size_t k_min,
                       std::size_t iterations) {
  if (iterations == 0 || i < 1 || i > iterations) {
    throw std::invalid_argument("k_schedule: iteration " + std::to_string(i) + " outside [1, " +
                                std::to_string(iterations) + "]");
  }
  if (k_min > layers) throw std::invalid_argument("k_schedule: k_min exceeds L");
  // round(L - (L - k_min) i / I) in integers; the value is never negative.
  const std::size_t num = layers * iterations - (layers - k_min) * i;
  return (2 * num + iterations) / (2 * iterations);
}

std::vector<std::size_t> sandwich_select(Rng& rng, std::size_t subnets) {
  if (subnets < 2) throw std::invalid_argument("sandwich rule needs at least two subnets");
  if (subnets == 2) return {0, 1};
  return {0, 1 + uniform_index(rng, subnets - 2), subnets - 1};
}

Adam::Adam(std::vector<grad::Parameter*> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
  for (auto* p : params_) {
    m_.emplace_back(p->value.size(), 0.0);
    v_.emplace_back(p->value.size(), 0.0);
  }
}

bool Adam::step(double lr, const std::function<double(const grad::Parameter&)>& scale_of) {
  for (const auto* p : params_) {
    for (double g : p->grad) {
      if (!std::isfinite(g)) return false;
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    grad::Parameter& p = *params_[i];
    const double rate = lr * (scale_of ? scale_of(p) : 1.0);
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const double g = p.grad[j];
      m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * g;
      v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * g * g;
      if (rate == 0.0) continue;
      p.value[j] -= rate * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + config_.eps);
    }
  }
  return true;
}

std::size_t TrainConfig::step1_steps() const {
  if (mode != Mode::kJoint) return 0;
  return static_cast<std::size_t>(std::floor(step1_fraction * static_cast<double>(steps) + 1e-9));
}

std::size_t TrainConfig::iteration_steps() const { return step1_steps() / iterations; }

std::size_t TrainConfig::iteration_at(std::size_t step) const {
  if (step >= step1_steps()) return 0;
  return std::min(step / iteration_steps(), iterations - 1) + 1;
}

void TrainConfig::validate(std::size_t layers, std::size_t blocks) const {
  auto fail = [](const std::string& key, const std::string& msg) {
    throw std::invalid_argument(key + ": " + msg);
  };
  if (steps == 0) fail("pipeline.steps", "must be positive");
  if (batch_size == 0) fail("pipeline.batch_size", "must be positive");
  if (!(subnet_scale >= 0.0)) fail("pipeline.subnet_scale", "must be non-negative");
  if (!(sparsity_scale >= 0.0)) fail("pruning.gamma", "must be non-negative");
  if (!(layer_dropout >= 0.0 && layer_dropout < 1.0)) fail("pipeline.layer_dropout", "must lie in [0, 1)");
  if (!(aux_scale >= 0.0)) fail("pipeline.aux_scale", "must be non-negative");
  if (!(score_lr_scale >= 0.0)) fail("optim.score_lr_scale", "must be non-negative");
  if (!(lr.peak > 0.0 && lr.floor > 0.0 && lr.final > 0.0)) fail("optim.lr_peak", "learning rates must be positive");
  if (!(lr.warm_fraction > 0.0 && lr.decay_fraction > 0.0 &&
        lr.warm_fraction + lr.decay_fraction <= 1.0)) {
    fail("optim.warm_fraction", "warm and decay fractions must be positive and sum to at most 1");
  }
  try {
    relaxed.validate();
  } catch (const std::invalid_argument& e) {
    fail("pruning.temperature", e.what());
  }
  switch (mode) {
    case Mode::kJoint: {
      if (!(step1_fraction > 0.0 && step1_fraction < 1.0)) fail("pipeline.step1_fraction", "must lie in (0, 1)");
      if (iterations == 0) fail("pipeline.iterations", "must be positive");
      try {
        pruning::SubnetSpec{subnets}.validate(layers);
      } catch (const std::invalid_argument& e) {
        fail("pruning.subnets", e.what());
      }
      if (subnets.size() < 2) fail("pruning.subnets", "joint training needs at least two sizes");
      if (step1_steps() < iterations) {
        fail("pipeline.iterations", "Step 1 has " + std::to_string(step1_steps()) +
                                        " steps, fewer than " + std::to_string(iterations) +
                                        " iterations");
      }
      if (step1_steps() >= steps) fail("pipeline.step1_fraction", "leaves no Step-2 steps");
      break;
    }
    case Mode::kSeparate:
      if (separate_layers < 1 || separate_layers > layers) {
        fail("pipeline.separate_layers", "must lie in [1, " + std::to_string(layers) + "]");
      }
      break;
    case Mode::kAuxLoss:
      if (blocks < 2) fail("encoder.blocks", "aux-loss needs at least two blocks");
      break;
  }
}

nlohmann::json MaskExport::to_json() const {
  nlohmann::json j;
  j["layers"] = layers;
  j["blocks"] = blocks;
  j["scores"] = scores;
  j["subnets"] = nlohmann::json::array();
  for (std::size_t m = 0; m < sizes.size(); ++m) {
    nlohmann::json kept = nlohmann::json::array();
    for (std::size_t l = 0; l < masks[m].size(); ++l) {
      if (masks[m][l] != 1.0) continue;
      const auto id = encoder::LayerId::from_flat(l);
      kept.push_back({{"block", id.block}, {"kind", std::string(encoder::kind_label(id.kind))}});
    }
    j["subnets"].push_back({{"k", sizes[m]}, {"mask", masks[m]}, {"kept", kept}});
  }
  if (aux_blocks) j["aux_blocks"] = *aux_blocks;
  return j;
}

MaskExport MaskExport::from_json(const nlohmann::json& j) {
  MaskExport e;
  e.layers = j.at("layers").get<std::size_t>();
  e.blocks = j.at("blocks").get<std::size_t>();
  e.scores = j.at("scores").get<std::vector<double>>();
  for (const auto& s : j.at("subnets")) {
    e.sizes.push_back(s.at("k").get<std::size_t>());
    e.masks.push_back(s.at("mask").get<std::vector<double>>());
    if (e.masks.back().size() != e.layers) throw std::runtime_error("mask export: mask length mismatch");
  }
  if (j.contains("aux_blocks")) e.aux_blocks = j.at("aux_blocks").get<std::size_t>();
  return e;
}

nlohmann::json StepRecord::to_json() const {
  nlohmann::json j;
  j["step"] = step;
  j["phase"] = phase;
  j["iteration"] = iteration;
  j["k"] = k;
  j["lr"] = lr;
  j["losses"] = losses;
  j["penalty"] = penalty ? nlohmann::json(*penalty) : nlohmann::json(nullptr);
  j["selected"] = selected;
  j["dropped"] = dropped;
  j["skipped_utterances"] = skipped_utterances;
  j["update_skipped"] = update_skipped;
  return j;
}

namespace {

encoder::EncoderConfig with_aux(encoder::EncoderConfig c, Mode mode) {
  c.aux_head = mode == Mode::kAuxLoss;
  return c;
}

std::vector<grad::Parameter*> optimized(encoder::Encoder& enc, grad::Parameter& scores, Mode mode) {
  std::vector<grad::Parameter*> out;
  for (auto& p : enc.params()) out.push_back(&p);
  if (mode == Mode::kJoint) out.push_back(&scores);
  return out;
}

}  // namespace

Trainer::Trainer(encoder::EncoderConfig encoder_config, TrainConfig config,
                 const data::Dataset& data)
    : config_(std::move(config)),
      encoder_(with_aux(std::move(encoder_config), config_.mode), derive_seed(config_.seed, 2)),
      scores_{kScoreName, Tensor::zeros({encoder_.config().layers()}), {}},
      stream_(data.train, config_.batch_size, derive_seed(config_.seed, 1)),
      rng_(derive_seed(config_.seed, 3)),
      adam_({}, config_.adam) {
  const std::size_t layers = encoder_.config().layers();
  config_.validate(layers, encoder_.config().blocks);
  if (data.config.vocab != encoder_.config().vocab ||
      data.config.feature_dim != encoder_.config().input_dim) {
    throw std::invalid_argument("encoder vocab/input dims do not match the dataset");
  }
  scores_.zero_grad();
  adam_ = Adam(optimized(encoder_, scores_, config_.mode), config_.adam);
  if (config_.mode == Mode::kJoint) {
    zero_out_.target = k_schedule(1, layers, config_.subnets.back(), config_.iterations);
  }
  if (config_.mode == Mode::kSeparate) {
    separate_mask_.assign(layers, 0.0);
    std::fill_n(separate_mask_.begin(), config_.separate_layers, 1.0);
  }
}

std::string Trainer::phase() const {
  switch (config_.mode) {
    case Mode::kSeparate: return "separate";
    case Mode::kAuxLoss: return "aux-loss";
    case Mode::kJoint: return step_ < config_.step1_steps() ? "step1" : "step2";
  }
  return "?";
}

std::size_t Trainer::iteration() const {
  return config_.iteration_at(step_);
}

double Trainer::ctc_term(const encoder::EncoderOutput& out, const data::Batch& batch,
                         StepRecord& rec, const std::string& key, std::vector<grad::Var>& terms,
                         double weight, grad::Var* log_probs) {
  ctc::BatchLoss bl =
      ctc::batch_loss(log_probs ? *log_probs : out.log_probs, out.segments, batch.labels);
  rec.losses[key] = bl.mean.item();
  rec.skipped_utterances += bl.skipped;
  terms.push_back(weight == 1.0 ? bl.mean : grad::scale(bl.mean, weight));
  return bl.mean.item();
}

Trainer::Objective Trainer::step1_objective(grad::Tape& tape, const data::Batch& batch) {
  Objective obj;
  StepRecord& rec = obj.record;
  const std::size_t layers = encoder_.config().layers();
  rec.iteration = iteration();
  rec.k = k_schedule(rec.iteration, layers, config_.subnets.back(), config_.iterations);
  std::vector<grad::Var> terms;

  encoder::ForwardOptions sup_opts{.train = true, .rng = &rng_};
  auto sup = encoder_.forward(tape, batch.features, batch.segments, sup_opts);
  ctc_term(sup, batch, rec, "supernet", terms, 1.0);

  grad::Var s = tape.param(scores_);
  grad::Var z = config_.method == Method::kSimpleTopK
                    ? pruning::simple_topk_gate(s, rec.k, config_.relaxed)
                    : pruning::zero_out_gate(s, zero_out_);
  encoder::Gate gate = encoder::Gate::from_var(z);
  encoder::ForwardOptions sub_opts{.gate = &gate, .train = true, .rng = &rng_};
  auto sub = encoder_.forward(tape, batch.features, batch.segments, sub_opts);
  ctc_term(sub, batch, rec, subnet_key(rec.k), terms, config_.subnet_scale);

  if (config_.method == Method::kIterativeZeroOut) {
    grad::Var pen = pruning::sparsity_penalty(z, rec.k, config_.sparsity_scale);
    rec.penalty = pen.item();
    terms.push_back(pen);
  }
  rec.selected = {layers, rec.k};
  obj.loss = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) obj.loss = grad::add(obj.loss, terms[i]);
  return obj;
}

Trainer::Objective Trainer::step2_objective(grad::Tape& tape, const data::Batch& batch,
                                            bool train) {
  Objective obj;
  StepRecord& rec = obj.record;
  std::vector<grad::Var> terms;
  const auto selected = sandwich_select(rng_, masks_.size());
  std::vector<std::pair<std::size_t, double>> drop;
  if (config_.layer_dropout > 0.0) {
    for (std::size_t j = 0; j < masks_.back().size(); ++j) {
      if (masks_.back()[j] == 0.0) drop.emplace_back(j, 1.0 - config_.layer_dropout);
    }
  }
  for (std::size_t m : selected) {
    const std::size_t k = config_.subnets[m];
    rec.selected.push_back(k);
    if (m == 0) {
      encoder::ForwardOptions opts{.layer_dropout = drop, .train = train, .rng = &rng_};
      auto out = encoder_.forward(tape, batch.features, batch.segments, opts);
      rec.dropped = out.dropped;
      ctc_term(out, batch, rec, "supernet", terms, 1.0);
    } else {
      encoder::Gate gate = encoder::Gate::constant(masks_[m]);
      encoder::ForwardOptions opts{.gate = &gate, .train = train, .rng = &rng_};
      auto out = encoder_.forward(tape, batch.features, batch.segments, opts);
      ctc_term(out, batch, rec, subnet_key(k), terms, config_.subnet_scale);
    }
  }
  rec.k = config_.subnets.back();
  obj.loss = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) obj.loss = grad::add(obj.loss, terms[i]);
  return obj;
}

Trainer::Objective Trainer::separate_objective(grad::Tape& tape, const data::Batch& batch) {
  Objective obj;
  std::vector<grad::Var> terms;
  const std::size_t layers = encoder_.config().layers();
  encoder::Gate gate = encoder::Gate::constant(separate_mask_);
  encoder::ForwardOptions opts{.gate = config_.separate_layers < layers ? &gate : nullptr,
                               .train = true,
                               .rng = &rng_};
  auto out = encoder_.forward(tape, batch.features, batch.segments, opts);
  obj.record.k = config_.separate_layers;
  ctc_term(out, batch, obj.record,
           config_.separate_layers == layers ? "supernet" : subnet_key(config_.separate_layers),
           terms, 1.0);
  obj.loss = terms[0];
  return obj;
}

Trainer::Objective Trainer::aux_objective(grad::Tape& tape, const data::Batch& batch) {
  Objective obj;
  std::vector<grad::Var> terms;
  const std::size_t half = encoder_.config().blocks / 2;
  encoder::ForwardOptions opts{.train = true, .rng = &rng_, .tap_after_blocks = half};
  auto out = encoder_.forward(tape, batch.features, batch.segments, opts);
  obj.record.k = encoder_.config().layers();
  ctc_term(out, batch, obj.record, "supernet", terms, 1.0);
  grad::Var aux = encoder_.project(tape, *out.tap, "aux");
  ctc_term(out, batch, obj.record, "aux", terms, config_.aux_scale, &aux);
  obj.loss = grad::add(terms[0], terms[1]);
  return obj;
}

Trainer::Objective Trainer::build_objective(grad::Tape& tape, const data::Batch& batch,
                                            bool train) {
  switch (config_.mode) {
    case Mode::kSeparate: return separate_objective(tape, batch);
    case Mode::kAuxLoss: return aux_objective(tape, batch);
    case Mode::kJoint:
      return phase() == "step1" ? step1_objective(tape, batch)
                                : step2_objective(tape, batch, train);
  }
  throw std::logic_error("unreachable mode");
}

double Trainer::loss_and_gradients(const data::Batch& batch) {
  grad::Tape tape;
  Objective obj = build_objective(tape, batch, true);
  encoder_.params().zero_grad();
  scores_.zero_grad();
  tape.backward(obj.loss);
  return obj.loss.item();
}

StepRecord Trainer::train_step() {
  if (done()) throw std::logic_error("training already finished");
  const data::Batch batch = stream_.next();
  const std::string ph = phase();
  grad::Tape tape;
  Objective obj = build_objective(tape, batch, true);
  StepRecord rec = std::move(obj.record);
  rec.step = step_;
  rec.phase = ph;
  if (!std::isfinite(obj.loss.item())) {
    throw NonFiniteError("non-finite loss at step " + std::to_string(step_));
  }
  encoder_.params().zero_grad();
  scores_.zero_grad();
  tape.backward(obj.loss);
  rec.lr = oclr_lr(step_, config_.steps, config_.lr);
  const bool frozen_scores = ph != "step1";
  rec.update_skipped = !adam_.step(rec.lr, [&](const grad::Parameter& p) {
    if (&p != &scores_) return 1.0;
    return frozen_scores ? 0.0 : config_.score_lr_scale;
  });
  ++step_;

  if (ph == "step1") {
    const bool boundary = step_ == config_.step1_steps() ||
                          (rec.iteration < config_.iterations &&
                           step_ % config_.iteration_steps() == 0);
    if (boundary && config_.method == Method::kIterativeZeroOut) {
      zero_out_ = pruning::zero_out_update(scores_.value.data, rec.k);
      if (step_ < config_.step1_steps()) {
        zero_out_.target = k_schedule(rec.iteration + 1, encoder_.config().layers(),
                                      config_.subnets.back(), config_.iterations);
      }
    }
    if (step_ == config_.step1_steps()) finish_step1();
  }
  return rec;
}

void Trainer::finish_step1() {
  masks_ = pruning::masks_from_scores(scores_.value.data, pruning::SubnetSpec{config_.subnets});
}

void Trainer::step1_train(const std::function<void(const StepRecord&)>& on_step) {
  while (phase() == "step1") {
    StepRecord r = train_step();
    if (on_step) on_step(r);
  }
}

void Trainer::step2_train(const std::function<void(const StepRecord&)>& on_step) {
  if (config_.mode == Mode::kJoint && masks_.empty()) {
    throw std::logic_error("Step 2 needs the masks from Step 1");
  }
  while (!done()) {
    StepRecord r = train_step();
    if (on_step) on_step(r);
  }
}

MaskExport Trainer::mask_export() const {
  MaskExport e;
  const std::size_t layers = encoder_.config().layers();
  e.layers = layers;
  e.blocks = encoder_.config().blocks;
  e.scores = scores_.value.data;
  switch (config_.mode) {
    case Mode::kJoint:
      e.sizes = config_.subnets;
      e.masks = masks_.empty()
                    ? pruning::masks_from_scores(scores_.value.data, {config_.subnets})
                    : masks_;
      break;
    case Mode::kSeparate:
      e.sizes = {config_.separate_layers};
      e.masks = {separate_mask_};
      break;
    case Mode::kAuxLoss: {
      const std::size_t half = encoder_.config().blocks / 2;
      std::vector<double> bottom(layers, 0.0);
      std::fill_n(bottom.begin(), 4 * half, 1.0);
      e.sizes = {layers, 4 * half};
      e.masks = {std::vector<double>(layers, 1.0), bottom};
      e.aux_blocks = half;
      break;
    }
  }
  return e;
}

void Trainer::save(const std::filesystem::path& dir, const std::string& config_hash) const {
  io::Bundle b;
  const auto& params = adam_.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    b.tensors.push_back({params[i]->name, params[i]->value});
    b.tensors.push_back({"adam.m/" + params[i]->name, Tensor(params[i]->value.shape, adam_.first_moment(i))});
    b.tensors.push_back({"adam.v/" + params[i]->name, Tensor(params[i]->value.shape, adam_.second_moment(i))});
  }
  if (config_.mode != Mode::kJoint) b.tensors.push_back({kScoreName, scores_.value});
  std::ostringstream rng_state;
  rng_state << rng_;
  b.meta = {{"config_hash", config_hash},
            {"step", step_},
            {"adam_t", adam_.t()},
            {"rng", rng_state.str()},
            {"stream_epoch", stream_.epoch()},
            {"stream_position", stream_.position()},
            {"zero_out_suppressed", zero_out_.suppressed},
            {"zero_out_target", zero_out_.target},
            {"masks", masks_},
            {"mode", to_string(config_.mode)}};
  io::write_bundle(dir, b);
}

void Trainer::load(const std::filesystem::path& dir, const std::string& config_hash) {
  const io::Bundle b = io::read_bundle(dir);
  const std::string saved = b.meta.at("config_hash").get<std::string>();
  if (saved != config_hash) {
    throw std::invalid_argument("checkpoint config hash " + saved + " differs from " + config_hash);
  }
  const auto& params = adam_.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& v = b.get(params[i]->name);
    if (v.shape != params[i]->value.shape) {
      throw std::runtime_error("checkpoint shape mismatch for " + params[i]->name);
    }
    params[i]->value = v;
    adam_.first_moment(i) = b.get("adam.m/" + params[i]->name).data;
    adam_.second_moment(i) = b.get("adam.v/" + params[i]->name).data;
  }
  if (b.contains(kScoreName)) scores_.value = b.get(kScoreName);
  step_ = b.meta.at("step").get<std::size_t>();
  adam_.set_t(b.meta.at("adam_t").get<std::size_t>());
  std::istringstream rng_state(b.meta.at("rng").get<std::string>());
  rng_state >> rng_;
  stream_.seek(b.meta.at("stream_epoch").get<std::size_t>(),
               b.meta.at("stream_position").get<std::size_t>());
  zero_out_.suppressed = b.meta.at("zero_out_suppressed").get<std::vector<std::size_t>>();
  zero_out_.target = b.meta.at("zero_out_target").get<std::size_t>();
  masks_ = b.meta.at("masks").get<std::vector<std::vector<double>>>();
}

EvalResult evaluate(encoder::Encoder& enc, const std::vector<data::Utterance>& split,
                    const std::vector<double>* gate, std::optional<std::size_t> aux_blocks,
                    std::size_t samples) {
  constexpr std::size_t kEvalBatch = 32;
  EvalResult r;
  const std::size_t vocab = enc.config().vocab;
  encoder::Gate g;
  if (gate) g = encoder::Gate::constant(*gate);
  for (std::size_t start = 0; start < split.size(); start += kEvalBatch) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(split.size(), start + kEvalBatch); ++i) idx.push_back(i);
    const data::Batch batch = data::make_batch(split, idx);
    grad::Tape tape(false);
    encoder::ForwardOptions opts{.gate = gate ? &g : nullptr, .tap_after_blocks = aux_blocks};
    auto out = enc.forward(tape, batch.features, batch.segments, opts);
    const Tensor& lp = aux_blocks ? enc.project(tape, *out.tap, "aux").value() : out.log_probs.value();
    const auto offsets = out.segments.offsets();
    for (std::size_t u = 0; u < idx.size(); ++u) {
      std::span<const double> rows(lp.data.data() + offsets[u] * vocab,
                                   out.segments.lengths[u] * vocab);
      ctc::LabelSeq hyp = ctc::greedy_decode(rows, out.segments.lengths[u], vocab);
      r.errors += ctc::edit_distance(hyp, batch.labels[u]);
      r.reference_symbols += batch.labels[u].size();
      if (r.samples.size() < samples) r.samples.emplace_back(std::move(hyp), batch.labels[u]);
    }
  }
  r.ler = r.reference_symbols ? static_cast<double>(r.errors) / static_cast<double>(r.reference_symbols) : 0.0;
  return r;
}

}  // namespace dynenc::pipeline
