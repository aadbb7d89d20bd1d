// SPDX-License-Identifier: Apache-2.0
//
// Synthetic sequence-labelling task. Every symbol owns a fixed random
// template in R^F; an utterance renders its label sequence by repeating each
// symbol's template for a random number of frames and adding Gaussian noise.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dynenc/ctc.hpp"
#include "dynenc/ops.hpp"
#include "dynenc/rng.hpp"
#include "dynenc/tensor.hpp"

namespace dynenc::data {

struct SynthTaskConfig {
  std::size_t vocab = 13;  // including blank
  std::size_t feature_dim = 20;
  std::size_t min_frames = 2;  // per symbol
  std::size_t max_frames = 4;
  std::size_t min_labels = 3;
  std::size_t max_labels = 12;
  double noise = 0.3;
  std::uint64_t template_seed = 1234;
  std::size_t train_size = 2000;
  std::size_t dev_size = 200;
  std::size_t test_size = 200;

  void validate() const;
};

struct Utterance {
  Tensor features;  // [T, F]
  ctc::LabelSeq labels;
  std::uint64_t id = 0;
};

enum class Split { kTrain, kDev, kTest };
std::string to_string(Split split);
Split split_from_string(const std::string& name);

struct Dataset {
  SynthTaskConfig config;
  /// templates[v - 1] belongs to symbol v.
  std::vector<std::vector<double>> templates;
  std::vector<Utterance> train, dev, test;

  const std::vector<Utterance>& split(Split s) const;
};

/// Deterministic in (config, seed). Labels never repeat a symbol back to back.
Dataset gen_dataset(const SynthTaskConfig& config, std::uint64_t seed);

/// Utterances packed row-wise, see grad::Segments.
struct Batch {
  Tensor features;  // [sum T, F]
  grad::Segments segments;
  std::vector<ctc::LabelSeq> labels;
  std::vector<std::size_t> indices;  // positions in the source split
};

struct PaddedBatch {
  Tensor features;  // [B, T_max, F], zero beyond each length
  std::vector<std::size_t> lengths;
};

Batch make_batch(const std::vector<Utterance>& split, const std::vector<std::size_t>& indices);
PaddedBatch to_padded(const Batch& batch);

/// Fisher-Yates shuffle of 0..n-1 driven by `seed`.
std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed);

/// One epoch: a seeded permutation cut into consecutive batches; the last
/// batch may be short.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size,
                                                    std::uint64_t seed);

/// Endless batch sequence over a split, reshuffled each epoch with
/// derive_seed(seed, epoch).
class BatchStream {
 public:
  BatchStream(const std::vector<Utterance>& split, std::size_t batch_size, std::uint64_t seed);

  Batch next();

  std::size_t epoch() const { return epoch_; }
  std::size_t position() const { return position_; }
  /// Jumps to a saved (epoch, position) pair.
  void seek(std::size_t epoch, std::size_t position);

 private:
  void load_epoch();

  const std::vector<Utterance>* split_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  std::size_t epoch_ = 0;
  std::size_t position_ = 0;
  std::vector<std::vector<std::size_t>> batches_;
};

/// On-disk cache: one bundle directory per split.
void save_split(const std::filesystem::path& dir, const std::vector<Utterance>& split);
std::vector<Utterance> load_split(const std::filesystem::path& dir);

}  // namespace dynenc::data
