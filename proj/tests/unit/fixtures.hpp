// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "dynenc/config.hpp"
#include "dynenc/data.hpp"
#include "dynenc/encoder.hpp"
#include "dynenc/pipeline.hpp"

namespace dynenc::testing {

inline data::SynthTaskConfig tiny_task() {
  data::SynthTaskConfig c;
  c.vocab = 5;
  c.feature_dim = 6;
  c.min_labels = 2;
  c.max_labels = 4;
  c.train_size = 24;
  c.dev_size = 6;
  c.test_size = 6;
  return c;
}

inline encoder::EncoderConfig tiny_encoder() {
  encoder::EncoderConfig c;
  c.blocks = 2;
  c.model_dim = 8;
  c.ff_dim = 16;
  c.heads = 2;
  c.conv_kernel = 3;
  c.input_dim = 6;
  c.vocab = 5;
  return c;
}

/// Joint run over the 8 layers of tiny_encoder().
inline pipeline::TrainConfig tiny_train() {
  pipeline::TrainConfig c;
  c.steps = 12;
  c.step1_fraction = 0.5;
  c.iterations = 2;
  c.subnets = {8, 4};
  c.batch_size = 4;
  c.lr.peak = 1e-3;
  return c;
}

inline config::RunConfig tiny_run() {
  config::RunConfig r;
  r.data = tiny_task();
  r.encoder = tiny_encoder();
  r.train = tiny_train();
  config::finalize(r);
  return r;
}

}  // namespace dynenc::testing
