// SPDX-License-Identifier: Apache-2.0
//
// Run configuration as flat "namespace.key = value" lines. Blank lines and
// lines starting with '#' are ignored. Every key has a default, so an empty
// file is a valid configuration.
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "dynenc/data.hpp"
#include "dynenc/encoder.hpp"
#include "dynenc/pipeline.hpp"

namespace dynenc::config {

/// Rejected key or value; key() names the offending key.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string key, const std::string& message)
      : std::invalid_argument(key + ": " + message), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

struct RunConfig {
  data::SynthTaskConfig data;
  std::uint64_t data_seed = 7;
  encoder::EncoderConfig encoder;
  pipeline::TrainConfig train;
};

/// All recognised keys, sorted.
std::vector<std::string> keys();

void set(RunConfig& config, const std::string& key, const std::string& value);
std::string get(const RunConfig& config, const std::string& key);

/// Applies every assignment of a config file.
void apply_text(RunConfig& config, const std::string& text);
/// Applies one "key=value" override.
void apply_override(RunConfig& config, const std::string& assignment);

/// Copies the dataset's vocabulary and feature size into the encoder and
/// checks every section; throws ConfigError.
void finalize(RunConfig& config);

/// Canonical text: every key in sorted order, one "key = value" per line.
std::string to_text(const RunConfig& config);
/// Git-style content hash of to_text().
std::string config_hash(const RunConfig& config);

}  // namespace dynenc::config
