// SPDX-License-Identifier: Apache-2.0
//
// Run directories. A run directory holds
//
//   run.json              RunManifest, written before anything else
//   metrics.jsonl         one StepRecord per line
//   checkpoints/step-N/   tensor bundles (the latest two are kept)
//   masks.json            MaskExport
//   reports/              eval and layer reports
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dynenc/config.hpp"
#include "dynenc/encoder.hpp"
#include "dynenc/pipeline.hpp"

namespace dynenc::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kExitOk = 0, kExitInvalid = 1, kExitVerifyFailed = 2 };

struct RunManifest {
  /// Canonical config text (config::to_text).
  std::string config;
  std::uint64_t seed = 0;
  std::string config_hash;
  /// Artifact paths, relative to the run directory.
  std::string metrics = "metrics.jsonl";
  std::string checkpoints = "checkpoints";
  std::string masks = "masks.json";
  std::string reports = "reports";

  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);
  static RunManifest read(const fs::path& run_dir);
};

RunManifest make_manifest(const config::RunConfig& config);

/// Applies a config file (may be empty) and then the overrides in order.
config::RunConfig load_config(const std::optional<fs::path>& file,
                              const std::vector<std::string>& overrides);

struct TrainOptions {
  fs::path run_dir;
  bool resume = false;
  /// Progress lines every this many steps; 0 disables them.
  std::size_t log_every = 0;
  std::ostream* log = nullptr;
  /// Stop after this many steps in this invocation (for tests); 0 = no limit.
  std::size_t max_steps = 0;
};

struct TrainSummary {
  RunManifest manifest;
  std::size_t first_step = 0;
  std::size_t last_step = 0;
  bool finished = false;
  double seconds = 0.0;
};

/// Trains (or resumes) a run. Throws config::ConfigError for a bad config, a
/// resume against a different config, or a run directory that already holds
/// another run.
TrainSummary train(const config::RunConfig& config, const TrainOptions& options);

/// Checkpoint directories of a run, oldest first.
std::vector<fs::path> list_checkpoints(const fs::path& run_dir);

/// Locates the run directory for either a run directory or a checkpoint
/// inside one.
fs::path resolve_run_dir(const fs::path& path);

struct LoadedModel {
  config::RunConfig config;
  RunManifest manifest;
  encoder::Encoder encoder;
  std::optional<pipeline::MaskExport> masks;
  fs::path checkpoint;
};

/// Rebuilds the encoder of a run from `path` (a run directory, meaning its
/// latest checkpoint, or a checkpoint directory).
LoadedModel load_model(const fs::path& path);

}  // namespace dynenc::cli
