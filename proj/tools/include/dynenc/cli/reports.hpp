// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dynenc/cli/run.hpp"
#include "dynenc/data.hpp"

namespace dynenc::cli {

struct EvalRow {
  /// "full", "k=N" or "aux".
  std::string selector;
  std::size_t layers = 0;
  std::size_t params = 0;
  double ler = 0.0;
  std::size_t errors = 0;
  std::size_t reference_symbols = 0;
  std::vector<std::pair<ctc::LabelSeq, ctc::LabelSeq>> samples;  // (hyp, ref)
};

struct EvalReport {
  std::string run;
  std::string split;
  std::vector<EvalRow> rows;

  nlohmann::json to_json() const;
  /// Aligned text table, one row per selector.
  std::string to_table() const;
};

/// Selectors: "" or "full" (every layer), "all" (each exported subnet, plus
/// the auxiliary head for aux-loss runs), "k=N", "aux". Throws
/// std::invalid_argument for anything else or a size the run does not have.
EvalReport evaluate_model(LoadedModel& model, const std::string& selector, data::Split split,
                          std::size_t samples = 0);

/// Kept-layer counts per subnet, block group and layer kind.
struct LayerReport {
  std::size_t group_blocks = 3;
  std::vector<std::pair<std::size_t, std::size_t>> groups;  // [first, last] block, 0-based
  std::vector<std::size_t> sizes;
  /// counts[m][g][kind]
  std::vector<std::vector<std::array<std::size_t, 4>>> counts;

  /// Layers of one kind inside group g.
  std::size_t capacity(std::size_t g) const;
  std::string to_csv() const;
  /// Stacked bars, one panel per subnet, mirroring a per-group bar chart.
  std::string to_svg() const;
};

LayerReport layer_report(const pipeline::MaskExport& masks, std::size_t group_blocks = 3);

enum class SweepAxis { kDropout, kIterations, kSplit };
SweepAxis sweep_axis_from_string(const std::string& name);
std::string to_string(SweepAxis axis);

/// Maps a sweep value onto a config override, e.g. split "60/40" ->
/// "pipeline.step1_fraction=0.6".
std::string sweep_override(SweepAxis axis, const std::string& value);

struct SweepRow {
  std::string value;
  fs::path run_dir;
  EvalReport report;
};

struct SweepReport {
  SweepAxis axis = SweepAxis::kDropout;
  std::vector<SweepRow> rows;

  /// Columns: value, then LER per subnet size.
  std::string to_csv() const;
  std::string to_table() const;
};

struct SweepOptions {
  SweepAxis axis = SweepAxis::kDropout;
  std::vector<std::string> values;
  fs::path out_dir;
  data::Split split = data::Split::kTest;
  std::size_t log_every = 0;
  std::ostream* log = nullptr;
};

/// One run per value with the base config's seed, each in
/// out_dir/<axis>-<value>, evaluated on every exported subnet. Finished runs
/// are reused.
SweepReport run_sweep(const config::RunConfig& base, const SweepOptions& options);

}  // namespace dynenc::cli
