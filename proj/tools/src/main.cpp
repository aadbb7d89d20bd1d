// SPDX-License-Identifier: Apache-2.0
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dynenc/cli/reports.hpp"
#include "dynenc/cli/run.hpp"
#include "dynenc/io.hpp"
#include "dynenc/tape.hpp"
#include "dynenc/verify.hpp"

namespace {

using namespace dynenc;
using namespace dynenc::cli;

data::Split parse_split(const std::string& s) {
  if (s == "train") return data::Split::kTrain;
  if (s == "dev") return data::Split::kDev;
  if (s == "test") return data::Split::kTest;
  throw std::invalid_argument("unknown split '" + s + "' (expected train, dev or test)");
}

std::optional<fs::path> optional_path(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return fs::path(s);
}

std::string selector_tag(const std::string& selector) {
  std::string tag = selector.empty() ? "full" : selector;
  for (char& c : tag) {
    if (c == '=') c = '-';
  }
  return tag;
}

pipeline::MaskExport read_masks(const fs::path& path) {
  fs::path file = path;
  if (fs::is_directory(path)) file = path / RunManifest::read(path).masks;
  return pipeline::MaskExport::from_json(nlohmann::json::parse(io::read_text(file)));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dynamic encoder size training and evaluation", "dynenc"};
  app.require_subcommand(1);

  // train
  std::string config_file, out_dir;
  std::vector<std::string> overrides;
  bool resume = false;
  std::size_t log_every = 100;
  auto* train_cmd = app.add_subcommand("train", "Train a run (joint, separate or aux-loss)");
  train_cmd->add_option("-c,--config", config_file, "Config file (key = value lines)")->check(CLI::ExistingFile);
  train_cmd->add_option("-s,--set", overrides, "Override, key=value (repeatable)");
  train_cmd->add_option("-o,--out", out_dir, "Run directory")->required();
  train_cmd->add_flag("--resume", resume, "Continue from the latest checkpoint");
  train_cmd->add_option("--log-every", log_every, "Progress line interval in steps (0 = quiet)");

  // config
  auto* config_cmd = app.add_subcommand("config", "Print the resolved config and its hash");
  config_cmd->add_option("-c,--config", config_file, "Config file")->check(CLI::ExistingFile);
  config_cmd->add_option("-s,--set", overrides, "Override, key=value (repeatable)");

  // eval
  std::string eval_path, selector, split_name = "test", json_out;
  std::size_t samples = 3;
  auto* eval_cmd = app.add_subcommand("eval", "Label error rate and parameter count per subnet");
  eval_cmd->add_option("path", eval_path, "Run directory or checkpoint directory")->required();
  eval_cmd->add_option("-m,--masks", selector, "full (default), all, aux or k=N");
  eval_cmd->add_option("--split", split_name, "train, dev or test");
  eval_cmd->add_option("--samples", samples, "Decoded samples to print per row");
  eval_cmd->add_option("--json", json_out, "Also write the report here");

  // layer-report
  std::string masks_path, csv_out, svg_out;
  std::size_t group = 3;
  auto* layer_cmd = app.add_subcommand("layer-report", "Kept layers per block group and layer kind");
  layer_cmd->add_option("masks", masks_path, "masks.json or a run directory")->required();
  layer_cmd->add_option("--csv", csv_out, "Write CSV here instead of stdout");
  layer_cmd->add_option("--svg", svg_out, "Also write stacked bars as SVG");
  layer_cmd->add_option("--group", group, "Blocks per group")->check(CLI::PositiveNumber);

  // verify
  verify::Options vopts;
  std::string fault_op;
  auto* verify_cmd = app.add_subcommand("verify", "Run the gradient, ctc, top-k, mask and schedule suites");
  verify_cmd->add_option("--seed", vopts.seed, "Suite seed");
  verify_cmd->add_option("--inject-fault", fault_op, "Flip the sign of one op's backward rule");

  // sweep
  std::string axis_name;
  std::vector<std::string> values;
  auto* sweep_cmd = app.add_subcommand("sweep", "One run per value along an ablation axis");
  sweep_cmd->add_option("-c,--config", config_file, "Base config file")->check(CLI::ExistingFile);
  sweep_cmd->add_option("-s,--set", overrides, "Override, key=value (repeatable)");
  sweep_cmd->add_option("--axis", axis_name, "dropout, iterations or split")->required();
  sweep_cmd->add_option("--values", values, "Values, comma separated")->delimiter(',');
  sweep_cmd->add_option("-o,--out", out_dir, "Directory for the runs")->required();
  sweep_cmd->add_option("--split", split_name, "Evaluation split");
  sweep_cmd->add_option("--log-every", log_every, "Progress line interval in steps");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) {
      const auto cfg = load_config(optional_path(config_file), overrides);
      const auto s = train(cfg, {.run_dir = out_dir, .resume = resume, .log_every = log_every, .log = &std::cerr});
      std::cout << "run " << out_dir << " steps " << s.first_step << ".." << s.last_step
                << (s.finished ? " finished" : "") << " in " << s.seconds << " s\n";
      return kExitOk;
    }
    if (*config_cmd) {
      const auto cfg = load_config(optional_path(config_file), overrides);
      std::cout << config::to_text(cfg) << "# config_hash " << config::config_hash(cfg) << "\n";
      return kExitOk;
    }
    if (*eval_cmd) {
      LoadedModel model = load_model(eval_path);
      const auto report = evaluate_model(model, selector, parse_split(split_name), samples);
      std::cout << report.to_table();
      const std::string doc = report.to_json().dump(2) + "\n";
      const fs::path run_dir = resolve_run_dir(eval_path);
      const fs::path reports = run_dir / model.manifest.reports;
      fs::create_directories(reports);
      io::write_text_atomic(reports / ("eval-" + split_name + "-" + selector_tag(selector) + ".json"), doc);
      if (!json_out.empty()) io::write_text_atomic(json_out, doc);
      return kExitOk;
    }
    if (*layer_cmd) {
      const auto report = layer_report(read_masks(masks_path), group);
      if (csv_out.empty()) {
        std::cout << report.to_csv();
      } else {
        io::write_text_atomic(csv_out, report.to_csv());
      }
      if (!svg_out.empty()) io::write_text_atomic(svg_out, report.to_svg());
      return kExitOk;
    }
    if (*verify_cmd) {
      if (!fault_op.empty()) grad::set_backward_fault(fault_op);
      bool ok = true;
      for (const auto& r : verify::run_all(vopts)) {
        std::cout << r.summary() << std::endl;
        ok = ok && r.passed;
      }
      grad::clear_backward_fault();
      std::cout << (ok ? "verify: all suites passed" : "verify: FAILED") << std::endl;
      return ok ? kExitOk : kExitVerifyFailed;
    }
    if (*sweep_cmd) {
      const auto base = load_config(optional_path(config_file), overrides);
      SweepOptions so;
      so.axis = sweep_axis_from_string(axis_name);
      so.values = values;
      so.out_dir = out_dir;
      so.split = parse_split(split_name);
      so.log_every = log_every;
      so.log = &std::cerr;
      const auto report = run_sweep(base, so);
      std::cout << report.to_table();
      fs::create_directories(out_dir);
      io::write_text_atomic(fs::path(out_dir) / ("sweep-" + axis_name + ".csv"), report.to_csv());
      return kExitOk;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return kExitInvalid;
  }
  return kExitOk;
}
