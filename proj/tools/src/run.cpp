// SPDX-License-Identifier: Apache-2.0
#include "dynenc/cli/run.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include "dynenc/data.hpp"
#include "dynenc/io.hpp"

namespace dynenc::cli {

namespace {

constexpr int kManifestFormat = 1;
constexpr std::size_t kKeepCheckpoints = 2;

std::string checkpoint_name(std::size_t step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step-%07zu", step);
  return buf;
}

// Drops metric lines at or after `step`, left over from an interrupted run.
void truncate_metrics(const fs::path& path, std::size_t step) {
  if (!fs::exists(path)) return;
  std::ifstream in(path);
  std::string line, kept;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (nlohmann::json::parse(line).at("step").get<std::size_t>() >= step) break;
    kept += line + "\n";
  }
  in.close();
  io::write_text_atomic(path, kept);
}

void write_masks(const fs::path& path, const pipeline::Trainer& trainer) {
  io::write_text_atomic(path, trainer.mask_export().to_json().dump(2) + "\n");
}

}  // namespace

nlohmann::json RunManifest::to_json() const {
  return {{"format", kManifestFormat},
          {"config", config},
          {"seed", seed},
          {"config_hash", config_hash},
          {"artifacts",
           {{"metrics", metrics}, {"checkpoints", checkpoints}, {"masks", masks}, {"reports", reports}}}};
}

RunManifest RunManifest::from_json(const nlohmann::json& j) {
  if (j.at("format").get<int>() != kManifestFormat) {
    throw std::runtime_error("unsupported run manifest format");
  }
  RunManifest m;
  m.config = j.at("config").get<std::string>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.config_hash = j.at("config_hash").get<std::string>();
  const auto& a = j.at("artifacts");
  m.metrics = a.at("metrics").get<std::string>();
  m.checkpoints = a.at("checkpoints").get<std::string>();
  m.masks = a.at("masks").get<std::string>();
  m.reports = a.at("reports").get<std::string>();
  return m;
}

RunManifest RunManifest::read(const fs::path& run_dir) {
  return from_json(nlohmann::json::parse(io::read_text(run_dir / "run.json")));
}

RunManifest make_manifest(const config::RunConfig& config) {
  RunManifest m;
  m.config = config::to_text(config);
  m.seed = config.train.seed;
  m.config_hash = config::config_hash(config);
  return m;
}

config::RunConfig load_config(const std::optional<fs::path>& file,
                              const std::vector<std::string>& overrides) {
  config::RunConfig c;
  if (file) config::apply_text(c, io::read_text(*file));
  for (const auto& o : overrides) config::apply_override(c, o);
  config::finalize(c);
  return c;
}

std::vector<fs::path> list_checkpoints(const fs::path& run_dir) {
  std::vector<fs::path> out;
  const fs::path dir = run_dir / RunManifest::read(run_dir).checkpoints;
  if (!fs::exists(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_directory() && fs::exists(e.path() / "manifest.json")) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());  // zero-padded names sort by step
  return out;
}

TrainSummary train(const config::RunConfig& config, const TrainOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  const fs::path& dir = options.run_dir;
  TrainSummary summary;
  summary.manifest = make_manifest(config);
  const RunManifest& m = summary.manifest;

  const bool existing = fs::exists(dir / "run.json");
  if (existing) {
    if (!options.resume) {
      throw config::ConfigError("out", dir.string() + " already holds a run; pass --resume to continue it");
    }
    const RunManifest old = RunManifest::read(dir);
    if (old.config_hash != m.config_hash) {
      throw config::ConfigError("config_hash", "run was started with config " + old.config_hash +
                                                   ", resume requested with " + m.config_hash);
    }
  } else {
    // Record every artifact path before any of them is written.
    fs::create_directories(dir);
    io::write_text_atomic(dir / "run.json", m.to_json().dump(2) + "\n");
  }

  const data::Dataset ds = data::gen_dataset(config.data, config.data_seed);
  pipeline::Trainer trainer(config.encoder, config.train, ds);
  std::optional<fs::path> last_good;
  if (existing) {
    const auto cps = list_checkpoints(dir);
    if (!cps.empty()) {
      trainer.load(cps.back(), m.config_hash);
      last_good = cps.back();
    }
    truncate_metrics(dir / m.metrics, trainer.step());
  }
  summary.first_step = trainer.step();

  auto save_checkpoint = [&] {
    const fs::path cp = dir / m.checkpoints / checkpoint_name(trainer.step());
    trainer.save(cp, m.config_hash);
    last_good = cp;
    const auto cps = list_checkpoints(dir);
    for (std::size_t i = 0; i + kKeepCheckpoints < cps.size(); ++i) fs::remove_all(cps[i]);
  };

  std::ofstream metrics(dir / m.metrics, std::ios::app);
  if (!metrics) throw std::runtime_error("cannot open " + (dir / m.metrics).string());
  const std::size_t step1 = config.train.step1_steps();
  std::size_t ran = 0;
  while (!trainer.done() && (options.max_steps == 0 || ran < options.max_steps)) {
    pipeline::StepRecord rec;
    try {
      rec = trainer.train_step();
    } catch (const NonFiniteError& e) {
      throw NonFiniteError(std::string(e.what()) + "; last good checkpoint: " +
                           (last_good ? last_good->string() : "none"));
    }
    ++ran;
    metrics << rec.to_json().dump() << '\n';
    metrics.flush();
    if (config.train.mode == pipeline::Mode::kJoint && trainer.step() == step1) {
      write_masks(dir / m.masks, trainer);
    }
    if (config.train.checkpoint_every > 0 && trainer.step() % config.train.checkpoint_every == 0 &&
        !trainer.done()) {
      save_checkpoint();
    }
    if (options.log && options.log_every > 0 && trainer.step() % options.log_every == 0) {
      std::ostringstream line;
      line << "step " << trainer.step() << '/' << config.train.steps << ' ' << rec.phase;
      for (const auto& [name, value] : rec.losses) line << ' ' << name << '=' << value;
      *options.log << line.str() << std::endl;
    }
  }
  metrics.close();
  if (ran > 0 || !last_good) save_checkpoint();
  write_masks(dir / m.masks, trainer);

  summary.last_step = trainer.step();
  summary.finished = trainer.done();
  summary.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return summary;
}

fs::path resolve_run_dir(const fs::path& path) {
  if (fs::exists(path / "run.json")) return path;
  const fs::path up = path.parent_path().parent_path();
  if (fs::exists(path / "manifest.json") && fs::exists(up / "run.json")) return up;
  throw std::invalid_argument(path.string() + " is neither a run directory nor a checkpoint");
}

LoadedModel load_model(const fs::path& path) {
  const fs::path run_dir = resolve_run_dir(path);
  RunManifest manifest = RunManifest::read(run_dir);
  config::RunConfig cfg;
  config::apply_text(cfg, manifest.config);
  config::finalize(cfg);

  fs::path checkpoint = path;
  if (run_dir == path) {
    const auto cps = list_checkpoints(run_dir);
    if (cps.empty()) throw std::runtime_error(run_dir.string() + " has no checkpoint");
    checkpoint = cps.back();
  }
  const io::Bundle bundle = io::read_bundle(checkpoint);
  if (bundle.meta.value("config_hash", "") != manifest.config_hash) {
    throw std::runtime_error("checkpoint " + checkpoint.string() + " belongs to another config");
  }
  encoder::EncoderConfig ec = cfg.encoder;
  ec.aux_head = cfg.train.mode == pipeline::Mode::kAuxLoss;
  encoder::Encoder enc(ec, 0);
  for (auto& p : enc.params()) {
    const Tensor& v = bundle.get(p.name);
    if (v.shape != p.value.shape) throw std::runtime_error("checkpoint shape mismatch for " + p.name);
    p.value = v;
  }

  std::optional<pipeline::MaskExport> masks;
  if (fs::exists(run_dir / manifest.masks)) {
    masks = pipeline::MaskExport::from_json(
        nlohmann::json::parse(io::read_text(run_dir / manifest.masks)));
  }
  return {std::move(cfg), std::move(manifest), std::move(enc), std::move(masks), checkpoint};
}

}  // namespace dynenc::cli
