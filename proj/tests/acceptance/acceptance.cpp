// SPDX-License-Identifier: Apache-2.0
//
// Acceptance run: one line per criterion,
//
//   criterion N: PASS|FAIL <title>: <detail>
//
// Criteria 8 and 9 train full-size runs under --work. Finished runs are
// reused on the next invocation (training is deterministic); pass --fresh to
// retrain. Their recorded training time accumulates across resumed
// invocations.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "dynenc/cli/reports.hpp"
#include "dynenc/cli/run.hpp"
#include "dynenc/io.hpp"
#include "dynenc/verify.hpp"

namespace {

using namespace dynenc;
namespace fs = std::filesystem;

struct Outcome {
  bool passed = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string title;
  std::function<Outcome()> run;
};

struct Settings {
  fs::path work;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  std::string dynenc_binary;
  bool fresh = false;
  std::size_t log_every = 500;
};

std::string fmt(double v, int precision = 3) {
  std::ostringstream s;
  s << std::setprecision(precision) << v;
  return s.str();
}

std::string pct(double ler) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << 100.0 * ler;
  return s.str();
}

Outcome from_suite(const verify::SuiteResult& r, std::optional<double> limit_seconds = {}) {
  Outcome o;
  o.passed = r.passed && (!limit_seconds || r.seconds < *limit_seconds);
  o.detail = std::to_string(r.checks) + " checks, max error " + fmt(r.max_error) + ", " + fmt(r.seconds) + " s";
  if (limit_seconds) o.detail += " (limit " + fmt(*limit_seconds) + " s)";
  if (!r.failures.empty()) {
    o.detail += "; failing:";
    for (const auto& f : r.failures) o.detail += " " + f;
  }
  return o;
}

config::RunConfig defaults() {
  config::RunConfig c;
  config::finalize(c);
  return c;
}

// ---- criteria 6 and 7 --------------------------------------------------------

Outcome forward_counts() {
  const config::RunConfig base = defaults();
  const data::Dataset ds = data::gen_dataset(base.data, base.data_seed);
  const std::vector<std::vector<std::size_t>> specs = {
      {32, 8}, {32, 16, 8}, {32, 24, 16, 8}, {32, 28, 24, 16, 12, 8}};
  Outcome o{true, ""};
  for (const auto& subnets : specs) {
    pipeline::TrainConfig c = base.train;
    c.subnets = subnets;
    c.steps = 10;
    c.step1_fraction = 0.5;
    c.iterations = 1;
    c.validate(base.encoder.layers(), base.encoder.blocks);
    pipeline::Trainer t(base.encoder, c, ds);
    t.step1_train();
    std::set<std::size_t> seen;
    std::size_t steps = 0;
    while (!t.done()) {
      encoder::reset_forward_count();
      t.train_step();
      seen.insert(encoder::forward_count());
      ++steps;
    }
    const std::size_t want = std::min<std::size_t>(subnets.size(), 3);
    const bool ok = seen == std::set<std::size_t>{want};
    o.passed = o.passed && ok && steps > 0;
    o.detail += (o.detail.empty() ? "" : ", ") + std::string("M=") + std::to_string(subnets.size()) +
                ": " + std::to_string(*seen.begin()) + " forwards/step over " +
                std::to_string(steps) + " steps";
  }
  return o;
}

Outcome degeneracy() {
  const config::RunConfig base = defaults();
  const data::Dataset ds = data::gen_dataset(base.data, base.data_seed);
  pipeline::TrainConfig joint = base.train;
  joint.steps = 12;
  joint.iterations = 2;
  joint.step1_fraction = 0.5;
  joint.subnet_scale = 0.0;
  joint.layer_dropout = 0.0;
  pipeline::TrainConfig plain = joint;
  plain.mode = pipeline::Mode::kSeparate;
  plain.separate_layers = base.encoder.layers();
  pipeline::Trainer a(base.encoder, joint, ds);
  pipeline::Trainer b(base.encoder, plain, ds);

  std::vector<std::size_t> idx(base.train.batch_size);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = 3 * i;
  const data::Batch fixed = data::make_batch(ds.train, idx);
  double worst = 0.0;
  std::set<std::string> phases;
  while (!a.done()) {
    phases.insert(a.phase());
    a.loss_and_gradients(fixed);
    b.loss_and_gradients(fixed);
    for (const auto& p : a.encoder().params()) {
      const auto& q = b.encoder().params().get(p.name);
      for (std::size_t i = 0; i < p.grad.size(); ++i) worst = std::max(worst, std::fabs(p.grad[i] - q.grad[i]));
    }
    a.train_step();
    b.train_step();
  }
  const bool both = phases.size() == 2;
  return {worst <= 1e-12 && both, "max |grad difference| " + fmt(worst) + " over " +
                                      std::to_string(joint.steps) + " steps" +
                                      (both ? " spanning both steps" : " (did not reach step 2)")};
}

// ---- runs for criteria 8 and 9 -----------------------------------------------

struct RunResult {
  std::map<std::string, double> ler;  // selector -> test LER
  double seconds = 0.0;
};

class RunCache {
 public:
  explicit RunCache(const Settings& s) : s_(s) {}

  RunResult get(const std::string& name, const config::RunConfig& cfg) {
    const fs::path dir = s_.work / name;
    const fs::path timing = s_.work / (name + ".seconds");
    if (s_.fresh && !done_fresh_.count(name)) {
      fs::remove_all(dir);
      fs::remove(timing);
      done_fresh_.insert(name);
    }
    double seconds = fs::exists(timing) ? std::stod(io::read_text(timing)) : 0.0;
    const bool existing = fs::exists(dir / "run.json");
    std::cerr << "[" << name << "] " << (existing ? "resuming or reusing" : "training") << std::endl;
    const auto summary = cli::train(cfg, {.run_dir = dir,
                                          .resume = existing,
                                          .log_every = s_.log_every,
                                          .log = &std::cerr});
    if (summary.last_step > summary.first_step) {
      seconds += summary.seconds;
      io::write_text_atomic(timing, fmt(seconds, 10) + "\n");
    }
    cli::LoadedModel model = cli::load_model(dir);
    RunResult r;
    r.seconds = seconds;
    for (const auto& row : cli::evaluate_model(model, "all", data::Split::kTest).rows) {
      r.ler[row.selector] = row.ler;
    }
    return r;
  }

 private:
  const Settings& s_;
  std::set<std::string> done_fresh_;
};

config::RunConfig seeded(std::uint64_t seed, const std::vector<std::string>& overrides) {
  config::RunConfig c;
  config::apply_override(c, "run.seed=" + std::to_string(seed));
  config::apply_override(c, "run.checkpoint_every=500");
  for (const auto& o : overrides) config::apply_override(c, o);
  config::finalize(c);
  return c;
}

Outcome joint_vs_separate(RunCache& cache, const Settings& s) {
  Outcome o{true, ""};
  for (std::uint64_t seed : s.seeds) {
    const std::string tag = "seed" + std::to_string(seed);
    const RunResult joint = cache.get(tag + "-joint", seeded(seed, {"run.mode=joint"}));
    double seconds = joint.seconds;
    std::ostringstream line;
    line << "seed " << seed << ":";
    for (std::size_t k : {32, 16, 8}) {
      const std::string sel = "k=" + std::to_string(k);
      const RunResult sep = cache.get(tag + "-separate" + std::to_string(k),
                                      seeded(seed, {"run.mode=separate",
                                                    "pipeline.separate_layers=" + std::to_string(k)}));
      seconds += sep.seconds;
      const double delta = joint.ler.at(sel) - sep.ler.at(sel);
      const double limit = k == 32 ? 0.005 : 0.02;
      const bool ok = delta <= limit;
      o.passed = o.passed && ok;
      line << " " << sel << " joint " << pct(joint.ler.at(sel)) << "% vs separate " << pct(sep.ler.at(sel))
           << "% (" << (ok ? "ok" : "over") << ")";
    }
    const bool fast = seconds < 45 * 60;
    o.passed = o.passed && fast;
    line << ", " << fmt(seconds / 60.0) << " min" << (fast ? "" : " (over 45 min)");
    o.detail += (o.detail.empty() ? "" : "; ") + line.str();
  }
  return o;
}

Outcome topk_vs_aux(RunCache& cache, const Settings& s) {
  std::size_t wins = 0;
  std::ostringstream detail;
  for (std::uint64_t seed : s.seeds) {
    const std::string tag = "seed" + std::to_string(seed);
    const RunResult two = cache.get(tag + "-joint2", seeded(seed, {"run.mode=joint", "pruning.subnets=32,16"}));
    const RunResult aux = cache.get(tag + "-aux", seeded(seed, {"run.mode=aux-loss"}));
    const double small = two.ler.at("k=16");
    const double half = aux.ler.at("aux");
    const bool win = small < half;
    wins += win;
    detail << (seed == s.seeds.front() ? "" : "; ") << "seed " << seed << ": top-k k=16 " << pct(small)
           << "% vs aux-loss half " << pct(half) << "% (" << (win ? "beats" : "does not beat") << ")";
  }
  const std::size_t need = (2 * s.seeds.size() + 2) / 3;
  detail << "; " << wins << "/" << s.seeds.size() << " seeds, need " << need;
  return {wins >= need, detail.str()};
}

// ---- criterion 10 ------------------------------------------------------------

Outcome reproducibility(const Settings& s) {
  config::RunConfig c;
  config::apply_override(c, "pipeline.steps=240");
  config::apply_override(c, "pipeline.iterations=4");
  config::apply_override(c, "run.checkpoint_every=100");
  config::finalize(c);
  const fs::path root = s.work / "reproducibility";
  fs::remove_all(root);
  fs::create_directories(root);

  cli::train(c, {.run_dir = root / "a"});
  cli::train(c, {.run_dir = root / "b", .max_steps = 150});
  cli::train(c, {.run_dir = root / "b", .resume = true});
  std::vector<std::pair<std::string, fs::path>> runs = {{"in-process", root / "a"},
                                                        {"interrupted and resumed", root / "b"}};

  if (!s.dynenc_binary.empty()) {
    // Rebuild the config from the manifest alone, as a user would.
    const auto manifest = cli::RunManifest::read(root / "a");
    io::write_text_atomic(root / "run.cfg", manifest.config);
    for (const char* name : {"c", "d"}) {
      const std::string cmd = "\"" + s.dynenc_binary + "\" train --config \"" + (root / "run.cfg").string() +
                              "\" --out \"" + (root / name).string() + "\" --log-every 0 > /dev/null";
      if (std::system(cmd.c_str()) != 0) return {false, "`dynenc train` exited with an error"};
      runs.emplace_back(std::string("dynenc train (") + name + ")", root / name);
    }
  }
  const std::string reference = io::read_text(root / "a" / "metrics.jsonl");
  Outcome o{true, std::to_string(reference.size()) + " bytes, " +
                      std::to_string(std::count(reference.begin(), reference.end(), '\n')) + " records;"};
  for (std::size_t i = 1; i < runs.size(); ++i) {
    const auto& [label, dir] = runs[i];
    const bool same = io::read_text(dir / "metrics.jsonl") == reference &&
                      cli::RunManifest::read(dir).config_hash == cli::RunManifest::read(root / "a").config_hash;
    o.passed = o.passed && same;
    o.detail += " " + label + (same ? " identical" : " DIFFERS") + (i + 1 < runs.size() ? "," : "");
  }
  if (s.dynenc_binary.empty()) o.detail += " (no dynenc binary given, subprocess runs skipped)";
  return o;
}

std::set<int> parse_ids(const std::string& list) {
  std::set<int> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.insert(std::stoi(item));
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  Settings s;
  std::string only, tolerate, work = (fs::temp_directory_path() / "dynenc-acceptance").string(), report;
  CLI::App app{"Acceptance criteria 1-10", "dynenc_acceptance"};
  app.add_option("--work", work, "Directory for training runs");
  app.add_option("--only", only, "Comma-separated criterion ids");
  app.add_option("--seeds", s.seeds, "Training seeds for criteria 8 and 9")->delimiter(',');
  app.add_option("--dynenc", s.dynenc_binary, "dynenc executable for the subprocess runs of criterion 10");
  app.add_option("--report", report, "Also write the criterion lines here");
  app.add_option("--tolerate", tolerate,
                 "Comma-separated criterion ids whose failure does not change the exit status");
  app.add_option("--log-every", s.log_every, "Training progress interval (0 = quiet)");
  app.add_flag("--fresh", s.fresh, "Retrain instead of reusing finished runs");
  CLI11_PARSE(app, argc, argv);
  s.work = work;
  fs::create_directories(s.work);

  RunCache cache(s);
  const verify::Options vopts;
  const std::vector<Criterion> criteria = {
      {1, "ctc matches alignment enumeration", [&] { return from_suite(verify::ctc_suite(vopts), 30); }},
      {2, "gradients match central differences", [&] { return from_suite(verify::gradient_suite(vopts), 120); }},
      {3, "relaxed k-hot contract", [&] { return from_suite(verify::relaxed_topk_suite(vopts)); }},
      {4, "nested masks and zero-out", [&] { return from_suite(verify::mask_suite(vopts)); }},
      {5, "schedules", [&] { return from_suite(verify::schedule_suite(vopts)); }},
      {6, "step 2 forwards per step", forward_counts},
      {7, "degenerate joint training equals supernet training", degeneracy},
      {8, "joint subnets vs separately trained models", [&] { return joint_vs_separate(cache, s); }},
      {9, "top-k smallest subnet vs aux-loss half", [&] { return topk_vs_aux(cache, s); }},
      {10, "identical manifests give identical metrics", [&] { return reproducibility(s); }},
  };

  const std::set<int> selected = parse_ids(only);
  const std::set<int> tolerated = parse_ids(tolerate);
  std::ostringstream lines;
  std::size_t evaluated = 0, passed = 0;
  bool blocking_failure = false;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    ++evaluated;
    passed += o.passed;
    if (!o.passed && !tolerated.count(c.id)) blocking_failure = true;
    std::ostringstream line;
    line << "criterion " << c.id << ": " << (o.passed ? "PASS" : "FAIL") << " " << c.title << ": " << o.detail
         << " [" << fmt(secs) << " s]";
    std::cout << line.str() << std::endl;
    lines << line.str() << "\n";
  }
  std::ostringstream summary;
  summary << "acceptance: " << passed << "/" << evaluated << " criteria passed";
  if (!tolerated.empty()) {
    summary << " (failures tolerated for:";
    for (int id : tolerated) summary << " " << id;
    summary << ")";
  }
  std::cout << summary.str() << std::endl;
  lines << summary.str() << "\n";
  if (!report.empty()) io::write_text_atomic(report, lines.str());
  return blocking_failure ? 1 : 0;
}
