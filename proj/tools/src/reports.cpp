// SPDX-License-Identifier: Apache-2.0
#include "dynenc/cli/reports.hpp"

#include <algorithm>
#include <charconv>
#include <iomanip>
#include <map>
#include <sstream>

namespace dynenc::cli {

namespace {

std::string join_labels(const ctc::LabelSeq& seq) {
  std::string out;
  for (int s : seq) out += (out.empty() ? "" : " ") + std::to_string(s);
  return out.empty() ? "-" : out;
}

std::string format_fraction(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

EvalRow eval_row(LoadedModel& model, const std::string& selector, const std::vector<double>& mask,
                 bool gated, std::optional<std::size_t> aux_blocks,
                 const std::vector<data::Utterance>& utts, std::size_t samples) {
  EvalRow row;
  row.selector = selector;
  row.layers = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1.0));
  row.params = encoder::param_count(model.config.encoder, mask);
  const auto r = pipeline::evaluate(model.encoder, utts, gated ? &mask : nullptr, aux_blocks, samples);
  row.ler = r.ler;
  row.errors = r.errors;
  row.reference_symbols = r.reference_symbols;
  row.samples = r.samples;
  return row;
}

}  // namespace

nlohmann::json EvalReport::to_json() const {
  nlohmann::json rows_json = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json samples = nlohmann::json::array();
    for (const auto& [hyp, ref] : r.samples) samples.push_back({{"hyp", hyp}, {"ref", ref}});
    rows_json.push_back({{"selector", r.selector},
                         {"layers", r.layers},
                         {"params", r.params},
                         {"ler", r.ler},
                         {"errors", r.errors},
                         {"reference_symbols", r.reference_symbols},
                         {"samples", samples}});
  }
  return {{"run", run}, {"split", split}, {"rows", rows_json}};
}

std::string EvalReport::to_table() const {
  std::ostringstream out;
  out << "split: " << split << "\n";
  out << std::left << std::setw(10) << "model" << std::right << std::setw(8) << "layers"
      << std::setw(10) << "params" << std::setw(10) << "LER[%]" << std::setw(14) << "errors/refs"
      << "\n";
  for (const auto& r : rows) {
    std::ostringstream ler;
    ler << std::fixed << std::setprecision(2) << 100.0 * r.ler;
    out << std::left << std::setw(10) << r.selector << std::right << std::setw(8) << r.layers
        << std::setw(10) << r.params << std::setw(10) << ler.str() << std::setw(14)
        << (std::to_string(r.errors) + "/" + std::to_string(r.reference_symbols)) << "\n";
  }
  for (const auto& r : rows) {
    for (const auto& [hyp, ref] : r.samples) {
      out << r.selector << "  hyp: " << join_labels(hyp) << "  ref: " << join_labels(ref) << "\n";
    }
  }
  return out.str();
}

EvalReport evaluate_model(LoadedModel& model, const std::string& selector, data::Split split,
                          std::size_t samples) {
  const config::RunConfig& cfg = model.config;
  const std::size_t layers = cfg.encoder.layers();
  const bool aux_run = cfg.train.mode == pipeline::Mode::kAuxLoss;
  const std::vector<double> full(layers, 1.0);

  const data::Dataset ds = data::gen_dataset(cfg.data, cfg.data_seed);
  const auto& utts = ds.split(split);
  EvalReport report;
  report.run = model.manifest.config_hash;
  report.split = data::to_string(split);

  auto add_full = [&] { report.rows.push_back(eval_row(model, "full", full, false, {}, utts, samples)); };
  auto add_aux = [&] {
    if (!aux_run) throw std::invalid_argument("mask selector 'aux' needs an aux-loss run");
    const std::size_t half = cfg.encoder.blocks / 2;
    std::vector<double> bottom(layers, 0.0);
    std::fill_n(bottom.begin(), 4 * half, 1.0);
    report.rows.push_back(eval_row(model, "aux", bottom, false, half, utts, samples));
  };
  auto add_size = [&](std::size_t k) {
    if (!model.masks) throw std::invalid_argument("run has no mask export");
    const auto& sizes = model.masks->sizes;
    const auto it = std::find(sizes.begin(), sizes.end(), k);
    if (it == sizes.end() || aux_run) {
      throw std::invalid_argument("run exports no subnet with k=" + std::to_string(k));
    }
    const auto& mask = model.masks->masks[static_cast<std::size_t>(it - sizes.begin())];
    report.rows.push_back(eval_row(model, "k=" + std::to_string(k), mask, true, {}, utts, samples));
  };

  if (selector.empty() || selector == "full") {
    add_full();
  } else if (selector == "aux") {
    add_aux();
  } else if (selector == "all") {
    if (aux_run || !model.masks) {
      add_full();
      if (aux_run) add_aux();
    } else {
      for (std::size_t k : model.masks->sizes) add_size(k);
    }
  } else if (selector.rfind("k=", 0) == 0) {
    std::size_t k = 0;
    const char* first = selector.data() + 2;
    const char* last = selector.data() + selector.size();
    const auto [ptr, ec] = std::from_chars(first, last, k);
    if (ec != std::errc() || ptr != last) throw std::invalid_argument("bad mask selector '" + selector + "'");
    add_size(k);
  } else {
    throw std::invalid_argument("unknown mask selector '" + selector +
                                "' (expected full, all, aux or k=N)");
  }
  return report;
}

std::size_t LayerReport::capacity(std::size_t g) const {
  return groups[g].second - groups[g].first + 1;
}

LayerReport layer_report(const pipeline::MaskExport& masks, std::size_t group_blocks) {
  if (group_blocks == 0) throw std::invalid_argument("group size must be positive");
  LayerReport r;
  r.group_blocks = group_blocks;
  for (std::size_t b = 0; b < masks.blocks; b += group_blocks) {
    r.groups.emplace_back(b, std::min(masks.blocks, b + group_blocks) - 1);
  }
  r.sizes = masks.sizes;
  for (const auto& mask : masks.masks) {
    std::vector<std::array<std::size_t, 4>> counts(r.groups.size(), {0, 0, 0, 0});
    for (std::size_t j = 0; j < mask.size(); ++j) {
      if (mask[j] != 1.0) continue;
      const auto id = encoder::LayerId::from_flat(j);
      ++counts[id.block / group_blocks][static_cast<std::size_t>(id.kind)];
    }
    r.counts.push_back(std::move(counts));
  }
  return r;
}

std::string LayerReport::to_csv() const {
  std::ostringstream out;
  out << "k,blocks";
  for (auto kind : encoder::kKinds) out << ',' << encoder::kind_label(kind);
  out << ",kept,capacity\n";
  for (std::size_t m = 0; m < sizes.size(); ++m) {
    for (std::size_t g = 0; g < groups.size(); ++g) {
      out << sizes[m] << ',' << groups[g].first + 1 << '-' << groups[g].second + 1;
      std::size_t kept = 0;
      for (std::size_t c : counts[m][g]) {
        out << ',' << c;
        kept += c;
      }
      out << ',' << kept << ',' << 4 * capacity(g) << '\n';
    }
  }
  return out.str();
}

std::string LayerReport::to_svg() const {
  constexpr const char* kColors[] = {"#4e79a7", "#f28e2b", "#59a14f", "#e15759"};
  constexpr int kBar = 28, kGap = 14, kUnit = 12, kPanelGap = 40, kTop = 30, kLeft = 40;
  std::size_t max_cap = 1;
  for (std::size_t g = 0; g < groups.size(); ++g) max_cap = std::max(max_cap, 4 * capacity(g));
  const int panel_w = static_cast<int>(groups.size()) * (kBar + kGap) + kGap;
  const int plot_h = static_cast<int>(max_cap) * kUnit;
  const int width = kLeft + static_cast<int>(sizes.size()) * (panel_w + kPanelGap) + 90;
  const int height = kTop + plot_h + 50;

  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  for (std::size_t m = 0; m < sizes.size(); ++m) {
    const int x0 = kLeft + static_cast<int>(m) * (panel_w + kPanelGap);
    const int base = kTop + plot_h;
    out << "  <text x=\"" << x0 + panel_w / 2 << "\" y=\"" << kTop - 12
        << "\" text-anchor=\"middle\">" << sizes[m] << " layers</text>\n";
    out << "  <line x1=\"" << x0 << "\" y1=\"" << base << "\" x2=\"" << x0 + panel_w << "\" y2=\""
        << base << "\" stroke=\"black\"/>\n";
    for (std::size_t g = 0; g < groups.size(); ++g) {
      const int x = x0 + kGap + static_cast<int>(g) * (kBar + kGap);
      int y = base;
      for (std::size_t kind = 0; kind < 4; ++kind) {
        const int h = static_cast<int>(counts[m][g][kind]) * kUnit;
        if (h == 0) continue;
        y -= h;
        out << "  <rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << kBar << "\" height=\"" << h
            << "\" fill=\"" << kColors[kind] << "\"/>\n";
      }
      out << "  <text x=\"" << x + kBar / 2 << "\" y=\"" << base + 14 << "\" text-anchor=\"middle\">"
          << groups[g].first + 1 << '-' << groups[g].second + 1 << "</text>\n";
    }
  }
  const int lx = width - 80;
  for (std::size_t kind = 0; kind < 4; ++kind) {
    const int ly = kTop + static_cast<int>(kind) * 16;
    out << "  <rect x=\"" << lx << "\" y=\"" << ly << "\" width=\"10\" height=\"10\" fill=\""
        << kColors[kind] << "\"/>\n";
    out << "  <text x=\"" << lx + 14 << "\" y=\"" << ly + 9 << "\">"
        << encoder::kind_label(encoder::kKinds[kind]) << "</text>\n";
  }
  out << "</svg>\n";
  return out.str();
}

SweepAxis sweep_axis_from_string(const std::string& name) {
  if (name == "dropout") return SweepAxis::kDropout;
  if (name == "iterations") return SweepAxis::kIterations;
  if (name == "split") return SweepAxis::kSplit;
  throw std::invalid_argument("unknown sweep axis '" + name + "' (expected dropout, iterations or split)");
}

std::string to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::kDropout: return "dropout";
    case SweepAxis::kIterations: return "iterations";
    case SweepAxis::kSplit: return "split";
  }
  return "?";
}

std::string sweep_override(SweepAxis axis, const std::string& value) {
  switch (axis) {
    case SweepAxis::kDropout: return "pipeline.layer_dropout=" + value;
    case SweepAxis::kIterations: return "pipeline.iterations=" + value;
    case SweepAxis::kSplit: {
      const auto slash = value.find('/');
      if (slash == std::string::npos) return "pipeline.step1_fraction=" + value;
      double a = 0, b = 0;
      const char* s = value.data();
      const auto r1 = std::from_chars(s, s + slash, a);
      const auto r2 = std::from_chars(s + slash + 1, s + value.size(), b);
      if (r1.ec != std::errc() || r2.ec != std::errc() || r1.ptr != s + slash ||
          r2.ptr != s + value.size() || !(a > 0.0 && b > 0.0)) {
        throw config::ConfigError("pipeline.step1_fraction", "bad split '" + value + "'");
      }
      return "pipeline.step1_fraction=" + format_fraction(a / (a + b));
    }
  }
  throw std::logic_error("unreachable sweep axis");
}

SweepReport run_sweep(const config::RunConfig& base, const SweepOptions& options) {
  if (options.values.empty()) throw std::invalid_argument("sweep needs at least one value");
  SweepReport report;
  report.axis = options.axis;
  // Validate every value before the first run starts.
  std::vector<config::RunConfig> configs;
  for (const auto& v : options.values) {
    config::RunConfig c = base;
    config::apply_override(c, sweep_override(options.axis, v));
    config::finalize(c);
    configs.push_back(c);
  }
  for (std::size_t i = 0; i < configs.size(); ++i) {
    std::string name = to_string(options.axis) + "-" + options.values[i];
    std::replace(name.begin(), name.end(), '/', '-');
    const fs::path dir = options.out_dir / name;
    if (options.log) *options.log << "== " << name << " ==" << std::endl;
    train(configs[i], {.run_dir = dir,
                       .resume = fs::exists(dir / "run.json"),
                       .log_every = options.log_every,
                       .log = options.log});
    LoadedModel model = load_model(dir);
    report.rows.push_back({options.values[i], dir, evaluate_model(model, "all", options.split)});
  }
  return report;
}

std::string SweepReport::to_csv() const {
  std::ostringstream out;
  out << to_string(axis);
  if (!rows.empty()) {
    for (const auto& r : rows.front().report.rows) out << ",ler_" << r.selector;
  }
  out << '\n';
  for (const auto& row : rows) {
    out << row.value;
    for (const auto& r : row.report.rows) out << ',' << format_fraction(r.ler);
    out << '\n';
  }
  return out.str();
}

std::string SweepReport::to_table() const {
  std::ostringstream out;
  out << std::left << std::setw(12) << to_string(axis) << std::right;
  if (!rows.empty()) {
    for (const auto& r : rows.front().report.rows) out << std::setw(10) << r.selector;
  }
  out << "   (LER[%])\n";
  for (const auto& row : rows) {
    out << std::left << std::setw(12) << row.value << std::right << std::fixed << std::setprecision(2);
    for (const auto& r : row.report.rows) out << std::setw(10) << 100.0 * r.ler;
    out << '\n';
  }
  return out.str();
}

}  // namespace dynenc::cli
