// SPDX-License-Identifier: Apache-2.0
#include "dynenc/config.hpp"

#include <charconv>
#include <functional>
#include <map>
#include <sstream>

#include "dynenc/io.hpp"

namespace dynenc::config {

namespace {

struct Entry {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError(key, "cannot parse '" + text + "' as a number");
  }
  return v;
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

template <class Field>
Entry size_entry(Field field) {
  return {[field](RunConfig& c, const std::string& v) {
            field(c) = parse_number<std::size_t>("", v);
          },
          [field](const RunConfig& c) { return std::to_string(field(c)); }};
}

template <class Field>
Entry u64_entry(Field field) {
  return {[field](RunConfig& c, const std::string& v) {
            field(c) = parse_number<std::uint64_t>("", v);
          },
          [field](const RunConfig& c) { return std::to_string(field(c)); }};
}

template <class Field>
Entry double_entry(Field field) {
  return {[field](RunConfig& c, const std::string& v) { field(c) = parse_number<double>("", v); },
          [field](const RunConfig& c) { return format_double(field(c)); }};
}

const std::map<std::string, Entry>& table() {
  static const std::map<std::string, Entry> t = [] {
    std::map<std::string, Entry> m;
    // run
    m["run.mode"] = {[](RunConfig& c, const std::string& v) { c.train.mode = pipeline::mode_from_string(v); },
                     [](const RunConfig& c) { return pipeline::to_string(c.train.mode); }};
    m["run.seed"] = u64_entry([](auto& c) -> auto& { return c.train.seed; });
    m["run.checkpoint_every"] = size_entry([](auto& c) -> auto& { return c.train.checkpoint_every; });
    // data
    m["data.seed"] = u64_entry([](auto& c) -> auto& { return c.data_seed; });
    m["data.vocab"] = size_entry([](auto& c) -> auto& { return c.data.vocab; });
    m["data.feature_dim"] = size_entry([](auto& c) -> auto& { return c.data.feature_dim; });
    m["data.min_frames"] = size_entry([](auto& c) -> auto& { return c.data.min_frames; });
    m["data.max_frames"] = size_entry([](auto& c) -> auto& { return c.data.max_frames; });
    m["data.min_labels"] = size_entry([](auto& c) -> auto& { return c.data.min_labels; });
    m["data.max_labels"] = size_entry([](auto& c) -> auto& { return c.data.max_labels; });
    m["data.noise"] = double_entry([](auto& c) -> auto& { return c.data.noise; });
    m["data.template_seed"] = u64_entry([](auto& c) -> auto& { return c.data.template_seed; });
    m["data.train_size"] = size_entry([](auto& c) -> auto& { return c.data.train_size; });
    m["data.dev_size"] = size_entry([](auto& c) -> auto& { return c.data.dev_size; });
    m["data.test_size"] = size_entry([](auto& c) -> auto& { return c.data.test_size; });
    // encoder
    m["encoder.blocks"] = size_entry([](auto& c) -> auto& { return c.encoder.blocks; });
    m["encoder.model_dim"] = size_entry([](auto& c) -> auto& { return c.encoder.model_dim; });
    m["encoder.ff_dim"] = size_entry([](auto& c) -> auto& { return c.encoder.ff_dim; });
    m["encoder.heads"] = size_entry([](auto& c) -> auto& { return c.encoder.heads; });
    m["encoder.conv_kernel"] = size_entry([](auto& c) -> auto& { return c.encoder.conv_kernel; });
    m["encoder.subsample"] = size_entry([](auto& c) -> auto& { return c.encoder.subsample; });
    m["encoder.dropout"] = double_entry([](auto& c) -> auto& { return c.encoder.dropout; });
    // pruning
    m["pruning.method"] = {
        [](RunConfig& c, const std::string& v) { c.train.method = pipeline::method_from_string(v); },
        [](const RunConfig& c) { return pipeline::to_string(c.train.method); }};
    m["pruning.relaxation"] = {
        [](RunConfig& c, const std::string& v) {
          c.train.relaxed.method = pruning::relaxation_from_string(v);
        },
        [](const RunConfig& c) { return pruning::to_string(c.train.relaxed.method); }};
    m["pruning.temperature"] = double_entry([](auto& c) -> auto& { return c.train.relaxed.temperature; });
    m["pruning.gamma"] = double_entry([](auto& c) -> auto& { return c.train.sparsity_scale; });
    m["pruning.subnets"] = {
        [](RunConfig& c, const std::string& v) {
          std::vector<std::size_t> sizes;
          std::stringstream ss(v);
          std::string item;
          while (std::getline(ss, item, ',')) sizes.push_back(parse_number<std::size_t>("", trim(item)));
          if (sizes.empty()) throw std::invalid_argument("empty subnet list");
          c.train.subnets = sizes;
        },
        [](const RunConfig& c) {
          std::string out;
          for (std::size_t k : c.train.subnets) out += (out.empty() ? "" : ",") + std::to_string(k);
          return out;
        }};
    // pipeline
    m["pipeline.steps"] = size_entry([](auto& c) -> auto& { return c.train.steps; });
    m["pipeline.step1_fraction"] = double_entry([](auto& c) -> auto& { return c.train.step1_fraction; });
    m["pipeline.iterations"] = size_entry([](auto& c) -> auto& { return c.train.iterations; });
    m["pipeline.subnet_scale"] = double_entry([](auto& c) -> auto& { return c.train.subnet_scale; });
    m["pipeline.layer_dropout"] = double_entry([](auto& c) -> auto& { return c.train.layer_dropout; });
    m["pipeline.separate_layers"] = size_entry([](auto& c) -> auto& { return c.train.separate_layers; });
    m["pipeline.aux_scale"] = double_entry([](auto& c) -> auto& { return c.train.aux_scale; });
    m["pipeline.batch_size"] = size_entry([](auto& c) -> auto& { return c.train.batch_size; });
    // optim
    m["optim.lr_peak"] = double_entry([](auto& c) -> auto& { return c.train.lr.peak; });
    m["optim.lr_floor"] = double_entry([](auto& c) -> auto& { return c.train.lr.floor; });
    m["optim.lr_final"] = double_entry([](auto& c) -> auto& { return c.train.lr.final; });
    m["optim.warm_fraction"] = double_entry([](auto& c) -> auto& { return c.train.lr.warm_fraction; });
    m["optim.decay_fraction"] = double_entry([](auto& c) -> auto& { return c.train.lr.decay_fraction; });
    m["optim.beta1"] = double_entry([](auto& c) -> auto& { return c.train.adam.beta1; });
    m["optim.beta2"] = double_entry([](auto& c) -> auto& { return c.train.adam.beta2; });
    m["optim.eps"] = double_entry([](auto& c) -> auto& { return c.train.adam.eps; });
    m["optim.score_lr_scale"] = double_entry([](auto& c) -> auto& { return c.train.score_lr_scale; });
    return m;
  }();
  return t;
}

const Entry& lookup(const std::string& key) {
  const auto it = table().find(key);
  if (it == table().end()) throw ConfigError(key, "unknown configuration key");
  return it->second;
}

}  // namespace

std::vector<std::string> keys() {
  std::vector<std::string> out;
  for (const auto& [k, _] : table()) out.push_back(k);
  return out;
}

void set(RunConfig& config, const std::string& key, const std::string& value) {
  const Entry& e = lookup(key);
  try {
    e.set(config, value);
  } catch (const ConfigError& err) {
    throw ConfigError(key, "cannot parse '" + value + "'");
  } catch (const std::invalid_argument& err) {
    throw ConfigError(key, err.what());
  }
}

std::string get(const RunConfig& config, const std::string& key) { return lookup(key).get(config); }

void apply_override(RunConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError(trim(assignment), "expected key=value");
  set(config, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void apply_text(RunConfig& config, const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (t.find('=') == std::string::npos) {
      throw ConfigError(t, "line " + std::to_string(lineno) + " is not a key = value assignment");
    }
    apply_override(config, t);
  }
}

void finalize(RunConfig& config) {
  config.encoder.vocab = config.data.vocab;
  config.encoder.input_dim = config.data.feature_dim;
  try {
    config.data.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("data", e.what());
  }
  try {
    config.encoder.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("encoder", e.what());
  }
  try {
    config.train.validate(config.encoder.layers(), config.encoder.blocks);
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    throw ConfigError(msg.substr(0, msg.find(':')), msg.substr(msg.find(':') + 2));
  }
}

std::string to_text(const RunConfig& config) {
  std::string out;
  for (const auto& [key, entry] : table()) out += key + " = " + entry.get(config) + "\n";
  return out;
}

std::string config_hash(const RunConfig& config) { return io::git_blob_hash(to_text(config)); }

}  // namespace dynenc::config
