// SPDX-License-Identifier: Apache-2.0
#include "dynenc/data.hpp"

#include <algorithm>
#include <stdexcept>

#include "dynenc/io.hpp"

namespace dynenc::data {

namespace {

constexpr std::uint64_t kSplitSalt[] = {0x7472'6169'6e00'0001ULL, 0x6465'7600'0000'0002ULL,
                                        0x7465'7374'0000'0003ULL};

Utterance render(const SynthTaskConfig& c, const std::vector<std::vector<double>>& templates,
                 std::uint64_t id) {
  Rng rng(id);
  Utterance u;
  u.id = id;
  const std::size_t length = c.min_labels + uniform_index(rng, c.max_labels - c.min_labels + 1);
  std::vector<std::size_t> durations;
  int prev = ctc::kBlank;
  for (std::size_t i = 0; i < length; ++i) {
    int sym;
    do {
      sym = 1 + static_cast<int>(uniform_index(rng, c.vocab - 1));
    } while (sym == prev);
    u.labels.push_back(sym);
    prev = sym;
    durations.push_back(c.min_frames + uniform_index(rng, c.max_frames - c.min_frames + 1));
  }
  std::size_t frames = 0;
  for (std::size_t d : durations) frames += d;
  u.features = Tensor({frames, c.feature_dim});
  std::size_t t = 0;
  for (std::size_t i = 0; i < length; ++i) {
    const auto& tpl = templates[static_cast<std::size_t>(u.labels[i]) - 1];
    for (std::size_t r = 0; r < durations[i]; ++r, ++t) {
      for (std::size_t f = 0; f < c.feature_dim; ++f) {
        u.features.at(t, f) = tpl[f] + (c.noise > 0.0 ? c.noise * normal(rng) : 0.0);
      }
    }
  }
  return u;
}

}  // namespace

void SynthTaskConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("data config: " + msg); };
  if (vocab < 3) fail("vocab must be at least 3");
  if (feature_dim < 4) fail("feature_dim must be at least 4");
  if (min_frames < 1 || min_frames > max_frames) fail("frames-per-symbol range is empty");
  if (min_labels < 1 || min_labels > max_labels) fail("label-length range is empty");
  if (!(noise >= 0.0)) fail("noise must be non-negative");
}

std::string to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kDev: return "dev";
    case Split::kTest: return "test";
  }
  return "?";
}

Split split_from_string(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "dev") return Split::kDev;
  if (name == "test") return Split::kTest;
  throw std::invalid_argument("unknown split '" + name + "'");
}

const std::vector<Utterance>& Dataset::split(Split s) const {
  switch (s) {
    case Split::kTrain: return train;
    case Split::kDev: return dev;
    case Split::kTest: return test;
  }
  throw std::logic_error("unreachable split");
}

Dataset gen_dataset(const SynthTaskConfig& config, std::uint64_t seed) {
  config.validate();
  Dataset ds;
  ds.config = config;
  Rng trng(config.template_seed);
  ds.templates.assign(config.vocab - 1, std::vector<double>(config.feature_dim));
  for (auto& tpl : ds.templates) {
    for (double& v : tpl) v = normal(trng);
  }
  const std::size_t sizes[] = {config.train_size, config.dev_size, config.test_size};
  std::vector<Utterance>* out[] = {&ds.train, &ds.dev, &ds.test};
  for (int s = 0; s < 3; ++s) {
    const std::uint64_t base = derive_seed(seed, kSplitSalt[s]);
    out[s]->reserve(sizes[s]);
    for (std::size_t i = 0; i < sizes[s]; ++i) {
      out[s]->push_back(render(config, ds.templates, derive_seed(base, i)));
    }
  }
  return ds;
}

Batch make_batch(const std::vector<Utterance>& split, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw std::invalid_argument("make_batch: no utterances");
  Batch b;
  const std::size_t dim = split.at(indices.front()).features.dim(1);
  std::size_t frames = 0;
  for (std::size_t i : indices) frames += split.at(i).features.dim(0);
  b.features = Tensor({frames, dim});
  auto dst = b.features.data.begin();
  for (std::size_t i : indices) {
    const Utterance& u = split[i];
    dst = std::copy(u.features.data.begin(), u.features.data.end(), dst);
    b.segments.lengths.push_back(u.features.dim(0));
    b.labels.push_back(u.labels);
  }
  b.indices = indices;
  return b;
}

PaddedBatch to_padded(const Batch& batch) {
  PaddedBatch p;
  p.lengths = batch.segments.lengths;
  const std::size_t tmax = *std::max_element(p.lengths.begin(), p.lengths.end());
  const std::size_t dim = batch.features.dim(1);
  p.features = Tensor({p.lengths.size(), tmax, dim});
  const auto offsets = batch.segments.offsets();
  for (std::size_t u = 0; u < p.lengths.size(); ++u) {
    std::copy_n(batch.features.data.begin() + static_cast<std::ptrdiff_t>(offsets[u] * dim),
                p.lengths[u] * dim,
                p.features.data.begin() + static_cast<std::ptrdiff_t>(u * tmax * dim));
  }
  return p;
}

std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
  return order;
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size,
                                                    std::uint64_t seed) {
  if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
  const auto order = permutation(n, seed);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < n; i += batch_size) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + batch_size)));
  }
  return out;
}

BatchStream::BatchStream(const std::vector<Utterance>& split, std::size_t batch_size,
                         std::uint64_t seed)
    : split_(&split), batch_size_(batch_size), seed_(seed) {
  if (split.empty()) throw std::invalid_argument("batch stream over an empty split");
  load_epoch();
}

void BatchStream::load_epoch() {
  batches_ = epoch_batches(split_->size(), batch_size_, derive_seed(seed_, epoch_));
}

Batch BatchStream::next() {
  if (position_ == batches_.size()) {
    ++epoch_;
    position_ = 0;
    load_epoch();
  }
  return make_batch(*split_, batches_[position_++]);
}

void BatchStream::seek(std::size_t epoch, std::size_t position) {
  epoch_ = epoch;
  load_epoch();
  if (position > batches_.size()) throw std::invalid_argument("batch stream position out of range");
  position_ = position;
}

void save_split(const std::filesystem::path& dir, const std::vector<Utterance>& split) {
  io::Bundle bundle;
  nlohmann::json utts = nlohmann::json::array();
  for (std::size_t i = 0; i < split.size(); ++i) {
    utts.push_back({{"id", split[i].id}, {"labels", split[i].labels}});
    bundle.tensors.push_back({"utt" + std::to_string(i), split[i].features});
  }
  bundle.meta["utterances"] = std::move(utts);
  io::write_bundle(dir, bundle);
}

std::vector<Utterance> load_split(const std::filesystem::path& dir) {
  const io::Bundle bundle = io::read_bundle(dir);
  std::vector<Utterance> out;
  const auto& utts = bundle.meta.at("utterances");
  for (std::size_t i = 0; i < utts.size(); ++i) {
    Utterance u;
    u.id = utts[i].at("id").get<std::uint64_t>();
    u.labels = utts[i].at("labels").get<ctc::LabelSeq>();
    u.features = bundle.get("utt" + std::to_string(i));
    out.push_back(std::move(u));
  }
  return out;
}

}  // namespace dynenc::data
