// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include <unistd.h>

#include "dynenc/data.hpp"
#include "dynenc/io.hpp"
#include "dynenc/oracles.hpp"
#include "fixtures.hpp"

namespace dynenc::data {
namespace {

std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() /
             ("dynenc_test_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  return dir;
}

TEST(SynthTask, SameSeedGivesIdenticalData) {
  const auto cfg = testing::tiny_task();
  const Dataset a = gen_dataset(cfg, 11);
  const Dataset b = gen_dataset(cfg, 11);
  ASSERT_EQ(a.train.size(), b.train.size());
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    EXPECT_EQ(a.train[i].features.data, b.train[i].features.data);
    EXPECT_EQ(a.train[i].labels, b.train[i].labels);
  }
  const Dataset c = gen_dataset(cfg, 12);
  EXPECT_NE(a.train[0].features.data, c.train[0].features.data);
  EXPECT_EQ(a.templates, c.templates);
}

TEST(SynthTask, UtterancesRespectTheConfiguredRanges) {
  const Dataset ds = gen_dataset(SynthTaskConfig{.train_size = 300, .dev_size = 5, .test_size = 5}, 1);
  std::set<std::uint64_t> ids;
  for (Split s : {Split::kTrain, Split::kDev, Split::kTest}) {
    for (const Utterance& u : ds.split(s)) {
      ids.insert(u.id);
      ASSERT_GE(u.labels.size(), 3u);
      ASSERT_LE(u.labels.size(), 12u);
      EXPECT_GE(u.features.dim(0), 2 * u.labels.size());
      EXPECT_LE(u.features.dim(0), 4 * u.labels.size());
      EXPECT_EQ(u.features.dim(1), 20u);
      for (std::size_t i = 0; i < u.labels.size(); ++i) {
        EXPECT_GE(u.labels[i], 1);
        EXPECT_LE(u.labels[i], 12);
        if (i > 0) EXPECT_NE(u.labels[i], u.labels[i - 1]);
      }
    }
  }
  EXPECT_EQ(ids.size(), 310u);  // splits are disjoint
}

TEST(SynthTask, NoiselessFramesAreTemplatesAndClassifyPerfectly) {
  SynthTaskConfig cfg = testing::tiny_task();
  cfg.noise = 0.0;
  const Dataset ds = gen_dataset(cfg, 3);
  std::size_t frames = 0, correct = 0;
  for (const Utterance& u : ds.train) {
    ctc::LabelSeq decoded;
    for (std::size_t t = 0; t < u.features.dim(0); ++t) {
      const std::span<const double> frame(&u.features.data[t * cfg.feature_dim], cfg.feature_dim);
      const int sym = static_cast<int>(oracle::nearest_template(frame, ds.templates)) + 1;
      const auto& tpl = ds.templates[static_cast<std::size_t>(sym) - 1];
      correct += std::equal(frame.begin(), frame.end(), tpl.begin()) ? 1 : 0;
      ++frames;
      if (decoded.empty() || decoded.back() != sym) decoded.push_back(sym);
    }
    // Without adjacent repeats the run-length collapse recovers the labels.
    EXPECT_EQ(decoded, u.labels);
  }
  EXPECT_EQ(correct, frames);
}

TEST(SynthTask, RejectsInvalidConfigs) {
  EXPECT_THROW(gen_dataset(SynthTaskConfig{.vocab = 2}, 1), std::invalid_argument);
  EXPECT_THROW(gen_dataset(SynthTaskConfig{.feature_dim = 3}, 1), std::invalid_argument);
  EXPECT_THROW(gen_dataset(SynthTaskConfig{.min_frames = 5, .max_frames = 4}, 1),
               std::invalid_argument);
  EXPECT_THROW(gen_dataset(SynthTaskConfig{.min_labels = 0}, 1), std::invalid_argument);
}

TEST(Batching, EpochPartitionsTheSplit) {
  for (std::size_t bs : {1, 5, 7, 24, 100}) {
    const auto batches = epoch_batches(24, bs, 9);
    std::multiset<std::size_t> seen;
    for (const auto& b : batches) {
      EXPECT_LE(b.size(), bs);
      seen.insert(b.begin(), b.end());
    }
    EXPECT_EQ(seen.size(), 24u);
    EXPECT_EQ(std::set<std::size_t>(seen.begin(), seen.end()).size(), 24u);
  }
  EXPECT_THROW(epoch_batches(4, 0, 1), std::invalid_argument);
}

TEST(Batching, PaddingKeepsTrueLengths) {
  const Dataset ds = gen_dataset(testing::tiny_task(), 2);
  const Batch one = make_batch(ds.train, {3});
  const PaddedBatch p1 = to_padded(one);
  EXPECT_EQ(p1.features.dim(1), ds.train[3].features.dim(0));
  EXPECT_EQ(p1.features.data, ds.train[3].features.data);

  const Batch b = make_batch(ds.train, {0, 1, 2});
  const PaddedBatch p = to_padded(b);
  for (std::size_t u = 0; u < 3; ++u) {
    EXPECT_EQ(p.lengths[u], ds.train[u].features.dim(0));
    const std::size_t tmax = p.features.dim(1), dim = p.features.dim(2);
    for (std::size_t t = 0; t < tmax; ++t) {
      for (std::size_t f = 0; f < dim; ++f) {
        const double v = p.features.data[(u * tmax + t) * dim + f];
        EXPECT_EQ(v, t < p.lengths[u] ? ds.train[u].features.at(t, f) : 0.0);
      }
    }
  }
}

TEST(Batching, StreamReshufflesAndSeeks) {
  const Dataset ds = gen_dataset(testing::tiny_task(), 2);
  BatchStream a(ds.train, 5, 4);
  std::vector<std::vector<std::size_t>> first;
  for (int i = 0; i < 12; ++i) first.push_back(a.next().indices);
  EXPECT_EQ(a.epoch(), 2u);
  EXPECT_NE(first[0], first[5]);  // epoch 1 reshuffled
  BatchStream b(ds.train, 5, 4);
  b.seek(1, 2);
  EXPECT_EQ(b.next().indices, first[7]);
}

TEST(Cache, SplitRoundTripIsExact) {
  const Dataset ds = gen_dataset(testing::tiny_task(), 2);
  const auto dir = scratch_dir("split");
  save_split(dir, ds.dev);
  const auto back = load_split(dir);
  ASSERT_EQ(back.size(), ds.dev.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].id, ds.dev[i].id);
    EXPECT_EQ(back[i].labels, ds.dev[i].labels);
    EXPECT_EQ(back[i].features.data, ds.dev[i].features.data);
    EXPECT_EQ(back[i].features.shape, ds.dev[i].features.shape);
  }
  std::filesystem::remove_all(dir);
}

TEST(Bundle, LittleEndianLayoutAndOffsets) {
  const auto dir = scratch_dir("bundle");
  io::Bundle b;
  b.meta["note"] = "x";
  b.tensors.push_back({"a", Tensor({2}, {1.0, -2.5})});
  b.tensors.push_back({"b", Tensor({1, 3}, {0.1, 0.2, 0.3})});
  io::write_bundle(dir, b);
  std::ifstream blob(dir / "tensors.bin", std::ios::binary);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(blob)), {});
  ASSERT_EQ(bytes.size(), 5u * 8u);
  // 1.0 = 0x3FF0000000000000, least significant byte first.
  EXPECT_EQ(bytes[7], 0x3F);
  EXPECT_EQ(bytes[6], 0xF0);
  EXPECT_EQ(bytes[0], 0x00);
  const io::Bundle r = io::read_bundle(dir);
  EXPECT_EQ(r.meta.at("note"), "x");
  EXPECT_EQ(r.get("b").data, b.tensors[1].tensor.data);
  EXPECT_EQ(r.get("b").shape, (Shape{1, 3}));
  const auto manifest = nlohmann::json::parse(io::read_text(dir / "manifest.json"));
  EXPECT_EQ(manifest.at("tensors")[1].at("offset"), 2);

  std::filesystem::resize_file(dir / "tensors.bin", 32);
  EXPECT_THROW(io::read_bundle(dir), std::runtime_error);
  std::filesystem::remove_all(dir);
}

TEST(Bundle, GitBlobHash) {
  EXPECT_EQ(io::git_blob_hash(""), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
  EXPECT_EQ(io::git_blob_hash("hello\n"), "ce013625030ba8dba906f756967f9e9ca394464a");
}

}  // namespace
}  // namespace dynenc::data
