// SPDX-License-Identifier: Apache-2.0
//
// Tensor bundles: a directory holding manifest.json (names, shapes, element
// offsets, free-form metadata) and tensors.bin, the concatenated row-major
// values as little-endian IEEE-754 doubles.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "dynenc/tensor.hpp"

namespace dynenc::io {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct Bundle {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<NamedTensor> tensors;

  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;
};

/// Writes into `dir` (created if needed); existing bundle files are replaced
/// via rename so readers never see a half-written blob.
void write_bundle(const std::filesystem::path& dir, const Bundle& bundle);
/// Throws std::runtime_error on a missing, truncated or inconsistent bundle.
Bundle read_bundle(const std::filesystem::path& dir);

/// Writes `text` to `path` through a temporary file and rename.
void write_text_atomic(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

/// Git-style content hash: SHA-1 over "blob <size>\0<content>", hex encoded.
std::string git_blob_hash(const std::string& content);

}  // namespace dynenc::io
