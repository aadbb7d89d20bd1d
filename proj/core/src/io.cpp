// SPDX-License-Identifier: Apache-2.0
#include "dynenc/io.hpp"

#include <openssl/sha.h>

#include <bit>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace dynenc::io {

namespace fs = std::filesystem;

namespace {

constexpr const char* kManifest = "manifest.json";
constexpr const char* kBlob = "tensors.bin";
constexpr int kFormatVersion = 1;

void put_le(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

double get_le(const char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) {
    bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  }
  return std::bit_cast<double>(bits);
}

}  // namespace

const Tensor& Bundle::get(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t.tensor;
  }
  throw std::runtime_error("bundle has no tensor '" + name + "'");
}

bool Bundle::contains(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return true;
  }
  return false;
}

void write_text_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw std::runtime_error("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_bundle(const fs::path& dir, const Bundle& bundle) {
  fs::create_directories(dir);
  nlohmann::json manifest;
  manifest["format"] = kFormatVersion;
  manifest["meta"] = bundle.meta;
  manifest["tensors"] = nlohmann::json::array();
  std::string blob;
  std::size_t offset = 0;
  for (const auto& t : bundle.tensors) {
    manifest["tensors"].push_back(
        {{"name", t.name}, {"shape", t.tensor.shape}, {"offset", offset}, {"count", t.tensor.size()}});
    blob.reserve(blob.size() + 8 * t.tensor.size());
    for (double v : t.tensor.data) put_le(blob, v);
    offset += t.tensor.size();
  }
  manifest["total"] = offset;
  write_text_atomic(dir / kBlob, blob);
  write_text_atomic(dir / kManifest, manifest.dump(2) + "\n");
}

Bundle read_bundle(const fs::path& dir) {
  const nlohmann::json manifest = nlohmann::json::parse(read_text(dir / kManifest));
  if (manifest.value("format", 0) != kFormatVersion) {
    throw std::runtime_error(dir.string() + ": unsupported bundle format");
  }
  const std::string blob = read_text(dir / kBlob);
  const std::size_t total = manifest.at("total").get<std::size_t>();
  if (blob.size() != 8 * total) {
    throw std::runtime_error(dir.string() + ": blob holds " + std::to_string(blob.size()) +
                             " bytes, manifest expects " + std::to_string(8 * total));
  }
  Bundle out;
  out.meta = manifest.at("meta");
  for (const auto& entry : manifest.at("tensors")) {
    Shape shape = entry.at("shape").get<Shape>();
    const std::size_t offset = entry.at("offset").get<std::size_t>();
    const std::size_t count = entry.at("count").get<std::size_t>();
    if (count != numel(shape) || offset + count > total) {
      throw std::runtime_error(dir.string() + ": bad manifest entry " +
                               entry.at("name").get<std::string>());
    }
    Tensor t(shape);
    for (std::size_t i = 0; i < count; ++i) t[i] = get_le(blob.data() + 8 * (offset + i));
    out.tensors.push_back({entry.at("name").get<std::string>(), std::move(t)});
  }
  return out;
}

std::string git_blob_hash(const std::string& content) {
  const std::string header = "blob " + std::to_string(content.size());
  std::string payload = header;
  payload.push_back('\0');
  payload += content;
  unsigned char digest[SHA_DIGEST_LENGTH];
  SHA1(reinterpret_cast<const unsigned char*>(payload.data()), payload.size(), digest);
  std::string hex;
  char buf[3];
  for (unsigned char c : digest) {
    std::snprintf(buf, sizeof buf, "%02x", c);
    hex += buf;
  }
  return hex;
}

}  // namespace dynenc::io
