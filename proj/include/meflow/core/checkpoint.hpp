#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "meflow/core/tensor.hpp"

// Checkpoint file: 8-byte magic, little-endian u64 manifest length, JSON
// manifest (parameter names, shapes, dtype, byte offsets into the blob),
// then one raw little-endian binary blob. Writes are atomic (temp + rename).

namespace meflow {

namespace detail {
constexpr char kCkptMagic[8] = {'M', 'E', 'F', 'C', 'K', 'P', 'T', '1'};

static_assert(sizeof(double) == 8, "64-bit doubles required");

inline void host_to_le64(const double* src, size_t n, std::vector<unsigned char>& out) {
  out.resize(n * 8);
  for (size_t i = 0; i < n; ++i) {
    uint64_t bits;
    std::memcpy(&bits, &src[i], 8);
    for (int b = 0; b < 8; ++b) out[i * 8 + b] = (unsigned char)(bits >> (8 * b));
  }
}

inline void le64_to_host(const unsigned char* src, size_t n, double* out) {
  for (size_t i = 0; i < n; ++i) {
    uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= (uint64_t)src[i * 8 + b] << (8 * b);
    std::memcpy(&out[i], &bits, 8);
  }
}
}  // namespace detail

inline void save_checkpoint(const std::string& path,
                            const std::vector<std::pair<std::string, Tensor>>& params,
                            const nlohmann::json& extra = {}) {
  nlohmann::json manifest;
  manifest["format"] = "meflow-checkpoint";
  manifest["version"] = 1;
  if (!extra.is_null() && !extra.empty()) manifest["extra"] = extra;
  nlohmann::json plist = nlohmann::json::array();
  uint64_t offset = 0;
  for (const auto& [name, t] : params) {
    nlohmann::json e;
    e["name"] = name;
    e["shape"] = t.shape();
    e["dtype"] = "f64le";
    e["offset"] = offset;
    e["nbytes"] = (uint64_t)t.size() * 8;
    offset += (uint64_t)t.size() * 8;
    plist.push_back(e);
  }
  manifest["params"] = plist;
  const std::string mtext = manifest.dump();

  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open " + tmp + " for writing");
    f.write(detail::kCkptMagic, 8);
    uint64_t mlen = mtext.size();
    unsigned char lenb[8];
    for (int b = 0; b < 8; ++b) lenb[b] = (unsigned char)(mlen >> (8 * b));
    f.write((const char*)lenb, 8);
    f.write(mtext.data(), (std::streamsize)mtext.size());
    std::vector<unsigned char> buf;
    for (const auto& [name, t] : params) {
      detail::host_to_le64(t.data(), (size_t)t.size(), buf);
      f.write((const char*)buf.data(), (std::streamsize)buf.size());
    }
    if (!f) throw std::runtime_error("checkpoint: write failed for " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw std::runtime_error("checkpoint: rename to " + path + " failed");
}

// Manifest only, no parameter data. Lets a caller rebuild the architecture
// recorded under "extra" before constructing the model load_checkpoint fills.
inline nlohmann::json read_checkpoint_manifest(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, detail::kCkptMagic, 8) != 0)
    throw std::runtime_error("checkpoint: " + path + " is not a checkpoint file");
  unsigned char lenb[8];
  f.read((char*)lenb, 8);
  uint64_t mlen = 0;
  for (int b = 0; b < 8; ++b) mlen |= (uint64_t)lenb[b] << (8 * b);
  std::string mtext(mlen, '\0');
  f.read(mtext.data(), (std::streamsize)mlen);
  if (!f) throw std::runtime_error("checkpoint: truncated manifest in " + path);
  return nlohmann::json::parse(mtext);
}

inline nlohmann::json load_checkpoint(const std::string& path,
                                      std::vector<std::pair<std::string, Tensor>>& params) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, detail::kCkptMagic, 8) != 0)
    throw std::runtime_error("checkpoint: " + path + " is not a checkpoint file");
  unsigned char lenb[8];
  f.read((char*)lenb, 8);
  uint64_t mlen = 0;
  for (int b = 0; b < 8; ++b) mlen |= (uint64_t)lenb[b] << (8 * b);
  std::string mtext(mlen, '\0');
  f.read(mtext.data(), (std::streamsize)mlen);
  if (!f) throw std::runtime_error("checkpoint: truncated manifest in " + path);
  nlohmann::json manifest = nlohmann::json::parse(mtext);

  const auto& plist = manifest.at("params");
  if (plist.size() != params.size())
    throw std::runtime_error("checkpoint: " + path + " holds " + std::to_string(plist.size()) +
                             " parameters, model has " + std::to_string(params.size()));
  const std::streampos blob_start = f.tellg();
  std::vector<unsigned char> buf;
  for (size_t i = 0; i < params.size(); ++i) {
    const auto& e = plist[i];
    auto& [name, t] = params[i];
    if (e.at("name").get<std::string>() != name)
      throw std::runtime_error("checkpoint: parameter " + std::to_string(i) + " is '" +
                               e.at("name").get<std::string>() + "', model expects '" + name +
                               "'");
    Shape shape = e.at("shape").get<Shape>();
    if (shape != t.shape())
      throw std::runtime_error("checkpoint: shape mismatch for " + name + ": file " +
                               shape_str(shape) + ", model " + shape_str(t.shape()));
    if (e.at("dtype").get<std::string>() != "f64le")
      throw std::runtime_error("checkpoint: unsupported dtype for " + name);
    const uint64_t off = e.at("offset").get<uint64_t>();
    const uint64_t nb = e.at("nbytes").get<uint64_t>();
    if (nb != (uint64_t)t.size() * 8)
      throw std::runtime_error("checkpoint: byte count mismatch for " + name);
    f.seekg(blob_start + (std::streampos)off);
    buf.resize(nb);
    f.read((char*)buf.data(), (std::streamsize)nb);
    if (!f) throw std::runtime_error("checkpoint: truncated data for " + name);
    detail::le64_to_host(buf.data(), (size_t)t.size(), t.data());
  }
  return manifest;
}

}  // namespace meflow
