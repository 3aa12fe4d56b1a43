#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>

#include "meflow/core/tensor.hpp"

namespace meflow {

namespace detail {

inline void put_u32le(std::string& out, uint32_t u) {
  for (int b = 0; b < 4; ++b) out.push_back((char)(unsigned char)(u >> (8 * b)));
}

inline uint32_t get_u32le(const unsigned char* p) {
  return (uint32_t)p[0] | (uint32_t)p[1] << 8 | (uint32_t)p[2] << 16 | (uint32_t)p[3] << 24;
}

inline void put_f32le(std::string& out, float v) {
  uint32_t u;
  std::memcpy(&u, &v, 4);
  put_u32le(out, u);
}

inline float get_f32le(const unsigned char* p) {
  const uint32_t u = get_u32le(p);
  float v;
  std::memcpy(&v, &u, 4);
  return v;
}

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("io: cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return bytes;
}

inline void write_file_atomic(const std::string& path, const std::string& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw std::runtime_error("io: cannot open " + tmp + " for writing");
    f.write(bytes.data(), (std::streamsize)bytes.size());
    if (!f) throw std::runtime_error("io: write failed for " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw std::runtime_error("io: rename to " + path + " failed");
}

}  // namespace detail

// the community flow container: "PIEH" magic (the float 202021.25, little
// endian), 32-bit dims, then row-major interleaved (u,v) 32-bit floats
constexpr float kFloMagic = 202021.25f;

inline void write_flo(const std::string& path, const Tensor& flow) {
  if (flow.shape().size() != 3 || flow.shape()[2] != 2)
    throw std::invalid_argument("flo: expected a [H,W,2] field, got " + shape_str(flow.shape()));
  const int64_t h = flow.shape()[0], w = flow.shape()[1];
  if (h < 1 || w < 1 || h > INT32_MAX || w > INT32_MAX)
    throw std::invalid_argument("flo: dimensions do not fit the header");
  for (int64_t i = 0; i < flow.size(); ++i)
    if (!std::isfinite(flow[i]))
      throw std::invalid_argument("flo: field holds a non-finite value");

  std::string bytes;
  bytes.reserve((size_t)(12 + 8 * h * w));
  detail::put_f32le(bytes, kFloMagic);
  detail::put_u32le(bytes, (uint32_t)(int32_t)w);
  detail::put_u32le(bytes, (uint32_t)(int32_t)h);
  for (int64_t i = 0; i < flow.size(); ++i) detail::put_f32le(bytes, (float)flow[i]);
  detail::write_file_atomic(path, bytes);
}

inline Tensor read_flo(const std::string& path) {
  const std::string bytes = detail::read_file(path);
  const auto* p = (const unsigned char*)bytes.data();
  if (bytes.size() < 12) throw std::runtime_error("flo: truncated header in " + path);
  if (detail::get_f32le(p) != kFloMagic)
    throw std::runtime_error("flo: bad magic in " + path);
  const int32_t w = (int32_t)detail::get_u32le(p + 4);
  const int32_t h = (int32_t)detail::get_u32le(p + 8);
  if (w <= 0 || h <= 0)
    throw std::runtime_error("flo: nonpositive dimensions in " + path);
  const size_t want = 12 + 8 * (size_t)w * (size_t)h;
  if (bytes.size() != want)
    throw std::runtime_error("flo: " + path + " holds " + std::to_string(bytes.size()) +
                             " bytes, header promises " + std::to_string(want));
  Tensor out = Tensor::zeros({(int64_t)h, (int64_t)w, 2});
  for (int64_t i = 0; i < out.size(); ++i)
    out.data()[i] = (double)detail::get_f32le(p + 12 + 4 * i);
  return out;
}

}  // namespace meflow
