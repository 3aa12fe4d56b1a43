#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "meflow/io/flo.hpp"

namespace meflow {

namespace detail {

inline unsigned char to_byte(double v) {
  return (unsigned char)std::lround(std::clamp(v, 0.0, 1.0) * 255.0);
}

// header tokens may be separated by whitespace and '#' comment lines
inline int64_t pnm_token(const std::string& bytes, size_t& at, const std::string& path) {
  while (at < bytes.size()) {
    if (std::isspace((unsigned char)bytes[at])) {
      ++at;
    } else if (bytes[at] == '#') {
      while (at < bytes.size() && bytes[at] != '\n') ++at;
    } else {
      break;
    }
  }
  if (at >= bytes.size() || !std::isdigit((unsigned char)bytes[at]))
    throw std::runtime_error("image: malformed header in " + path);
  int64_t v = 0;
  while (at < bytes.size() && std::isdigit((unsigned char)bytes[at]))
    v = v * 10 + (bytes[at++] - '0');
  return v;
}

}  // namespace detail

// 8-bit binary grayscale (P5)
inline void write_pgm(const std::string& path, const Tensor& img) {
  if (img.shape().size() != 2)
    throw std::invalid_argument("pgm: expected a [H,W] image, got " + shape_str(img.shape()));
  const int64_t h = img.shape()[0], w = img.shape()[1];
  std::string bytes = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  for (int64_t i = 0; i < img.size(); ++i) bytes.push_back((char)detail::to_byte(img[i]));
  detail::write_file_atomic(path, bytes);
}

// 8-bit binary color (P6)
inline void write_ppm(const std::string& path, const Tensor& img) {
  if (img.shape().size() != 3 || img.shape()[2] != 3)
    throw std::invalid_argument("ppm: expected a [H,W,3] image, got " + shape_str(img.shape()));
  const int64_t h = img.shape()[0], w = img.shape()[1];
  std::string bytes = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  for (int64_t i = 0; i < img.size(); ++i) bytes.push_back((char)detail::to_byte(img[i]));
  detail::write_file_atomic(path, bytes);
}

// P5 -> [H,W], P6 -> [H,W,3]; bytes scale to [0,1] with 255 landing on 1.0
inline Tensor read_image(const std::string& path) {
  const std::string bytes = detail::read_file(path);
  if (bytes.size() < 2 || bytes[0] != 'P')
    throw std::runtime_error("image: " + path + " is not a PGM/PPM file");
  const char kind = bytes[1];
  if (kind != '5' && kind != '6')
    throw std::runtime_error("image: " + path + " uses an unsupported format P" +
                             std::string(1, kind) + ", expected binary P5 or P6");
  size_t at = 2;
  const int64_t w = detail::pnm_token(bytes, at, path);
  const int64_t h = detail::pnm_token(bytes, at, path);
  const int64_t maxval = detail::pnm_token(bytes, at, path);
  if (w < 1 || h < 1) throw std::runtime_error("image: nonpositive dimensions in " + path);
  if (maxval != 255)
    throw std::runtime_error("image: " + path + " has maxval " + std::to_string(maxval) +
                             ", only 8-bit images are supported");
  ++at;  // the single whitespace byte after maxval
  const int64_t channels = kind == '5' ? 1 : 3;
  if ((int64_t)bytes.size() - (int64_t)at != h * w * channels)
    throw std::runtime_error("image: truncated pixel data in " + path);
  Tensor out = kind == '5' ? Tensor::zeros({h, w}) : Tensor::zeros({h, w, 3});
  for (int64_t i = 0; i < out.size(); ++i)
    out.data()[i] = (double)(unsigned char)bytes[at + (size_t)i] / 255.0;
  return out;
}

// frames land as dir/<prefix>_0000.pgm (gray) or .ppm (color)
inline void write_sequence(const std::string& dir, const Tensor& frames,
                           const std::string& prefix = "frame") {
  const auto& s = frames.shape();
  const bool color = s.size() == 4 && s[3] == 3;
  if (!color && s.size() != 3)
    throw std::invalid_argument("sequence: expected [T,H,W] or [T,H,W,3], got " + shape_str(s));
  std::filesystem::create_directories(dir);
  const int64_t T = s[0], per = frames.size() / T;
  for (int64_t t = 0; t < T; ++t) {
    Tensor one = color ? Tensor::zeros({s[1], s[2], 3}) : Tensor::zeros({s[1], s[2]});
    for (int64_t i = 0; i < per; ++i) one.data()[i] = frames[t * per + i];
    char num[8];
    std::snprintf(num, sizeof(num), "%04d", (int)t);
    const std::string path = dir + "/" + prefix + "_" + num + (color ? ".ppm" : ".pgm");
    color ? write_ppm(path, one) : write_pgm(path, one);
  }
}

// numbered PGM/PPM frames in numeric order, promoted to [T,H,W,3]
inline Tensor load_sequence(const std::string& dir) {
  if (!std::filesystem::is_directory(dir))
    throw std::runtime_error("sequence: " + dir + " is not a directory");
  std::vector<std::pair<int64_t, std::string>> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string ext = e.path().extension().string();
    if (ext != ".pgm" && ext != ".ppm") continue;
    const std::string stem = e.path().stem().string();
    int64_t key = -1;  // the last digit run in the stem names the frame
    for (size_t i = 0; i < stem.size();) {
      if (std::isdigit((unsigned char)stem[i])) {
        int64_t v = 0;
        while (i < stem.size() && std::isdigit((unsigned char)stem[i]))
          v = v * 10 + (stem[i++] - '0');
        key = v;
      } else {
        ++i;
      }
    }
    if (key < 0) continue;
    files.push_back({key, e.path().string()});
  }
  if (files.empty()) throw std::runtime_error("sequence: no numbered frames in " + dir);
  std::sort(files.begin(), files.end());

  std::vector<Tensor> frames;
  int64_t h = 0, w = 0;
  for (const auto& [key, path] : files) {
    Tensor img = read_image(path);
    const int64_t ih = img.shape()[0], iw = img.shape()[1];
    if (frames.empty()) {
      h = ih;
      w = iw;
    } else if (ih != h || iw != w) {
      throw std::runtime_error("sequence: " + path + " is " + std::to_string(iw) + "x" +
                               std::to_string(ih) + ", the sequence started at " +
                               std::to_string(w) + "x" + std::to_string(h));
    }
    frames.push_back(std::move(img));
  }

  Tensor out = Tensor::zeros({(int64_t)frames.size(), h, w, 3});
  for (size_t t = 0; t < frames.size(); ++t) {
    const Tensor& img = frames[t];
    const bool color = img.shape().size() == 3;
    double* dst = out.data() + (int64_t)t * h * w * 3;
    for (int64_t i = 0; i < h * w; ++i)
      for (int64_t c = 0; c < 3; ++c) dst[3 * i + c] = color ? img[3 * i + c] : img[i];
  }
  return out;
}

}  // namespace meflow
