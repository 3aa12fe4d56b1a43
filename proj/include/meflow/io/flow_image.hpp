#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "meflow/core/tensor.hpp"

namespace meflow {

namespace detail {

// the standard 55-entry flow color wheel: six hue arcs of uneven length
inline const std::vector<std::array<double, 3>>& color_wheel() {
  static const std::vector<std::array<double, 3>> wheel = [] {
    const int RY = 15, YG = 6, GC = 4, CB = 11, BM = 13, MR = 6;
    std::vector<std::array<double, 3>> w;
    for (int i = 0; i < RY; ++i) w.push_back({255, 255.0 * i / RY, 0});
    for (int i = 0; i < YG; ++i) w.push_back({255 - 255.0 * i / YG, 255, 0});
    for (int i = 0; i < GC; ++i) w.push_back({0, 255, 255.0 * i / GC});
    for (int i = 0; i < CB; ++i) w.push_back({0, 255 - 255.0 * i / CB, 255});
    for (int i = 0; i < BM; ++i) w.push_back({255.0 * i / BM, 0, 255});
    for (int i = 0; i < MR; ++i) w.push_back({255, 0, 255 - 255.0 * i / MR});
    return w;
  }();
  return wheel;
}

}  // namespace detail

// hue encodes direction, whiteness encodes speed: zero motion is white,
// max_mag (default: the field's own peak) saturates the color
inline Tensor flow_to_image(const Tensor& flow, double max_mag = 0.0) {
  if (flow.shape().size() != 3 || flow.shape()[2] != 2)
    throw std::invalid_argument("flow image: expected a [H,W,2] field, got " +
                                shape_str(flow.shape()));
  for (int64_t i = 0; i < flow.size(); ++i)
    if (!std::isfinite(flow[i]))
      throw std::invalid_argument("flow image: field holds a non-finite value");

  const int64_t h = flow.shape()[0], w = flow.shape()[1];
  double peak = max_mag;
  if (peak <= 0.0) {
    for (int64_t i = 0; i < h * w; ++i)
      peak = std::max(peak, std::hypot(flow[2 * i], flow[2 * i + 1]));
    if (peak <= 0.0) peak = 1.0;
  }

  const auto& wheel = detail::color_wheel();
  const int n = (int)wheel.size();
  Tensor out = Tensor::zeros({h, w, 3});
  for (int64_t i = 0; i < h * w; ++i) {
    const double u = flow[2 * i], v = flow[2 * i + 1];
    const double rad = std::min(std::hypot(u, v) / peak, 1.0);
    const double a = std::atan2(-v, -u) / M_PI;  // [-1,1] around the wheel
    const double fk = (a + 1.0) / 2.0 * (n - 1);
    const int k0 = (int)fk % n;
    const int k1 = (k0 + 1) % n;
    const double f = fk - std::floor(fk);
    for (int c = 0; c < 3; ++c) {
      const double col = ((1 - f) * wheel[(size_t)k0][(size_t)c] +
                          f * wheel[(size_t)k1][(size_t)c]) / 255.0;
      out.data()[3 * i + c] = 1.0 - rad * (1.0 - col);
    }
  }
  return out;
}

}  // namespace meflow
