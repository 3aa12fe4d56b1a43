#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "meflow/core/random.hpp"
#include "meflow/core/tensor.hpp"

// Procedural textures and image resampling used by the stimulus generators.

namespace meflow {

// Multi-octave value noise on a jittered lattice, normalized into [lo, hi].
inline Tensor value_noise_texture(int64_t h, int64_t w, double cell, uint64_t seed,
                                  int octaves = 3, double lo = 0.15, double hi = 0.85) {
  if (h < 1 || w < 1) throw std::invalid_argument("texture: empty image");
  if (cell < 2.0) throw std::invalid_argument("texture: cell size below 2 pixels");
  Tensor out = Tensor::zeros({h, w});
  double amp = 1.0, total = 0.0;
  for (int oct = 0; oct < octaves; ++oct) {
    const double c = std::max(2.0, cell / std::pow(2.0, oct));
    const int64_t gw = (int64_t)std::ceil((double)w / c) + 2;
    const int64_t gh = (int64_t)std::ceil((double)h / c) + 2;
    Rng rng = Rng(seed).split(0x7e177u + (uint64_t)oct);
    std::vector<double> lattice((size_t)(gh * gw));
    for (auto& v : lattice) v = rng.uniform();
    auto smooth = [](double t) { return t * t * (3.0 - 2.0 * t); };
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        const double gx = (double)x / c, gy = (double)y / c;
        const int64_t x0 = (int64_t)gx, y0 = (int64_t)gy;
        const double tx = smooth(gx - (double)x0), ty = smooth(gy - (double)y0);
        const double v00 = lattice[(size_t)(y0 * gw + x0)];
        const double v01 = lattice[(size_t)(y0 * gw + x0 + 1)];
        const double v10 = lattice[(size_t)((y0 + 1) * gw + x0)];
        const double v11 = lattice[(size_t)((y0 + 1) * gw + x0 + 1)];
        const double v = (1 - ty) * ((1 - tx) * v00 + tx * v01) +
                         ty * ((1 - tx) * v10 + tx * v11);
        out.data()[y * w + x] += amp * v;
      }
    total += amp;
    amp *= 0.5;
  }
  double mn = out[0], mx = out[0];
  for (int64_t i = 0; i < out.size(); ++i) {
    mn = std::min(mn, out[i]);
    mx = std::max(mx, out[i]);
  }
  const double span = mx - mn > 1e-12 ? mx - mn : 1.0;
  for (int64_t i = 0; i < out.size(); ++i)
    out.data()[i] = lo + (hi - lo) * (out[i] - mn) / span;
  (void)total;
  return out;
}

inline double catmull_rom_weight(double t, int i) {
  // cubic kernel weights for the four taps at offsets -1..2, t in [0,1)
  switch (i) {
    case 0: return 0.5 * (-t * t * t + 2 * t * t - t);
    case 1: return 0.5 * (3 * t * t * t - 5 * t * t + 2);
    case 2: return 0.5 * (-3 * t * t * t + 4 * t * t + t);
    default: return 0.5 * (t * t * t - t * t);
  }
}

// Catmull-Rom sample of a [H, W] image at a continuous position, edge-clamped.
inline double sample_catmull_rom(const Tensor& img, double y, double x) {
  const int64_t h = img.shape()[0], w = img.shape()[1];
  const double fy = std::floor(y), fx = std::floor(x);
  const double ty = y - fy, tx = x - fx;
  double acc = 0;
  for (int dy = -1; dy <= 2; ++dy) {
    const int64_t yy = std::clamp((int64_t)fy + dy, (int64_t)0, h - 1);
    const double wy = catmull_rom_weight(ty, dy + 1);
    for (int dx = -1; dx <= 2; ++dx) {
      const int64_t xx = std::clamp((int64_t)fx + dx, (int64_t)0, w - 1);
      acc += wy * catmull_rom_weight(tx, dx + 1) * img[yy * w + xx];
    }
  }
  return acc;
}

// prev sampled at x - flow(x): the reconstruction of `next` implied by `flow`
inline Tensor backward_warp(const Tensor& prev, const Tensor& flow) {
  if (prev.shape().size() != 2) throw std::invalid_argument("warp: expected a [H,W] image");
  const int64_t h = prev.shape()[0], w = prev.shape()[1];
  if (flow.shape() != Shape{h, w, 2})
    throw std::invalid_argument("warp: flow " + shape_str(flow.shape()) +
                                " does not match the image");
  Tensor out = Tensor::zeros({h, w});
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      const double u = flow[(y * w + x) * 2], v = flow[(y * w + x) * 2 + 1];
      out.data()[y * w + x] =
          std::clamp(sample_catmull_rom(prev, (double)y - v, (double)x - u), 0.0, 1.0);
    }
  return out;
}

// Mean abs error of predicting each next frame by warping the previous one
// with the per-frame ground-truth flow.
inline double warp_mae(const Tensor& frames, const std::vector<Tensor>& gt) {
  if (frames.shape().size() != 3) throw std::invalid_argument("warp_mae: expected [T,H,W]");
  const int64_t t = frames.shape()[0], h = frames.shape()[1], w = frames.shape()[2];
  if ((int64_t)gt.size() < t - 1)
    throw std::invalid_argument("warp_mae: missing ground-truth frames");
  double acc = 0;
  for (int64_t k = 0; k + 1 < t; ++k) {
    Tensor prev = Tensor::zeros({h, w});
    for (int64_t i = 0; i < h * w; ++i) prev.data()[i] = frames[k * h * w + i];
    Tensor rec = backward_warp(prev, gt[(size_t)k]);
    for (int64_t i = 0; i < h * w; ++i)
      acc += std::abs(rec[i] - frames[(k + 1) * h * w + i]);
  }
  return acc / (double)((t - 1) * h * w);
}

// separable Gaussian blur with edge clamping
inline Tensor gaussian_blur(const Tensor& img, double sigma) {
  if (img.shape().size() != 2) throw std::invalid_argument("blur: expected a [H,W] image");
  if (sigma <= 0) throw std::invalid_argument("blur: sigma must be positive");
  const int64_t h = img.shape()[0], w = img.shape()[1];
  const int64_t rad = std::max<int64_t>(1, (int64_t)std::ceil(3.0 * sigma));
  std::vector<double> k((size_t)(2 * rad + 1));
  double sum = 0;
  for (int64_t i = -rad; i <= rad; ++i) {
    k[(size_t)(i + rad)] = std::exp(-0.5 * (double)(i * i) / (sigma * sigma));
    sum += k[(size_t)(i + rad)];
  }
  for (auto& v : k) v /= sum;
  Tensor tmp = Tensor::zeros({h, w}), out = Tensor::zeros({h, w});
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      double acc = 0;
      for (int64_t i = -rad; i <= rad; ++i)
        acc += k[(size_t)(i + rad)] * img[y * w + std::clamp(x + i, (int64_t)0, w - 1)];
      tmp.data()[y * w + x] = acc;
    }
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      double acc = 0;
      for (int64_t i = -rad; i <= rad; ++i)
        acc += k[(size_t)(i + rad)] * tmp[std::clamp(y + i, (int64_t)0, h - 1) * w + x];
      out.data()[y * w + x] = acc;
    }
  return out;
}

}  // namespace meflow
