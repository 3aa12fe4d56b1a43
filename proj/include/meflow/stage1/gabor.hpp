#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "meflow/core/ops.hpp"
#include "meflow/core/random.hpp"
#include "meflow/core/tensor.hpp"

// Differentiable construction of the tuned spatiotemporal quadrature kernels.
// Spatial kernels are complex Gabors on a square grid with a circular
// support; temporal kernels are exponentially decaying complex sinusoids over
// the causal frame window (tap index = lag, lag 0 = most recent frame).

namespace meflow {

// Per-unit parameters of one pyramid scale. Every tensor is a [U] vector.
struct GaborScale {
  Tensor sfreq;   // spatial frequency, cycles/px
  Tensor tfreq;   // temporal frequency, cycles/frame
  Tensor theta;   // preferred drift direction, radians
  Tensor sigma;   // spatial envelope width, px
  Tensor aspect;  // envelope anisotropy across the preferred axis
  Tensor decay;   // temporal envelope time constant, frames
  Tensor offset;  // additive response offset applied before squaring
};

inline GaborScale init_gabor_scale(int64_t units, Rng& rng, double freq_lo = 0.02,
                                   double freq_hi = 0.24) {
  auto draw = [&](auto f) {
    std::vector<double> v((size_t)units);
    for (auto& x : v) x = f();
    return v;
  };
  GaborScale p;
  p.sfreq = Tensor::from({units}, draw([&] { return rng.log_uniform(freq_lo, freq_hi); }), true);
  p.tfreq = Tensor::from({units}, draw([&] { return rng.log_uniform(freq_lo, freq_hi); }), true);
  p.theta = Tensor::from({units}, draw([&] { return rng.uniform() * 2.0 * M_PI; }), true);
  p.sigma = Tensor::from({units}, draw([&] { return 2.0 + 3.0 * rng.uniform(); }), true);
  p.aspect = Tensor::full({units}, 1.0, true);
  p.decay = Tensor::from({units}, draw([&] { return 1.5 + 2.5 * rng.uniform(); }), true);
  p.offset = Tensor::zeros({units}, true);
  return p;
}

// Constant coordinate grid shared by every scale. Offsets are measured from
// the kernel center; x runs along columns, y along rows. Points outside the
// circle of radius ksize/2 are masked to zero.
struct GaborGrid {
  int64_t ksize = 0, n = 0;
  Tensor xc, yc;  // [N,1]
  Tensor mask;    // [N,1]
};

inline GaborGrid make_gabor_grid(int64_t ksize) {
  if (ksize < 1 || ksize % 2 == 0)
    throw std::invalid_argument("gabor grid: kernel size must be odd, got " +
                                std::to_string(ksize));
  const int64_t n = ksize * ksize, h = ksize / 2;
  const double r2 = (0.5 * (double)ksize) * (0.5 * (double)ksize);
  std::vector<double> xs((size_t)n), ys((size_t)n), ms((size_t)n);
  for (int64_t dy = 0; dy < ksize; ++dy)
    for (int64_t dx = 0; dx < ksize; ++dx) {
      const double x = (double)(dx - h), y = (double)(dy - h);
      xs[(size_t)(dy * ksize + dx)] = x;
      ys[(size_t)(dy * ksize + dx)] = y;
      ms[(size_t)(dy * ksize + dx)] = (x * x + y * y <= r2) ? 1.0 : 0.0;
    }
  GaborGrid g;
  g.ksize = ksize;
  g.n = n;
  g.xc = Tensor::from({n, 1}, std::move(xs));
  g.yc = Tensor::from({n, 1}, std::move(ys));
  g.mask = Tensor::from({n, 1}, std::move(ms));
  return g;
}

// Real and imaginary spatial kernels as [N,U] matrices, patch element order
// (dy, dx). Columns pair with the patch GEMM: response = patches * kernels.
inline std::pair<Tensor, Tensor> gabor_spatial(const GaborGrid& g, const GaborScale& p) {
  const int64_t U = p.theta.shape()[0], N = g.n;
  Tensor ones = Tensor::full({N, 1}, 1.0);
  Tensor ct = reshape(cos_t(p.theta), {1, U});
  Tensor st = reshape(sin_t(p.theta), {1, U});
  Tensor xr = add(matmul(g.xc, ct), matmul(g.yc, st));
  Tensor yr = sub(matmul(g.yc, ct), matmul(g.xc, st));
  Tensor asp2 = matmul(ones, reshape(square(p.aspect), {1, U}));
  Tensor gain = matmul(ones, reshape(recip(mul_const(square(p.sigma), 2.0)), {1, U}));
  Tensor env = exp_t(neg(mul(add(square(xr), mul(asp2, square(yr))), gain)));
  env = mul(env, matmul(g.mask, Tensor::full({1, U}, 1.0)));
  Tensor arg = mul_const(mul(matmul(ones, reshape(p.sfreq, {1, U})), xr), 2.0 * M_PI);
  return {mul(env, cos_t(arg)), mul(env, sin_t(arg))};
}

// Real and imaginary temporal taps as [U,F] matrices, tap index = lag.
inline std::pair<Tensor, Tensor> gabor_temporal(const GaborScale& p, int64_t frames) {
  const int64_t U = p.tfreq.shape()[0];
  std::vector<double> tv((size_t)frames);
  for (int64_t j = 0; j < frames; ++j) tv[(size_t)j] = (double)j;
  Tensor tg = Tensor::from({1, frames}, std::move(tv));
  Tensor env = exp_t(neg(matmul(reshape(recip(p.decay), {U, 1}), tg)));
  Tensor arg = mul_const(matmul(reshape(p.tfreq, {U, 1}), tg), 2.0 * M_PI);
  return {mul(env, cos_t(arg)), mul(env, sin_t(arg))};
}

}  // namespace meflow
