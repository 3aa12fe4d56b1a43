#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "meflow/core/random.hpp"
#include "meflow/core/tensor.hpp"
#include "meflow/stim/texture.hpp"

// Deterministic stimulus generation: drifting gratings and plaids, toy
// training sets (translating blobs, full-field gratings), Markov velocity
// carriers, water-wave flow fields, seven region-bound modulations riding a
// static image, and the procedural material proxy with object-attached
// specular-like overlays.

namespace meflow {

struct CarrierTrace {
  std::vector<std::array<double, 2>> v;  // (u, v) px/frame, one entry per frame
};

struct StimulusSequence {
  Tensor frames;                              // [T,H,W], values in [0,1]
  std::vector<Tensor> gt;                     // per-frame flow, each [H,W,2]
  std::string kind;
  std::vector<std::array<double, 2>> carrier; // region/global velocity per frame
  uint64_t seed = 0;
  int components = 1;                         // grating components blended in
};

// replicate a grayscale sequence into the rgb layout the model consumes
inline Tensor gray_to_rgb(const Tensor& seq) {
  if (seq.shape().size() != 3)
    throw std::invalid_argument("gray_to_rgb: expected [T,H,W], got " + shape_str(seq.shape()));
  Tensor out = Tensor::zeros({seq.shape()[0], seq.shape()[1], seq.shape()[2], 3});
  for (int64_t i = 0; i < seq.size(); ++i) {
    out.data()[3 * i] = seq[i];
    out.data()[3 * i + 1] = seq[i];
    out.data()[3 * i + 2] = seq[i];
  }
  return out;
}

struct GratingParams {
  double sfreq = 0.0625;   // cycles/px, must stay below 0.25
  double theta = 0.0;      // drift direction, radians
  double speed = 1.0;      // px/frame along theta
  int64_t size = 64;
  int64_t frames = 16;
  double contrast = 1.0;   // in (0, 1]
  bool envelope = true;    // gaussian window; false gives a full-field grating
  double sigma_frac = 0.2; // envelope sigma as a fraction of size
};

inline void check_grating(const GratingParams& p) {
  if (p.size < 8) throw std::invalid_argument("grating: size below 8 pixels");
  if (p.frames < 1) throw std::invalid_argument("grating: need at least one frame");
  if (!(p.sfreq > 0.0) || p.sfreq >= 0.25)
    throw std::invalid_argument("grating: spatial frequency must lie in (0, 0.25)");
  if (!(p.contrast > 0.0) || p.contrast > 1.0)
    throw std::invalid_argument("grating: contrast must lie in (0, 1]");
  if (p.sfreq * std::abs(p.speed) >= 0.5)
    throw std::invalid_argument("grating: temporal aliasing, sfreq*speed = " +
                                std::to_string(p.sfreq * std::abs(p.speed)) +
                                " cycles/frame reaches 0.5");
}

inline StimulusSequence drifting_gabor(const GratingParams& p) {
  check_grating(p);
  const int64_t n = p.size, T = p.frames;
  const double cx = (double)(n - 1) / 2.0, cy = cx;
  const double sg = p.sigma_frac * (double)n;
  const double ux = std::cos(p.theta), uy = std::sin(p.theta);

  StimulusSequence s;
  s.kind = p.envelope ? "gabor" : "grating";
  s.frames = Tensor::zeros({T, n, n});
  Tensor flow = Tensor::zeros({n, n, 2});
  for (int64_t i = 0; i < n * n; ++i) {
    flow.data()[2 * i] = p.speed * ux;
    flow.data()[2 * i + 1] = p.speed * uy;
  }
  for (int64_t t = 0; t < T; ++t) {
    s.gt.push_back(flow);
    s.carrier.push_back({p.speed * ux, p.speed * uy});
    for (int64_t y = 0; y < n; ++y)
      for (int64_t x = 0; x < n; ++x) {
        const double dx = (double)x - cx, dy = (double)y - cy;
        const double along = dx * ux + dy * uy;
        double env = 1.0;
        if (p.envelope) env = std::exp(-(dx * dx + dy * dy) / (2.0 * sg * sg));
        const double v =
            0.5 + 0.5 * p.contrast * env *
                      std::cos(2.0 * 3.14159265358979323846 * p.sfreq *
                               (along - p.speed * (double)t));
        s.frames.data()[(t * n + y) * n + x] = v;
      }
  }
  return s;
}

// two gratings at +-30 degrees around the pattern direction, averaged; the
// pattern itself moves along base_dir at the requested speed
inline StimulusSequence plaid(const GratingParams& base) {
  const double split = 3.14159265358979323846 / 6.0;
  GratingParams c1 = base, c2 = base;
  c1.theta = base.theta + split;
  c2.theta = base.theta - split;
  c1.speed = c2.speed = base.speed * std::cos(split);
  StimulusSequence a = drifting_gabor(c1), b = drifting_gabor(c2);

  StimulusSequence s;
  s.kind = "plaid";
  s.components = 2;
  s.frames = Tensor::zeros(a.frames.shape());
  for (int64_t i = 0; i < s.frames.size(); ++i)
    s.frames.data()[i] = 0.5 * (a.frames[i] + b.frames[i]);
  const int64_t n = base.size;
  Tensor flow = Tensor::zeros({n, n, 2});
  for (int64_t i = 0; i < n * n; ++i) {
    flow.data()[2 * i] = base.speed * std::cos(base.theta);
    flow.data()[2 * i + 1] = base.speed * std::sin(base.theta);
  }
  for (int64_t t = 0; t < base.frames; ++t) {
    s.gt.push_back(flow);
    s.carrier.push_back({flow[0], flow[1]});
  }
  return s;
}

enum class ToyKind { blobs, gratings };

inline const char* toy_kind_name(ToyKind k) {
  return k == ToyKind::blobs ? "blobs" : "gratings";
}

// slow speeds oversampled: quadratic warp of a uniform draw
inline double slow_biased_speed(Rng& rng, double max_speed) {
  const double u = rng.uniform();
  return max_speed * u * u;
}

inline StimulusSequence toy_blob_sample(uint64_t seed, int64_t size, int64_t T) {
  Rng rng(seed);
  const double bg = rng.uniform(0.15, 0.85);
  const int nblobs = 1 + (int)rng.below(3);
  struct Blob {
    double cx, cy, r, fill;
  };
  std::vector<Blob> blobs;
  for (int b = 0; b < nblobs; ++b) {
    Blob bl;
    bl.cx = rng.uniform(0.25, 0.75) * (double)size;
    bl.cy = rng.uniform(0.25, 0.75) * (double)size;
    bl.r = rng.uniform((double)size / 10.0, (double)size / 5.0);
    bl.fill = rng.uniform(0.0, 1.0);
    if (std::abs(bl.fill - bg) < 0.2) bl.fill = bg > 0.5 ? bg - 0.35 : bg + 0.35;
    blobs.push_back(bl);
  }
  const double speed = slow_biased_speed(rng, 3.0);
  const double dir = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
  const double vx = speed * std::cos(dir), vy = speed * std::sin(dir);

  StimulusSequence s;
  s.kind = toy_kind_name(ToyKind::blobs);
  s.seed = seed;
  s.frames = Tensor::zeros({T, size, size});
  Tensor flow = Tensor::zeros({size, size, 2});
  for (int64_t i = 0; i < size * size; ++i) {
    flow.data()[2 * i] = vx;
    flow.data()[2 * i + 1] = vy;
  }
  const double edge = 1.5;
  for (int64_t t = 0; t < T; ++t) {
    s.gt.push_back(flow);
    s.carrier.push_back({vx, vy});
    for (int64_t y = 0; y < size; ++y)
      for (int64_t x = 0; x < size; ++x) {
        double v = bg;
        for (const auto& bl : blobs) {
          const double dx = (double)x - (bl.cx + vx * (double)t);
          const double dy = (double)y - (bl.cy + vy * (double)t);
          const double d = std::sqrt(dx * dx + dy * dy);
          double a = std::clamp((bl.r - d) / (2.0 * edge) + 0.5, 0.0, 1.0);
          a = a * a * (3.0 - 2.0 * a);
          v += a * (bl.fill - v);
        }
        s.frames.data()[(t * size + y) * size + x] = v;
      }
  }
  return s;
}

inline StimulusSequence toy_grating_sample(uint64_t seed, int64_t size, int64_t T) {
  Rng rng(seed);
  GratingParams p;
  p.size = size;
  p.frames = T;
  p.envelope = false;
  p.sfreq = rng.log_uniform(0.03, 0.2);
  p.theta = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
  p.contrast = rng.uniform(0.5, 1.0);
  p.speed = slow_biased_speed(rng, 3.0);
  while (p.sfreq * p.speed >= 0.45) p.speed = slow_biased_speed(rng, 3.0);
  StimulusSequence s = drifting_gabor(p);
  s.kind = toy_kind_name(ToyKind::gratings);
  s.seed = seed;
  return s;
}

inline std::vector<StimulusSequence> toy_dataset(ToyKind kind, int n, uint64_t seed,
                                                 int64_t size = 64, int64_t T = 16) {
  if (n < 1) throw std::invalid_argument("toy_dataset: need at least one sample");
  std::vector<StimulusSequence> out;
  out.reserve((size_t)n);
  for (int i = 0; i < n; ++i) {
    const uint64_t s = Rng(seed).split((uint64_t)i).bits();
    out.push_back(kind == ToyKind::blobs ? toy_blob_sample(s, size, T)
                                         : toy_grating_sample(s, size, T));
  }
  return out;
}

// first-order random walk over velocities: S(t) ~ Normal(S(t-1), step_sd^2 I)
inline CarrierTrace markov_carrier(int64_t T, double step_sd, uint64_t seed,
                                   double base_sd = 0.8) {
  if (T < 1) throw std::invalid_argument("carrier: need at least one frame");
  if (step_sd < 0) throw std::invalid_argument("carrier: step deviation must be nonnegative");
  if (base_sd < 0) throw std::invalid_argument("carrier: base deviation must be nonnegative");
  Rng rng(seed);
  CarrierTrace c;
  double u = rng.normal(0.0, base_sd), v = rng.normal(0.0, base_sd);
  for (int64_t t = 0; t < T; ++t) {
    if (t > 0) {
      u += rng.normal(0.0, step_sd);
      v += rng.normal(0.0, step_sd);
    }
    c.v.push_back({u, v});
  }
  return c;
}

// K(r,t) = cos(2 pi f r) e^{-gamma r^2} cos(2 pi xi t) e^{-delta t^2}, summed
// over wave centers
inline double water_wave_value(double f, double xi, double gamma, double delta,
                               const std::vector<std::array<double, 2>>& centers, double x,
                               double y, double t) {
  if (gamma <= 0 || delta <= 0)
    throw std::invalid_argument("water: damping factors must be positive");
  constexpr double tau = 2.0 * 3.14159265358979323846;
  const double temporal = std::cos(tau * xi * t) * std::exp(-delta * t * t);
  double acc = 0;
  for (const auto& c : centers) {
    const double dx = x - c[0], dy = y - c[1];
    const double r2 = dx * dx + dy * dy;
    const double r = std::sqrt(r2);
    acc += std::cos(tau * f * r) * std::exp(-gamma * r2);
  }
  return acc * temporal;
}

// analytic [dK/dx, dK/dy] field on an h x w grid
inline Tensor water_wave_field(double f, double xi, double gamma, double delta,
                               const std::vector<std::array<double, 2>>& centers, double t,
                               int64_t h, int64_t w) {
  if (gamma <= 0 || delta <= 0)
    throw std::invalid_argument("water: damping factors must be positive");
  constexpr double tau = 2.0 * 3.14159265358979323846;
  const double temporal = std::cos(tau * xi * t) * std::exp(-delta * t * t);
  Tensor out = Tensor::zeros({h, w, 2});
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      double gx = 0, gy = 0;
      for (const auto& c : centers) {
        const double dx = (double)x - c[0], dy = (double)y - c[1];
        const double r2 = dx * dx + dy * dy;
        const double r = std::sqrt(r2);
        if (r < 1e-9) continue;  // gradient vanishes at the crest by symmetry
        const double damp = std::exp(-gamma * r2);
        const double dk_dr = -tau * f * std::sin(tau * f * r) * damp -
                             2.0 * gamma * r * std::cos(tau * f * r) * damp;
        gx += dk_dr * dx / r;
        gy += dk_dr * dy / r;
      }
      out.data()[(y * w + x) * 2] = gx * temporal;
      out.data()[(y * w + x) * 2 + 1] = gy * temporal;
    }
  return out;
}

enum class ModulationKind {
  noise,
  blur,
  water,
  fourier_shuffle,
  pixel_shuffle,
  swirl,
  drift_balanced
};

inline const std::vector<ModulationKind>& all_modulation_kinds() {
  static const std::vector<ModulationKind> kinds{
      ModulationKind::noise,           ModulationKind::blur,
      ModulationKind::water,           ModulationKind::fourier_shuffle,
      ModulationKind::pixel_shuffle,   ModulationKind::swirl,
      ModulationKind::drift_balanced};
  return kinds;
}

inline const char* modulation_name(ModulationKind k) {
  switch (k) {
    case ModulationKind::noise: return "noise";
    case ModulationKind::blur: return "blur";
    case ModulationKind::water: return "water";
    case ModulationKind::fourier_shuffle: return "fourier_shuffle";
    case ModulationKind::pixel_shuffle: return "pixel_shuffle";
    case ModulationKind::swirl: return "swirl";
    default: return "drift_balanced";
  }
}

inline ModulationKind parse_modulation(const std::string& s) {
  for (ModulationKind k : all_modulation_kinds())
    if (s == modulation_name(k)) return k;
  throw std::invalid_argument("unknown modulation kind '" + s + "'");
}

struct ModulationParams {
  double radius = 13.0;      // region radius, px
  double blur_sigma = 2.5;
  double water_amp = 2.5;    // warp amplitude, px
  double water_freq = 0.12;  // spatial cycles/px
  double water_xi = 0.08;    // temporal cycles/frame
  double water_gamma = 0.004;
  double water_delta = 0.01;
  double swirl_amp = 1.4;    // peak rotation, radians
  double drift_amp = 0.3;    // drift-balanced contrast step
};

namespace detail {

// Hermitian-symmetric phase randomization of a square patch: magnitudes kept,
// phases redrawn, result still real.
inline void phase_shuffle_patch(std::vector<double>& patch, int64_t n, Rng& rng) {
  using cd = std::complex<double>;
  constexpr double tau = 2.0 * 3.14159265358979323846;
  std::vector<cd> tw((size_t)(n * n));
  for (int64_t k = 0; k < n; ++k)
    for (int64_t j = 0; j < n; ++j)
      tw[(size_t)(k * n + j)] = std::polar(1.0, -tau * (double)(k * j % n) / (double)n);

  std::vector<cd> rows((size_t)(n * n)), freq((size_t)(n * n));
  for (int64_t y = 0; y < n; ++y)
    for (int64_t k = 0; k < n; ++k) {
      cd acc = 0;
      for (int64_t x = 0; x < n; ++x) acc += patch[(size_t)(y * n + x)] * tw[(size_t)(k * n + x)];
      rows[(size_t)(y * n + k)] = acc;
    }
  for (int64_t l = 0; l < n; ++l)
    for (int64_t k = 0; k < n; ++k) {
      cd acc = 0;
      for (int64_t y = 0; y < n; ++y) acc += rows[(size_t)(y * n + k)] * tw[(size_t)(l * n + y)];
      freq[(size_t)(l * n + k)] = acc;
    }

  for (int64_t l = 0; l < n; ++l)
    for (int64_t k = 0; k < n; ++k) {
      const int64_t lc = (n - l) % n, kc = (n - k) % n;
      if (l > lc || (l == lc && k > kc)) continue;  // handled with its mirror
      if (l == lc && k == kc) continue;             // self-conjugate bins keep phase
      const double psi = rng.uniform(0.0, tau);
      const cd rot = std::polar(1.0, psi);
      freq[(size_t)(l * n + k)] *= rot;
      freq[(size_t)(lc * n + kc)] *= std::conj(rot);
    }

  for (auto& t : tw) t = std::conj(t);
  for (int64_t y = 0; y < n; ++y)
    for (int64_t k = 0; k < n; ++k) {
      cd acc = 0;
      for (int64_t l = 0; l < n; ++l) acc += freq[(size_t)(l * n + k)] * tw[(size_t)(y * n + l)];
      rows[(size_t)(y * n + k)] = acc;
    }
  for (int64_t y = 0; y < n; ++y)
    for (int64_t x = 0; x < n; ++x) {
      cd acc = 0;
      for (int64_t k = 0; k < n; ++k) acc += rows[(size_t)(y * n + k)] * tw[(size_t)(x * n + k)];
      patch[(size_t)(y * n + x)] = std::clamp(acc.real() / (double)(n * n), 0.0, 1.0);
    }
}

}  // namespace detail

// A disk region rides the integrated carrier over a static image; inside the
// disk the chosen modulation replaces the content, outside every frame equals
// the image bit for bit. Ground truth is the carrier velocity inside the
// disk and zero elsewhere.
inline StimulusSequence apply_modulation(const Tensor& image, const CarrierTrace& carrier,
                                         ModulationKind kind, uint64_t seed,
                                         const ModulationParams& p = {}) {
  if (image.shape().size() != 2)
    throw std::invalid_argument("modulation: expected a [H,W] image, got " +
                                shape_str(image.shape()));
  const int64_t h = image.shape()[0], w = image.shape()[1];
  const int64_t T = (int64_t)carrier.v.size();
  if (T < 2) throw std::invalid_argument("modulation: carrier needs at least two frames");
  const double R = p.radius;
  if (R < 3 || 2 * R + 4 >= (double)std::min(h, w))
    throw std::invalid_argument("modulation: region radius does not fit the frame");

  // region centers from the integrated carrier
  std::vector<std::array<double, 2>> pos((size_t)T);
  pos[0] = {(double)(w - 1) / 2.0, (double)(h - 1) / 2.0};
  for (int64_t t = 1; t < T; ++t) {
    pos[(size_t)t] = {pos[(size_t)(t - 1)][0] + carrier.v[(size_t)(t - 1)][0],
                      pos[(size_t)(t - 1)][1] + carrier.v[(size_t)(t - 1)][1]};
  }
  for (int64_t t = 0; t < T; ++t) {
    const double px = pos[(size_t)t][0], py = pos[(size_t)t][1];
    if (px - R < 1.0 || px + R > (double)w - 2.0 || py - R < 1.0 || py + R > (double)h - 2.0)
      throw std::invalid_argument(
          "modulation: region leaves the frame at step " + std::to_string(t) +
          "; reduce the carrier velocity or the region radius");
  }

  StimulusSequence s;
  s.kind = modulation_name(kind);
  s.seed = seed;
  s.carrier = carrier.v;
  s.frames = Tensor::zeros({T, h, w});
  for (int64_t t = 0; t < T; ++t)
    for (int64_t i = 0; i < h * w; ++i) s.frames.data()[t * h * w + i] = image[i];

  Tensor blurred;
  if (kind == ModulationKind::blur) blurred = gaussian_blur(image, p.blur_sigma);

  // balanced per-pixel sign sequences: exactly half the frames step up
  std::vector<int8_t> signs;
  if (kind == ModulationKind::drift_balanced) {
    signs.assign((size_t)(h * w * T), 0);
    for (int64_t i = 0; i < h * w; ++i) {
      std::vector<int64_t> order((size_t)T);
      for (int64_t t = 0; t < T; ++t) order[(size_t)t] = t;
      Rng pr = Rng(seed).split(0xba1a0ced ^ (uint64_t)i);
      pr.shuffle(order);
      for (int64_t t = 0; t < T; ++t)
        signs[(size_t)(i * T + order[(size_t)t])] = t * 2 < T ? 1 : -1;
    }
  }

  for (int64_t t = 0; t < T; ++t) {
    const double px = pos[(size_t)t][0], py = pos[(size_t)t][1];
    Rng fr = Rng(seed).split(0xf00d + (uint64_t)t);
    double* frame = s.frames.data() + t * h * w;

    Tensor gt = Tensor::zeros({h, w, 2});
    const double cu = carrier.v[(size_t)t][0], cv = carrier.v[(size_t)t][1];

    std::vector<int64_t> disk;
    const int64_t y0 = (int64_t)std::floor(py - R), y1 = (int64_t)std::ceil(py + R);
    const int64_t x0 = (int64_t)std::floor(px - R), x1 = (int64_t)std::ceil(px + R);
    for (int64_t y = y0; y <= y1; ++y)
      for (int64_t x = x0; x <= x1; ++x) {
        const double dx = (double)x - px, dy = (double)y - py;
        if (dx * dx + dy * dy > R * R) continue;
        disk.push_back(y * w + x);
        gt.data()[(y * w + x) * 2] = cu;
        gt.data()[(y * w + x) * 2 + 1] = cv;
      }
    s.gt.push_back(gt);

    switch (kind) {
      case ModulationKind::noise:
        for (int64_t i : disk) frame[i] = fr.uniform(0.1, 0.9);
        break;
      case ModulationKind::blur:
        for (int64_t i : disk) frame[i] = blurred[i];
        break;
      case ModulationKind::water: {
        const double tc = (double)t - (double)T / 2.0;
        constexpr double tau = 2.0 * 3.14159265358979323846;
        const double temporal =
            std::cos(tau * p.water_xi * tc) * std::exp(-p.water_delta * tc * tc);
        for (int64_t i : disk) {
          const double x = (double)(i % w), y = (double)(i / w);
          const double dx = x - px, dy = y - py;
          const double r2 = dx * dx + dy * dy, r = std::sqrt(r2);
          double gx = 0, gy = 0;
          if (r > 1e-9) {
            const double damp = std::exp(-p.water_gamma * r2);
            const double dk_dr = -tau * p.water_freq * std::sin(tau * p.water_freq * r) * damp -
                                 2.0 * p.water_gamma * r * std::cos(tau * p.water_freq * r) * damp;
            gx = dk_dr * dx / r * temporal;
            gy = dk_dr * dy / r * temporal;
          }
          frame[i] = std::clamp(
              sample_catmull_rom(image, y + p.water_amp * gy, x + p.water_amp * gx), 0.0, 1.0);
        }
        break;
      }
      case ModulationKind::fourier_shuffle: {
        const int64_t rad = (int64_t)R;
        const int64_t n = 2 * rad + 1;
        const int64_t cx = (int64_t)std::llround(px), cy = (int64_t)std::llround(py);
        std::vector<double> patch((size_t)(n * n));
        for (int64_t y = 0; y < n; ++y)
          for (int64_t x = 0; x < n; ++x)
            patch[(size_t)(y * n + x)] =
                image[std::clamp(cy - rad + y, (int64_t)0, h - 1) * w +
                      std::clamp(cx - rad + x, (int64_t)0, w - 1)];
        detail::phase_shuffle_patch(patch, n, fr);
        for (int64_t i : disk) {
          const int64_t x = i % w - (cx - rad), y = i / w - (cy - rad);
          if (x >= 0 && x < n && y >= 0 && y < n) frame[i] = patch[(size_t)(y * n + x)];
        }
        break;
      }
      case ModulationKind::pixel_shuffle: {
        std::vector<int64_t> perm(disk.size());
        for (size_t i = 0; i < perm.size(); ++i) perm[i] = (int64_t)i;
        fr.shuffle(perm);
        for (size_t i = 0; i < disk.size(); ++i)
          frame[disk[i]] = image[disk[(size_t)perm[i]]];
        break;
      }
      case ModulationKind::swirl: {
        const double ang0 =
            p.swirl_amp * std::sin(2.0 * 3.14159265358979323846 * (double)t / 8.0);
        for (int64_t i : disk) {
          const double x = (double)(i % w), y = (double)(i / w);
          const double dx = x - px, dy = y - py;
          const double d = std::sqrt(dx * dx + dy * dy);
          const double a = ang0 * (1.0 - d / R);
          const double ca = std::cos(a), sa = std::sin(a);
          const double sx = px + ca * dx - sa * dy;
          const double sy = py + sa * dx + ca * dy;
          frame[i] = std::clamp(sample_catmull_rom(image, sy, sx), 0.0, 1.0);
        }
        break;
      }
      default: {  // drift_balanced
        for (int64_t i : disk) {
          const double bg = image[i];
          const double amp = std::min({p.drift_amp, bg, 1.0 - bg});
          frame[i] = bg + (double)signs[(size_t)(i * T + t)] * amp;
        }
        break;
      }
    }
  }
  return s;
}

enum class MaterialMode { diffuse, nondiffuse };

inline const char* material_name(MaterialMode m) {
  return m == MaterialMode::diffuse ? "proxy_diffuse" : "proxy_nondiffuse";
}

inline MaterialMode parse_material(const std::string& s) {
  if (s == "diffuse") return MaterialMode::diffuse;
  if (s == "nondiffuse") return MaterialMode::nondiffuse;
  throw std::invalid_argument("unknown material mode '" + s + "'");
}

// Textured objects sliding over a static textured background. The nondiffuse
// variant adds object-attached contrast flicker and an orbiting highlight
// whose local luminance motion decouples from the object's motion; the scene
// draws are identical in both modes so the ground truth matches bit for bit.
inline StimulusSequence proxy_material_sample(uint64_t seed, MaterialMode mode, int64_t size,
                                              int64_t T) {
  Rng scene = Rng(seed).split(1);
  Rng overlay = Rng(seed).split(2);

  const uint64_t bg_seed = scene.bits();
  Tensor bg = value_noise_texture(size, size, 18.0, bg_seed, 3, 0.25, 0.75);

  struct Obj {
    double cx, cy, r;
    Tensor tex;
  };
  const int nobj = 1 + (int)scene.below(2);
  const double dir = scene.uniform(0.0, 2.0 * 3.14159265358979323846);
  std::vector<Obj> objs;
  double rmax = 0;
  for (int i = 0; i < nobj; ++i) {
    Obj o;
    o.r = scene.uniform((double)size / 9.0, (double)size / 6.0);
    rmax = std::max(rmax, o.r);
    o.tex = value_noise_texture(size, size, 7.0, scene.bits(), 2, 0.05, 0.95);
    objs.push_back(o);
  }
  const double budget = ((double)size - 2.0 * rmax - 6.0) / (double)T;
  const double speed = slow_biased_speed(scene, std::min(2.2, budget));
  const double vx = speed * std::cos(dir), vy = speed * std::sin(dir);
  for (auto& o : objs) {
    const double m = o.r + 2.0;
    const double lox = m + std::max(0.0, -vx * (double)T);
    const double hix = (double)size - m - std::max(0.0, vx * (double)T);
    const double loy = m + std::max(0.0, -vy * (double)T);
    const double hiy = (double)size - m - std::max(0.0, vy * (double)T);
    o.cx = scene.uniform(lox, hix);
    o.cy = scene.uniform(loy, hiy);
  }

  struct Gloss {
    double freq, phase, orbit_w, orbit_phase, orbit_r, amp, sigma;
  };
  std::vector<Gloss> gloss;
  if (mode == MaterialMode::nondiffuse)
    for (int i = 0; i < nobj; ++i) {
      Gloss g;
      g.freq = overlay.uniform(0.15, 0.3);
      g.phase = overlay.uniform(0.0, 6.28318);
      g.orbit_w = overlay.uniform(0.25, 0.6) * (overlay.uniform() < 0.5 ? -1.0 : 1.0);
      g.orbit_phase = overlay.uniform(0.0, 6.28318);
      g.orbit_r = 0.5 * objs[(size_t)i].r;
      g.amp = overlay.uniform(0.3, 0.45);
      g.sigma = objs[(size_t)i].r / 3.0;
      gloss.push_back(g);
    }

  StimulusSequence s;
  s.kind = material_name(mode);
  s.seed = seed;
  s.frames = Tensor::zeros({T, size, size});

  const double edge = 1.2;
  constexpr double tau = 2.0 * 3.14159265358979323846;
  for (int64_t t = 0; t < T; ++t) {
    double* frame = s.frames.data() + t * size * size;
    Tensor gt = Tensor::zeros({size, size, 2});
    for (int64_t y = 0; y < size; ++y)
      for (int64_t x = 0; x < size; ++x) {
        double v = bg[y * size + x];
        double inside = 0;
        for (size_t oi = 0; oi < objs.size(); ++oi) {
          const auto& o = objs[oi];
          const double ox = o.cx + vx * (double)t, oy = o.cy + vy * (double)t;
          const double dx = (double)x - ox, dy = (double)y - oy;
          const double d = std::sqrt(dx * dx + dy * dy);
          double a = std::clamp((o.r - d) / (2.0 * edge) + 0.5, 0.0, 1.0);
          a = a * a * (3.0 - 2.0 * a);
          if (a <= 0.0) continue;
          double content =
              sample_catmull_rom(o.tex, (double)y - vy * (double)t, (double)x - vx * (double)t);
          if (mode == MaterialMode::nondiffuse) {
            const auto& g = gloss[oi];
            const double m = 1.0 + g.amp / 0.45 * 0.5 *
                                       std::sin(tau * g.freq * (double)t + g.phase);
            content = 0.5 + (content - 0.5) * m;
            const double hx = ox + g.orbit_r * std::cos(g.orbit_w * (double)t + g.orbit_phase);
            const double hy = oy + g.orbit_r * std::sin(g.orbit_w * (double)t + g.orbit_phase);
            const double hd2 = ((double)x - hx) * ((double)x - hx) +
                               ((double)y - hy) * ((double)y - hy);
            content += g.amp * std::exp(-hd2 / (2.0 * g.sigma * g.sigma));
          }
          v += a * (std::clamp(content, 0.0, 1.0) - v);
          inside = std::max(inside, a);
        }
        frame[y * size + x] = v;
        if (inside > 0.5) {
          gt.data()[(y * size + x) * 2] = vx;
          gt.data()[(y * size + x) * 2 + 1] = vy;
        }
      }
    s.gt.push_back(gt);
    s.carrier.push_back({vx, vy});
  }
  return s;
}

inline std::vector<StimulusSequence> proxy_material_dataset(int n, uint64_t seed,
                                                            MaterialMode mode,
                                                            int64_t size = 64, int64_t T = 16) {
  if (n < 1) throw std::invalid_argument("proxy dataset: need at least one sample");
  std::vector<StimulusSequence> out;
  out.reserve((size_t)n);
  for (int i = 0; i < n; ++i)
    out.push_back(proxy_material_sample(Rng(seed).split((uint64_t)i).bits(), mode, size, T));
  return out;
}

}  // namespace meflow
