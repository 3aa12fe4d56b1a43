#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "meflow/stage1/gabor.hpp"

// Multi-scale motion energy sensing. A bank holds a pyramid of tuned
// quadrature units; its forward pass maps a short grayscale frame window to a
// divisively normalized per-unit energy map on the 1/8-resolution grid.
//
// The pass is evaluated lazily: per scale, spatial responses are computed
// only at the source positions the bilinear reduction to the output grid
// actually reads, so each scale costs a patch GEMM over at most
// (2*H/8)*(2*W/8) positions instead of a full convolution.

namespace meflow {

struct ScaleDims {
  int64_t h = 0, w = 0;
};

// Pyramid areas step linearly from H*W down to (H*W)/16; every scale keeps
// the input aspect ratio.
inline std::vector<ScaleDims> pyramid_dims(int64_t H, int64_t W, int num_scales) {
  if (num_scales < 1) throw std::invalid_argument("pyramid_dims: need at least one scale");
  std::vector<ScaleDims> d((size_t)num_scales);
  for (int k = 0; k < num_scales; ++k) {
    const double frac =
        num_scales > 1 ? 1.0 - (double)k / (double)(num_scales - 1) * (15.0 / 16.0) : 1.0;
    const double s = std::sqrt(frac);
    d[(size_t)k] = {(int64_t)std::llround((double)H * s), (int64_t)std::llround((double)W * s)};
  }
  return d;
}

// The unique source rows/cols a bilinear reduction from [H,W] to [h2,w2]
// reads, plus the dense [h2*w2, nr*nc] matrix that applies the reduction to
// energies evaluated at those positions (row-major over the output grid,
// positions ordered row-major over rows x cols).
struct SampleGrid {
  std::vector<int64_t> rows, cols;
  Tensor resize;
};

inline SampleGrid make_sample_grid(int64_t H, int64_t W, int64_t h2, int64_t w2) {
  auto ty = detail::resize_taps(H, h2);
  auto tx = detail::resize_taps(W, w2);
  auto uniq = [](std::vector<int64_t> v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    return v;
  };
  std::vector<int64_t> rows, cols;
  for (int64_t i = 0; i < h2; ++i) {
    rows.push_back(ty.i0[(size_t)i]);
    rows.push_back(ty.i1[(size_t)i]);
  }
  for (int64_t i = 0; i < w2; ++i) {
    cols.push_back(tx.i0[(size_t)i]);
    cols.push_back(tx.i1[(size_t)i]);
  }
  rows = uniq(std::move(rows));
  cols = uniq(std::move(cols));
  auto at = [](const std::vector<int64_t>& v, int64_t x) {
    return (int64_t)(std::lower_bound(v.begin(), v.end(), x) - v.begin());
  };
  const int64_t nr = (int64_t)rows.size(), nc = (int64_t)cols.size(), P = nr * nc;
  std::vector<double> m((size_t)(h2 * w2 * P), 0.0);
  for (int64_t y = 0; y < h2; ++y) {
    const int64_t r0 = at(rows, ty.i0[(size_t)y]), r1 = at(rows, ty.i1[(size_t)y]);
    const double wy = ty.w[(size_t)y];
    for (int64_t x = 0; x < w2; ++x) {
      const int64_t c0 = at(cols, tx.i0[(size_t)x]), c1 = at(cols, tx.i1[(size_t)x]);
      const double wx = tx.w[(size_t)x];
      double* row = m.data() + (y * w2 + x) * P;
      row[r0 * nc + c0] += (1 - wy) * (1 - wx);
      row[r0 * nc + c1] += (1 - wy) * wx;
      row[r1 * nc + c0] += wy * (1 - wx);
      row[r1 * nc + c1] += wy * wx;
    }
  }
  SampleGrid g;
  g.rows = std::move(rows);
  g.cols = std::move(cols);
  g.resize = Tensor::from({h2 * w2, P}, std::move(m));
  return g;
}

// Kernel tensors built from the current parameters. Building once per
// optimization step and reusing across a batch shares the construction
// subgraph; gradients still accumulate correctly through the tape.
struct BankKernels {
  std::vector<Tensor> spatial;   // per scale [N, 2U], re/im interleaved columns
  std::vector<Tensor> tre, tim;  // per scale [U, F]
};

class MotionEnergyBank {
 public:
  struct Config {
    int64_t height = 64, width = 64;
    int64_t units_per_scale = 32;
    int num_scales = 8;
    int64_t ksize = 15;
    int64_t frames = 6;
    double init_freq_lo = 0.02, init_freq_hi = 0.24;
  };

  MotionEnergyBank(const Config& cfg, Rng& rng) : cfg_(cfg), grid_(make_gabor_grid(cfg.ksize)) {
    if (cfg.height % 8 != 0 || cfg.width % 8 != 0)
      throw std::invalid_argument("motion energy bank: input dims must be multiples of 8, got " +
                                  std::to_string(cfg.height) + "x" + std::to_string(cfg.width));
    dims_ = pyramid_dims(cfg.height, cfg.width, cfg.num_scales);
    for (const auto& d : dims_)
      if (d.h < cfg.ksize || d.w < cfg.ksize)
        throw std::invalid_argument("motion energy bank: scale " + std::to_string(d.h) + "x" +
                                    std::to_string(d.w) + " smaller than the kernel support");
    const int64_t h2 = cfg.height / 8, w2 = cfg.width / 8;
    for (int k = 0; k < cfg.num_scales; ++k) {
      scales_.push_back(
          init_gabor_scale(cfg.units_per_scale, rng, cfg.init_freq_lo, cfg.init_freq_hi));
      grids_.push_back(make_sample_grid(dims_[(size_t)k].h, dims_[(size_t)k].w, h2, w2));
    }
    gain_ = Tensor::scalar(1.0, true);
    floor_ = Tensor::scalar(0.05, true);
  }

  const Config& config() const { return cfg_; }
  int64_t channels() const { return (int64_t)cfg_.num_scales * cfg_.units_per_scale; }
  int64_t out_rows() const { return (cfg_.height / 8) * (cfg_.width / 8); }
  const std::vector<ScaleDims>& dims() const { return dims_; }
  const GaborGrid& grid() const { return grid_; }
  const SampleGrid& sample_grid(int k) const { return grids_[(size_t)k]; }
  GaborScale& scale(int k) { return scales_[(size_t)k]; }
  Tensor gain() { return gain_; }
  Tensor norm_floor() { return floor_; }

  BankKernels prepare() const {
    BankKernels kn;
    for (const auto& s : scales_) {
      auto sp = gabor_spatial(grid_, s);
      kn.spatial.push_back(interleave_cols(sp.first, sp.second));
      auto tp = gabor_temporal(s, cfg_.frames);
      kn.tre.push_back(tp.first);
      kn.tim.push_back(tp.second);
    }
    return kn;
  }

  // Per-unit energies of one scale at arbitrary positions of that scale's
  // grid: [rows.size()*cols.size(), U].
  Tensor scale_energy_at(const Tensor& seq, int k, const std::vector<int64_t>& rows,
                         const std::vector<int64_t>& cols, const BankKernels& kn) const {
    check_seq(seq);
    const auto& d = dims_[(size_t)k];
    Tensor xs = (d.h == cfg_.height && d.w == cfg_.width) ? seq
                                                           : bilinear_resize_seq(seq, d.h, d.w);
    Tensor patches = gather_patches_seq(xs, rows, cols, cfg_.ksize, cfg_.ksize);
    const int64_t P = (int64_t)(rows.size() * cols.size());
    Tensor R = reshape(matmul(patches, kn.spatial[(size_t)k]),
                       {cfg_.frames, P, 2 * cfg_.units_per_scale});
    return quadrature_energy(R, kn.tre[(size_t)k], kn.tim[(size_t)k],
                             scales_[(size_t)k].offset);
  }

  // Unnormalized energies on the output grid: [(H/8)*(W/8), channels].
  Tensor energy(const Tensor& seq, const BankKernels& kn) const {
    Tensor cat;
    for (int k = 0; k < cfg_.num_scales; ++k) {
      const auto& g = grids_[(size_t)k];
      Tensor e = matmul(g.resize, scale_energy_at(seq, k, g.rows, g.cols, kn));
      cat = k == 0 ? e : concat_last(cat, e);
    }
    return cat;
  }

  // Normalized energy map: [(H/8)*(W/8), channels], rows bounded by the gain.
  Tensor forward(const Tensor& seq, const BankKernels& kn) const {
    return divisive_normalize_rows(energy(seq, kn), gain_, floor_);
  }
  Tensor forward(const Tensor& seq) const { return forward(seq, prepare()); }

  void collect_params(const std::string& prefix, std::vector<std::pair<std::string, Tensor>>& out) {
    for (int k = 0; k < cfg_.num_scales; ++k) {
      const std::string pre = prefix + ".s" + std::to_string(k) + ".";
      auto& s = scales_[(size_t)k];
      out.push_back({pre + "sfreq", s.sfreq});
      out.push_back({pre + "tfreq", s.tfreq});
      out.push_back({pre + "theta", s.theta});
      out.push_back({pre + "sigma", s.sigma});
      out.push_back({pre + "aspect", s.aspect});
      out.push_back({pre + "decay", s.decay});
      out.push_back({pre + "offset", s.offset});
    }
    out.push_back({prefix + ".gain", gain_});
    out.push_back({prefix + ".floor", floor_});
  }

  // Project every parameter back into its admissible range. Safe to call
  // repeatedly; a second call never changes values again.
  void clamp() {
    const double f_lo = 1e-3, f_hi = 0.25 - 1e-6, two_pi = 2.0 * M_PI;
    for (auto& s : scales_) {
      const int64_t U = s.theta.size();
      for (int64_t u = 0; u < U; ++u) {
        double t = std::fmod(s.theta.data()[u], two_pi);
        if (t < 0) t += two_pi;
        s.theta.data()[u] = t;
        s.sfreq.data()[u] = std::clamp(s.sfreq.data()[u], f_lo, f_hi);
        s.tfreq.data()[u] = std::clamp(s.tfreq.data()[u], f_lo, f_hi);
        s.sigma.data()[u] = std::max(s.sigma.data()[u], 1e-3);
        s.aspect.data()[u] = std::max(s.aspect.data()[u], 1e-3);
        s.decay.data()[u] = std::max(s.decay.data()[u], 1e-3);
      }
    }
    gain_.data()[0] = std::max(gain_.data()[0], 1e-3);
    floor_.data()[0] = std::max(floor_.data()[0], 1e-3);
  }

 private:
  void check_seq(const Tensor& seq) const {
    if (seq.shape().size() != 3 || seq.shape()[0] != cfg_.frames ||
        seq.shape()[1] != cfg_.height || seq.shape()[2] != cfg_.width)
      throw std::invalid_argument("motion energy bank: expected [" +
                                  std::to_string(cfg_.frames) + "," +
                                  std::to_string(cfg_.height) + "," + std::to_string(cfg_.width) +
                                  "], got " + shape_str(seq.shape()));
  }

  Config cfg_;
  GaborGrid grid_;
  std::vector<ScaleDims> dims_;
  std::vector<GaborScale> scales_;
  std::vector<SampleGrid> grids_;
  Tensor gain_, floor_;
};

}  // namespace meflow
