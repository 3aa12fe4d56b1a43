#pragma once

#include <string>
#include <utility>
#include <vector>

#include "meflow/stage1/bank.hpp"

// The higher-order sensing channel: a five-layer 3D convolutional
// nonlinearity that turns a 15-frame RGB window into a single-channel
// "texture luminance" stream, followed by this channel's own motion energy
// bank. A fusion layer merges the two channels' normalized maps.
//
// Only the frames the bank's causal window actually consumes are evaluated:
// the needed range is propagated down the layer stack (one extra frame per
// 3x3x3 layer, clipped to the input extent), which reproduces the
// full-sequence semantics exactly while skipping unread frames.

namespace meflow {

struct ConvLayer3d {
  Tensor w;  // [3,3,3,Ci,Co]
  Tensor b;  // [Co]
};

class HigherOrderChannel {
 public:
  struct Config {
    int64_t frames_in = 15;
    int64_t mid = 7;        // index of the labeled instant inside the window
    int64_t hidden = 8;     // width of the intermediate layers
    MotionEnergyBank::Config bank;  // frames must stay at its default 6
  };

  HigherOrderChannel(const Config& cfg, Rng& rng) : cfg_(cfg), bank_(cfg.bank, rng) {
    const int64_t lo = cfg.mid - cfg.bank.frames + 1, hi = cfg.mid + 1;
    if (lo < 0 || hi > cfg.frames_in)
      throw std::invalid_argument("higher-order channel: causal window [" + std::to_string(lo) +
                                  "," + std::to_string(hi) + ") outside the " +
                                  std::to_string(cfg.frames_in) + "-frame input");
    if (cfg.hidden < 3)
      throw std::invalid_argument(
          "higher-order channel: hidden width must cover the 3 input channels");
    const int64_t widths[6] = {3, cfg.hidden, cfg.hidden, cfg.hidden, cfg.hidden, 1};
    for (int l = 0; l < 5; ++l) {
      const int64_t ci = widths[l], co = widths[l + 1];
      const double sd = std::sqrt(2.0 / (27.0 * (double)ci));
      Tensor w = Tensor::zeros({3, 3, 3, ci, co}, true);
      for (int64_t i = 0; i < w.size(); ++i) w.data()[i] = rng.normal() * sd;
      layers_.push_back({w, Tensor::zeros({co}, true)});
    }
  }

  const Config& config() const { return cfg_; }
  MotionEnergyBank& bank() { return bank_; }
  ConvLayer3d& layer(int l) { return layers_[(size_t)l]; }

  // rgb [frames_in, H, W, 3] -> nonlinear stream [bank.frames, H, W] covering
  // the causal window that ends at the midpoint frame.
  Tensor stream(const Tensor& rgb) const {
    if (rgb.shape().size() != 4 || rgb.shape()[0] != cfg_.frames_in || rgb.shape()[3] != 3)
      throw std::invalid_argument("higher-order channel: expected [" +
                                  std::to_string(cfg_.frames_in) + ",H,W,3], got " +
                                  shape_str(rgb.shape()));
    const int64_t H = rgb.shape()[1], W = rgb.shape()[2], T = cfg_.frames_in;

    // needed[l] = absolute frame range layer l's output must cover
    std::pair<int64_t, int64_t> needed[5];
    needed[4] = {cfg_.mid - cfg_.bank.frames + 1, cfg_.mid + 1};
    for (int l = 3; l >= 0; --l)
      needed[l] = {std::max<int64_t>(needed[l + 1].first - 1, 0),
                   std::min<int64_t>(needed[l + 1].second + 1, T)};

    Tensor x = rgb;
    int64_t off = 0;  // absolute time of x's frame 0
    for (int l = 0; l < 5; ++l) {
      const auto [lo, hi] = needed[l];
      const int64_t co = layers_[(size_t)l].w.shape()[4];
      Tensor h = conv3d_3x3x3(x, layers_[(size_t)l].w, lo - off, hi - off);
      const int64_t tn = hi - lo;
      h = reshape(add_rowvec(reshape(h, {tn * H * W, co}), layers_[(size_t)l].b),
                  {tn, H, W, co});
      if (l < 4) {
        Tensor sc = slice_frames(x, lo - off, hi - off);
        if (l == 0 && cfg_.hidden > 3)
          sc = concat_last(sc, Tensor::zeros({tn, H, W, cfg_.hidden - 3}));
        x = add(sc, relu(h));
      } else {
        x = h;
      }
      off = lo;
    }
    return reshape(x, {cfg_.bank.frames, H, W});
  }

  // rgb [frames_in, H, W, 3] -> normalized energy map [(H/8)*(W/8), channels]
  Tensor forward(const Tensor& rgb, const BankKernels& kn) const {
    return bank_.forward(stream(rgb), kn);
  }
  Tensor forward(const Tensor& rgb) const { return forward(rgb, bank_.prepare()); }

  void collect_params(const std::string& prefix, std::vector<std::pair<std::string, Tensor>>& out) {
    for (int l = 0; l < 5; ++l) {
      out.push_back({prefix + ".conv" + std::to_string(l) + ".w", layers_[(size_t)l].w});
      out.push_back({prefix + ".conv" + std::to_string(l) + ".b", layers_[(size_t)l].b});
    }
    bank_.collect_params(prefix + ".bank", out);
  }

  void clamp() { bank_.clamp(); }

 private:
  Config cfg_;
  std::vector<ConvLayer3d> layers_;
  MotionEnergyBank bank_;
};

// Merges the two channels' normalized maps: per-pixel linear map of the
// concatenated channels, rectified, then the same divisive normalization the
// banks use. The map is weights-only, so the pre-normalization output is
// positively homogeneous. Initialized to pass the first channel through
// untouched.
class FusionLayer {
 public:
  // identity on the first-order block, a half-gain identity on the
  // higher-order block: both streams carry gradient from the first step
  FusionLayer(int64_t channels = 256) : c_(channels) {
    std::vector<double> wv((size_t)(2 * channels * channels), 0.0);
    for (int64_t i = 0; i < channels; ++i) {
      wv[(size_t)(i * channels + i)] = 1.0;
      wv[(size_t)((channels + i) * channels + i)] = 0.5;
    }
    w_ = Tensor::from({2 * channels, channels}, std::move(wv), true);
    gain_ = Tensor::scalar(1.0, true);
    floor_ = Tensor::scalar(0.05, true);
  }

  Tensor pre_normalize(const Tensor& e1, const Tensor& e2) const {
    if (e1.shape() != e2.shape() || e1.shape().size() != 2 || e1.shape()[1] != c_)
      throw std::invalid_argument("fusion: incompatible maps " + shape_str(e1.shape()) + " / " +
                                  shape_str(e2.shape()));
    return relu(matmul(concat_last(e1, e2), w_));
  }

  Tensor forward(const Tensor& e1, const Tensor& e2) const {
    return divisive_normalize_rows(pre_normalize(e1, e2), gain_, floor_);
  }

  void collect_params(const std::string& prefix, std::vector<std::pair<std::string, Tensor>>& out) {
    out.push_back({prefix + ".w", w_});
    out.push_back({prefix + ".gain", gain_});
    out.push_back({prefix + ".floor", floor_});
  }

  void clamp() {
    gain_.data()[0] = std::max(gain_.data()[0], 1e-3);
    floor_.data()[0] = std::max(floor_.data()[0], 1e-3);
  }

 private:
  int64_t c_;
  Tensor w_, gain_, floor_;
};

}  // namespace meflow
