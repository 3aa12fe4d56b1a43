#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "meflow/stage1/higher_order.hpp"
#include "meflow/stage2/integrator.hpp"

// The full two-stage perception model. Stage one senses local motion energy
// (first-order bank alone, or fused with the higher-order channel); stage two
// integrates it globally over the motion graph. One decoder reads out flow
// at every decode point.

namespace meflow {

enum class ChannelMode { first_order, dual };

inline ChannelMode parse_channel_mode(const std::string& s) {
  if (s == "first" || s == "first_order") return ChannelMode::first_order;
  if (s == "dual") return ChannelMode::dual;
  throw std::invalid_argument("channel mode must be 'first' or 'dual', got '" + s + "'");
}

inline std::string channel_mode_name(ChannelMode m) {
  return m == ChannelMode::dual ? "dual" : "first_order";
}

// [T,H,W,3] in [0,1] -> [T,H,W] luma. Input frames are data, not parameters,
// so this runs outside the tape.
inline Tensor luma(const Tensor& rgb) {
  if (rgb.shape().size() != 4 || rgb.shape()[3] != 3)
    throw std::invalid_argument("luma: expected [T,H,W,3], got " + shape_str(rgb.shape()));
  const int64_t n = rgb.size() / 3;
  Tensor out = Tensor::zeros({rgb.shape()[0], rgb.shape()[1], rgb.shape()[2]});
  const double* p = rgb.data();
  for (int64_t i = 0; i < n; ++i)
    out.data()[i] = 0.299 * p[3 * i] + 0.587 * p[3 * i + 1] + 0.114 * p[3 * i + 2];
  return out;
}

struct ModelOutput {
  Tensor e1;                     // [N,C] first-order map
  Tensor e2;                     // [N,C] higher-order map (dual mode only)
  Tensor em;                     // [N,C] map handed to stage two
  std::vector<Tensor> features;  // iterations+1 maps, features[0] == em
  std::vector<Tensor> flows;     // iterations+1 fields [H,W,2]; flows[0] decodes em
  Tensor adjacency;              // [N,N] graph of the last iteration
  int64_t zero_norm_nodes = 0;
};

// Kernel tensors shared by every sample of one optimization step.
struct PreparedKernels {
  BankKernels first;
  BankKernels higher;  // unused in first_order mode
};

class TwoStageModel {
 public:
  struct Config {
    int64_t height = 64, width = 64;
    ChannelMode mode = ChannelMode::dual;
    int iterations = 4;
    int64_t units_per_scale = 32;
    int num_scales = 8;
    int64_t frames_in = 15;  // RGB window length
    int64_t mid = 7;         // labeled instant inside the window
    int64_t hoc_hidden = 8;
    int64_t proj_dim = 64;
    int64_t decoder_width = 64;
  };

  TwoStageModel(const Config& cfg, Rng& rng)
      : cfg_(cfg),
        bank_(bank_config(cfg), rng),
        integrator_(cfg.height / 8, cfg.width / 8, channels(cfg), cfg.proj_dim, rng),
        decoder_(channels(cfg), cfg.decoder_width, rng) {
    if (cfg.iterations < 1)
      throw std::invalid_argument("model: need at least one integration iteration");
    if (cfg.mode == ChannelMode::dual) {
      HigherOrderChannel::Config hc;
      hc.frames_in = cfg.frames_in;
      hc.mid = cfg.mid;
      hc.hidden = cfg.hoc_hidden;
      hc.bank = bank_config(cfg);
      hoc_ = std::make_unique<HigherOrderChannel>(hc, rng);
      fusion_ = std::make_unique<FusionLayer>(channels(cfg));
    }
  }

  static int64_t channels(const Config& cfg) { return cfg.units_per_scale * cfg.num_scales; }
  const Config& config() const { return cfg_; }
  MotionEnergyBank& bank() { return bank_; }
  HigherOrderChannel& hoc() { return *hoc_; }
  FusionLayer& fusion() { return *fusion_; }
  MotionIntegrator& integrator() { return integrator_; }
  FlowDecoder& decoder() { return decoder_; }

  PreparedKernels prepare() const {
    PreparedKernels kn;
    kn.first = bank_.prepare();
    if (hoc_) kn.higher = hoc_->bank().prepare();
    return kn;
  }

  // The causal frame window stage one reads: grayscale frames
  // [mid-5, mid] of the input sequence.
  Tensor stage1_window(const Tensor& gray) const {
    if (gray.shape().size() != 3 || gray.shape()[0] != cfg_.frames_in)
      throw std::invalid_argument("model: expected [" + std::to_string(cfg_.frames_in) +
                                  ",H,W] grayscale, got " + shape_str(gray.shape()));
    const int64_t f = bank_.config().frames;
    return slice_frames(gray, cfg_.mid - f + 1, cfg_.mid + 1);
  }

  ModelOutput forward(const Tensor& rgb, const PreparedKernels& kn) const {
    if (rgb.shape().size() != 4 || rgb.shape()[0] != cfg_.frames_in ||
        rgb.shape()[1] != cfg_.height || rgb.shape()[2] != cfg_.width || rgb.shape()[3] != 3)
      throw std::invalid_argument("model: expected [" + std::to_string(cfg_.frames_in) + "," +
                                  std::to_string(cfg_.height) + "," + std::to_string(cfg_.width) +
                                  ",3] input, got " + shape_str(rgb.shape()));
    ModelOutput out;
    out.e1 = bank_.forward(stage1_window(luma(rgb)), kn.first);
    if (hoc_) {
      out.e2 = hoc_->forward(rgb, kn.higher);
      out.em = fusion_->forward(out.e1, out.e2);
    } else {
      out.em = out.e1;
    }
    IntegrationResult res = integrator_.run(out.em, decoder_, cfg_.iterations);
    out.features = std::move(res.features);
    out.flows = std::move(res.flows);
    out.adjacency = std::move(res.adjacency);
    out.zero_norm_nodes = res.zero_norm_nodes;
    return out;
  }
  ModelOutput forward(const Tensor& rgb) const { return forward(rgb, prepare()); }

  std::vector<std::pair<std::string, Tensor>> params() {
    std::vector<std::pair<std::string, Tensor>> out;
    bank_.collect_params("bank1", out);
    if (hoc_) {
      hoc_->collect_params("hoc", out);
      fusion_->collect_params("fusion", out);
    }
    integrator_.collect_params("stage2", out);
    decoder_.collect_params("decoder", out);
    return out;
  }

  void clamp() {
    bank_.clamp();
    if (hoc_) {
      hoc_->clamp();
      fusion_->clamp();
    }
    integrator_.clamp();
    decoder_.clamp();
  }

 private:
  static MotionEnergyBank::Config bank_config(const Config& cfg) {
    MotionEnergyBank::Config bc;
    bc.height = cfg.height;
    bc.width = cfg.width;
    bc.units_per_scale = cfg.units_per_scale;
    bc.num_scales = cfg.num_scales;
    return bc;
  }

  Config cfg_;
  MotionEnergyBank bank_;
  std::unique_ptr<HigherOrderChannel> hoc_;
  std::unique_ptr<FusionLayer> fusion_;
  MotionIntegrator integrator_;
  FlowDecoder decoder_;
};

}  // namespace meflow
