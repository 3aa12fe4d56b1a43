#pragma once

#include <string>
#include <utility>
#include <vector>

#include "meflow/core/ops.hpp"
#include "meflow/core/random.hpp"

// Convolutional gated recurrent update over the energy grid. Each gate
// applies a separable spatial filter to the concatenated (input, state) map:
// a 3x3 depthwise pass followed by a pointwise channel mix. The candidate is
// linear, so saturating the update gate reproduces its input exactly.

namespace meflow {

class ConvGru {
 public:
  ConvGru(int64_t grid_h, int64_t grid_w, int64_t channels, Rng& rng)
      : h_(grid_h), w_(grid_w), c_(channels) {
    update_ = make_gate(rng);
    reset_ = make_gate(rng);
    cand_ = make_gate(rng);
  }

  // x, h [N,C] with N = grid_h*grid_w -> new state [N,C]
  Tensor step(const Tensor& x, const Tensor& h) const {
    if (x.shape().size() != 2 || x.shape() != h.shape() || x.shape()[0] != h_ * w_ ||
        x.shape()[1] != c_)
      throw std::invalid_argument("conv gru: expected [" + std::to_string(h_ * w_) + "," +
                                  std::to_string(c_) + "] input and state, got " +
                                  shape_str(x.shape()) + " / " + shape_str(h.shape()));
    Tensor cat = concat_last(x, h);
    Tensor z = sigmoid(gate_pre(update_, cat));
    Tensor r = sigmoid(gate_pre(reset_, cat));
    Tensor cand = gate_pre(cand_, concat_last(x, mul(r, h)));
    return add(sub(h, mul(z, h)), mul(z, cand));
  }

  struct Gate {
    Tensor dw;  // [3,3,2C] depthwise taps
    Tensor pw;  // [2C,C] pointwise mix
    Tensor b;   // [C]
  };

  Gate& update() { return update_; }
  Gate& reset() { return reset_; }
  Gate& candidate() { return cand_; }

  void collect_params(const std::string& prefix, std::vector<std::pair<std::string, Tensor>>& out) {
    const char* names[3] = {"update", "reset", "cand"};
    Gate* gates[3] = {&update_, &reset_, &cand_};
    for (int i = 0; i < 3; ++i) {
      const std::string pre = prefix + "." + names[i] + ".";
      out.push_back({pre + "dw", gates[i]->dw});
      out.push_back({pre + "pw", gates[i]->pw});
      out.push_back({pre + "b", gates[i]->b});
    }
  }

 private:
  Gate make_gate(Rng& rng) {
    Gate g;
    // depthwise starts as the identity tap; the pointwise mix starts small
    Tensor dw = Tensor::zeros({3, 3, 2 * c_}, true);
    for (int64_t c = 0; c < 2 * c_; ++c) dw.data()[(1 * 3 + 1) * 2 * c_ + c] = 1.0;
    g.dw = dw;
    Tensor pw = Tensor::zeros({2 * c_, c_}, true);
    const double sd = 1.0 / std::sqrt((double)(2 * c_));
    for (int64_t i = 0; i < pw.size(); ++i) pw.data()[i] = rng.normal() * sd;
    g.pw = pw;
    g.b = Tensor::zeros({c_}, true);
    return g;
  }

  Tensor gate_pre(const Gate& g, const Tensor& cat) const {
    Tensor sp = depthwise3x3(reshape(cat, {h_, w_, 2 * c_}), g.dw);
    return add_rowvec(matmul(reshape(sp, {h_ * w_, 2 * c_}), g.pw), g.b);
  }

  int64_t h_, w_, c_;
  Gate update_, reset_, cand_;
};

}  // namespace meflow
