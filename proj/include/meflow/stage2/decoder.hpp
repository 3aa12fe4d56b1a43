#pragma once

#include <string>
#include <utility>
#include <vector>

#include "meflow/core/ops.hpp"
#include "meflow/core/random.hpp"

// Shared flow decoder: squares the features (erasing sign), normalizes each
// channel by its spatial energy, then maps channels to (u, v) through 1x1
// blocks with residual connections and upsamples to full resolution. One
// instance serves the sensing stage and every integration iteration.

namespace meflow {

class FlowDecoder {
 public:
  FlowDecoder(int64_t channels, int64_t width, Rng& rng) : c_(channels), d_(width) {
    auto mat = [&](int64_t r, int64_t c, double sd) {
      Tensor t = Tensor::zeros({r, c}, true);
      for (int64_t i = 0; i < t.size(); ++i) t.data()[i] = rng.normal() * sd;
      return t;
    };
    proj_w_ = mat(channels, width, 1.0 / std::sqrt((double)channels));
    proj_b_ = Tensor::zeros({width}, true);
    res1_w_ = mat(width, width, 1.0 / std::sqrt((double)width));
    res1_b_ = Tensor::zeros({width}, true);
    res2_w_ = mat(width, width, 1.0 / std::sqrt((double)width));
    res2_b_ = Tensor::zeros({width}, true);
    head_w_ = mat(width, 2, 1.0 / std::sqrt((double)width));
    head_b_ = Tensor::zeros({2}, true);
    gain_ = Tensor::scalar(1.0, true);
    floor_ = Tensor::scalar(0.05, true);
  }

  // E [grid_h*grid_w, C] -> flow [8*grid_h, 8*grid_w, 2]
  Tensor decode(const Tensor& E, int64_t grid_h, int64_t grid_w) const {
    if (E.shape().size() != 2 || E.shape()[0] != grid_h * grid_w || E.shape()[1] != c_)
      throw std::invalid_argument("flow decoder: expected [" + std::to_string(grid_h * grid_w) +
                                  "," + std::to_string(c_) + "], got " + shape_str(E.shape()));
    Tensor n = square_column_normalize(E, gain_, floor_);
    Tensor y = add_rowvec(matmul(n, proj_w_), proj_b_);
    y = add(y, relu(add_rowvec(matmul(y, res1_w_), res1_b_)));
    y = add(y, relu(add_rowvec(matmul(y, res2_w_), res2_b_)));
    Tensor f = add_rowvec(matmul(y, head_w_), head_b_);
    return bilinear_resize(reshape(f, {grid_h, grid_w, 2}), 8 * grid_h, 8 * grid_w);
  }

  int64_t channels() const { return c_; }

  void collect_params(const std::string& prefix, std::vector<std::pair<std::string, Tensor>>& out) {
    out.push_back({prefix + ".proj.w", proj_w_});
    out.push_back({prefix + ".proj.b", proj_b_});
    out.push_back({prefix + ".res1.w", res1_w_});
    out.push_back({prefix + ".res1.b", res1_b_});
    out.push_back({prefix + ".res2.w", res2_w_});
    out.push_back({prefix + ".res2.b", res2_b_});
    out.push_back({prefix + ".head.w", head_w_});
    out.push_back({prefix + ".head.b", head_b_});
    out.push_back({prefix + ".gain", gain_});
    out.push_back({prefix + ".floor", floor_});
  }

  void clamp() {
    gain_.data()[0] = std::max(gain_.data()[0], 1e-3);
    floor_.data()[0] = std::max(floor_.data()[0], 1e-3);
  }

 private:
  int64_t c_, d_;
  Tensor proj_w_, proj_b_, res1_w_, res1_b_, res2_w_, res2_b_, head_w_, head_b_;
  Tensor gain_, floor_;
};

}  // namespace meflow
