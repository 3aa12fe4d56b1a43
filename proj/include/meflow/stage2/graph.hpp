#pragma once

#include <string>
#include <utility>
#include <vector>

#include "meflow/core/ops.hpp"
#include "meflow/core/random.hpp"

// The motion graph: node features are the energy-map pixels, edges weigh the
// cosine similarity of learned projections, sharpened by a learnable
// temperature and symmetrically degree-normalized.

namespace meflow {

struct AdjacencyResult {
  Tensor A;                   // [N,N], symmetric, entries > 0
  int64_t zero_norm_nodes = 0;  // nodes whose projected feature had zero norm
};

class MotionGraph {
 public:
  MotionGraph(int64_t channels, int64_t proj_dim, Rng& rng) {
    Tensor w = Tensor::zeros({channels, proj_dim}, true);
    const double sd = 1.0 / std::sqrt((double)channels);
    for (int64_t i = 0; i < w.size(); ++i) w.data()[i] = rng.normal() * sd;
    phi_ = w;
    s_ = Tensor::scalar(1.0, true);
  }

  // E [N,C] -> adjacency. Zero-norm projections get all-zero similarities
  // (before the exponential); the count of such nodes is reported.
  AdjacencyResult build(const Tensor& E) const {
    if (E.shape().size() != 2 || E.shape()[1] != phi_.shape()[0])
      throw std::invalid_argument("motion graph: expected [N," +
                                  std::to_string(phi_.shape()[0]) + "] features, got " +
                                  shape_str(E.shape()));
    const int64_t N = E.shape()[0], D = phi_.shape()[1];
    if (N > 4096)
      throw std::invalid_argument("motion graph: " + std::to_string(N) +
                                  " nodes exceed the 4096-node limit; downscale the input");
    Tensor proj = matmul(E, phi_);
    AdjacencyResult res;
    for (int64_t i = 0; i < N; ++i) {
      double n2 = 0;
      for (int64_t j = 0; j < D; ++j) {
        const double v = proj[i * D + j];
        n2 += v * v;
      }
      if (std::sqrt(n2) < 1e-30) ++res.zero_norm_nodes;
    }
    Tensor rn = row_normalize(proj);
    Tensor sim = matmul_tB(rn, rn);
    Tensor w = exp_t(mul_scalar(sim, s_));
    res.A = sym_scale(w, rsqrt(row_sum(w)));
    return res;
  }

  Tensor projection() { return phi_; }
  Tensor temperature() { return s_; }

  void collect_params(const std::string& prefix, std::vector<std::pair<std::string, Tensor>>& out) {
    out.push_back({prefix + ".phi", phi_});
    out.push_back({prefix + ".s", s_});
  }

  void clamp() {
    double& s = s_.data()[0];
    if (s < 1e-3) s = 1e-3;
    if (s > 10.0 - 1e-3) s = 10.0 - 1e-3;
  }

 private:
  Tensor phi_, s_;
};

}  // namespace meflow
