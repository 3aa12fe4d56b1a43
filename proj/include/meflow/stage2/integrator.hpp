#pragma once

#include <string>
#include <utility>
#include <vector>

#include "meflow/stage2/decoder.hpp"
#include "meflow/stage2/graph.hpp"
#include "meflow/stage2/gru.hpp"

// Recurrent global integration: each iteration rebuilds the motion graph
// from the current features, propagates energy along it, and passes the
// result through the gated update. Flow is decoded from the features before
// the first iteration and after every iteration, all through one shared
// decoder.

namespace meflow {

struct IntegrationResult {
  std::vector<Tensor> features;  // length iterations+1, each [N,C]
  std::vector<Tensor> flows;     // same length, each [H,W,2]
  Tensor adjacency;              // the graph built in the last iteration
  int64_t zero_norm_nodes = 0;
};

class MotionIntegrator {
 public:
  MotionIntegrator(int64_t grid_h, int64_t grid_w, int64_t channels, int64_t proj_dim, Rng& rng)
      : h_(grid_h), w_(grid_w), graph_(channels, proj_dim, rng),
        gru_(grid_h, grid_w, channels, rng) {}

  IntegrationResult run(const Tensor& em, const FlowDecoder& decoder, int iterations) const {
    if (iterations < 1)
      throw std::invalid_argument("integrator: need at least one iteration");
    IntegrationResult res;
    Tensor e = em;
    res.features.push_back(e);
    res.flows.push_back(decoder.decode(e, h_, w_));
    for (int i = 0; i < iterations; ++i) {
      AdjacencyResult adj = graph_.build(e);
      res.zero_norm_nodes += adj.zero_norm_nodes;
      e = gru_.step(matmul(adj.A, e), e);
      res.features.push_back(e);
      res.flows.push_back(decoder.decode(e, h_, w_));
      if (i + 1 == iterations) res.adjacency = adj.A;
    }
    return res;
  }

  MotionGraph& graph() { return graph_; }
  const MotionGraph& graph() const { return graph_; }
  ConvGru& gru() { return gru_; }

  void collect_params(const std::string& prefix, std::vector<std::pair<std::string, Tensor>>& out) {
    graph_.collect_params(prefix + ".graph", out);
    gru_.collect_params(prefix + ".gru", out);
  }

  void clamp() { graph_.clamp(); }

 private:
  int64_t h_, w_;
  MotionGraph graph_;
  ConvGru gru_;
};

}  // namespace meflow
