#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "meflow/core/tensor.hpp"

namespace meflow {

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected adaptive-moment optimizer. One state per parameter list;
// the t counter advances once per step. A NaN gradient rejects the whole
// step (no parameter is touched) and reports the offending parameter.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(std::vector<std::pair<std::string, Tensor>>& params) {
    if (m_.empty()) {
      m_.resize(params.size());
      v_.resize(params.size());
      for (size_t i = 0; i < params.size(); ++i) {
        m_[i].assign((size_t)params[i].second.size(), 0.0);
        v_[i].assign((size_t)params[i].second.size(), 0.0);
      }
    }
    if (m_.size() != params.size())
      throw std::invalid_argument("adam: parameter list size changed");
    for (auto& [name, p] : params) {
      const double* g = p.grad();
      for (int64_t i = 0; i < p.size(); ++i)
        if (std::isnan(g[i]))
          throw std::runtime_error("adam: NaN gradient in parameter " + name +
                                   ", step rejected");
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, (double)t_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, (double)t_);
    for (size_t pi = 0; pi < params.size(); ++pi) {
      Tensor& p = params[pi].second;
      const double* g = p.grad();
      double* m = m_[pi].data();
      double* v = v_[pi].data();
      double* w = p.data();
      for (int64_t i = 0; i < p.size(); ++i) {
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        const double mh = m[i] / bc1;
        const double vh = v[i] / bc2;
        w[i] -= cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps);
      }
    }
  }

  AdamConfig& config() { return cfg_; }
  int64_t steps_taken() const { return t_; }

 private:
  AdamConfig cfg_;
  int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace meflow
