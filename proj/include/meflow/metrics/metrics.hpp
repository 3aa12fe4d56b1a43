#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "meflow/core/tensor.hpp"

// Flow comparison metrics: endpoint error, component-wise Pearson
// correlations, partial correlations controlling a reference field, and
// polarity-adaptive mask IoU.

namespace meflow {

inline void check_flow_pair(const Tensor& a, const Tensor& b, const char* who) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(who) + ": shape mismatch, " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  if (a.shape().empty() || a.shape().back() != 2)
    throw std::invalid_argument(std::string(who) + ": expected a trailing (u,v) axis, got " +
                                shape_str(a.shape()));
}

// mean over pixels of the endpoint distance
inline double epe(const Tensor& f, const Tensor& g) {
  check_flow_pair(f, g, "epe");
  const int64_t n = f.size() / 2;
  double s = 0;
  for (int64_t i = 0; i < n; ++i) {
    const double du = f[2 * i] - g[2 * i];
    const double dv = f[2 * i + 1] - g[2 * i + 1];
    s += std::sqrt(du * du + dv * dv);
  }
  return s / (double)n;
}

struct FlowComponents {
  std::vector<double> dir;    // atan2(v, u) in (-pi, pi]; meaningless where !valid
  std::vector<double> spd;    // sqrt(u^2 + v^2)
  std::vector<uint8_t> valid; // 0 where speed < 1e-6 leaves the direction undefined
};

inline FlowComponents decompose(const Tensor& f) {
  if (f.shape().empty() || f.shape().back() != 2)
    throw std::invalid_argument("decompose: expected a trailing (u,v) axis, got " +
                                shape_str(f.shape()));
  const int64_t n = f.size() / 2;
  FlowComponents c;
  c.dir.resize((size_t)n);
  c.spd.resize((size_t)n);
  c.valid.resize((size_t)n);
  for (int64_t i = 0; i < n; ++i) {
    const double u = f[2 * i], v = f[2 * i + 1];
    const double s = std::sqrt(u * u + v * v);
    double d = std::atan2(v, u);
    if (d <= -3.14159265358979323846) d = 3.14159265358979323846;
    c.spd[(size_t)i] = s;
    c.dir[(size_t)i] = d;
    c.valid[(size_t)i] = s < 1e-6 ? 0 : 1;
  }
  return c;
}

// sample correlation over the unmasked entries
inline double pearson(const std::vector<double>& x, const std::vector<double>& y,
                      const std::vector<uint8_t>* mask = nullptr) {
  if (x.size() != y.size())
    throw std::invalid_argument("pearson: length mismatch, " + std::to_string(x.size()) +
                                " vs " + std::to_string(y.size()));
  if (mask && mask->size() != x.size())
    throw std::invalid_argument("pearson: mask length mismatch");
  double sx = 0, sy = 0;
  int64_t n = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    if (mask && !(*mask)[i]) continue;
    sx += x[i];
    sy += y[i];
    ++n;
  }
  if (n < 2) throw std::runtime_error("pearson: fewer than two unmasked points");
  const double mx = sx / (double)n, my = sy / (double)n;
  double cxy = 0, cxx = 0, cyy = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    if (mask && !(*mask)[i]) continue;
    const double a = x[i] - mx, b = y[i] - my;
    cxy += a * b;
    cxx += a * a;
    cyy += b * b;
  }
  if (cxx <= 0.0 || cyy <= 0.0)
    throw std::runtime_error("pearson: zero variance leaves the correlation undefined");
  return cxy / std::sqrt(cxx * cyy);
}

// correlation between a and b after removing what g explains of each
inline double partial_correlation(double r_ab, double r_ag, double r_bg) {
  if (std::abs(r_ag) >= 1.0 - 1e-12 || std::abs(r_bg) >= 1.0 - 1e-12)
    throw std::runtime_error("partial_correlation: control correlation is saturated");
  return (r_ab - r_ag * r_bg) / (std::sqrt(1.0 - r_ag * r_ag) * std::sqrt(1.0 - r_bg * r_bg));
}

inline double partial_correlation(const std::vector<double>& a, const std::vector<double>& b,
                                  const std::vector<double>& g,
                                  const std::vector<uint8_t>* mask = nullptr) {
  return partial_correlation(pearson(a, b, mask), pearson(a, g, mask), pearson(b, g, mask));
}

struct IouResult {
  double value = 0;
  bool flipped = false;      // the complement of the prediction scored better
  bool empty_union = false;  // both masks empty; value defined as 0
};

inline IouResult iou(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& gt) {
  if (pred.size() != gt.size())
    throw std::invalid_argument("iou: mask sizes differ, " + std::to_string(pred.size()) +
                                " vs " + std::to_string(gt.size()));
  int64_t inter = 0, uni = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] != 0, g = gt[i] != 0;
    inter += (int64_t)(p && g);
    uni += (int64_t)(p || g);
  }
  IouResult r;
  if (uni == 0) {
    r.empty_union = true;
    return r;
  }
  r.value = (double)inter / (double)uni;
  return r;
}

// max over the prediction and its complement; segmentation polarity is arbitrary
inline IouResult iou_adaptive(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& gt) {
  std::vector<uint8_t> comp(pred.size());
  for (size_t i = 0; i < pred.size(); ++i) comp[i] = pred[i] ? 0 : 1;
  IouResult straight = iou(pred, gt);
  IouResult inverted = iou(comp, gt);
  if (inverted.value > straight.value) {
    inverted.flipped = true;
    return inverted;
  }
  return straight;
}

// shift b by a multiple of 2*pi so |a - b| is minimal for this pair
inline double unwrap_towards(double a, double b) {
  constexpr double tau = 2.0 * 3.14159265358979323846;
  double best = b, dist = std::abs(a - b);
  for (double cand : {b - tau, b + tau}) {
    const double d = std::abs(a - cand);
    if (d < dist) {
      dist = d;
      best = cand;
    }
  }
  return best;
}

inline double direction_correlation(const std::vector<double>& da, const std::vector<double>& db,
                                    const std::vector<uint8_t>& mask) {
  std::vector<double> b2(db.size());
  for (size_t i = 0; i < db.size(); ++i) b2[i] = unwrap_towards(da[i], db[i]);
  return pearson(da, b2, &mask);
}

struct FlowComparison {
  double epe = 0;
  double r_uv = 0, r_dir = 0, r_spd = 0;  // model vs reference
  double p_uv = 0, p_dir = 0, p_spd = 0;  // same, controlling the reference gt

  static std::string csv_header() { return "epe,r_uv,r_dir,r_spd,p_uv,p_dir,p_spd"; }
  std::string csv_row() const {
    std::ostringstream os;
    os.precision(10);
    os << epe << ',' << r_uv << ',' << r_dir << ',' << r_spd << ',' << p_uv << ',' << p_dir
       << ',' << p_spd;
    return os.str();
  }
};

// model vs ref on every component, partial correlations controlling gt
inline FlowComparison compare_flows(const Tensor& model, const Tensor& ref, const Tensor& gt) {
  check_flow_pair(model, ref, "compare_flows");
  check_flow_pair(model, gt, "compare_flows");
  const int64_t n = model.size() / 2;

  std::vector<double> mu((size_t)(2 * n)), ru((size_t)(2 * n)), gu((size_t)(2 * n));
  for (int64_t i = 0; i < 2 * n; ++i) {
    mu[(size_t)i] = model[i];
    ru[(size_t)i] = ref[i];
    gu[(size_t)i] = gt[i];
  }
  FlowComponents cm = decompose(model), cr = decompose(ref), cg = decompose(gt);
  std::vector<uint8_t> dmask((size_t)n);
  for (int64_t i = 0; i < n; ++i)
    dmask[(size_t)i] = cm.valid[(size_t)i] && cr.valid[(size_t)i] && cg.valid[(size_t)i];

  FlowComparison out;
  out.epe = epe(model, ref);
  out.r_uv = pearson(mu, ru);
  out.r_spd = pearson(cm.spd, cr.spd);
  out.r_dir = direction_correlation(cm.dir, cr.dir, dmask);
  out.p_uv = partial_correlation(out.r_uv, pearson(mu, gu), pearson(ru, gu));
  out.p_spd = partial_correlation(out.r_spd, pearson(cm.spd, cg.spd), pearson(cr.spd, cg.spd));
  out.p_dir = partial_correlation(out.r_dir, direction_correlation(cm.dir, cg.dir, dmask),
                                  direction_correlation(cr.dir, cg.dir, dmask));
  return out;
}

}  // namespace meflow
