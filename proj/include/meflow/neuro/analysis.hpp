#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "meflow/metrics/metrics.hpp"
#include "meflow/model/model.hpp"
#include "meflow/stim/stimulus.hpp"

// In-silico electrophysiology over the model: direction tuning protocols,
// preferred-frequency search, pattern/component classification on plaids, and
// circular-variance selectivity, exported per unit as CSV.

namespace meflow {

// Probing site for unit activations: the sensing stage's energy map, or the
// integrated map after a chosen recurrence iteration (0 = before the first
// graph pass).
enum class ResponseSite { stage1, stage2 };

struct ResponseProbe {
  ResponseSite site = ResponseSite::stage1;
  int iteration = 4;
};

// Direction angles sampled uniformly over (0, 2pi], last sample at 2pi.
inline std::vector<double> protocol_angles(int n = 12) {
  if (n < 4) throw std::invalid_argument("protocol_angles: need at least 4 directions");
  std::vector<double> a((size_t)n);
  for (int d = 0; d < n; ++d) a[(size_t)d] = 2.0 * M_PI * (double)(d + 1) / (double)n;
  return a;
}

struct TuningCurve {
  std::vector<double> angles;
  std::vector<double> responses;
  std::string stimulus;
};

// Rectified spatial mean of each channel of the probed activation map,
// read as PSTH-like rates.
inline std::vector<double> unit_responses(const ModelOutput& out, const ResponseProbe& probe) {
  const Tensor* map = nullptr;
  if (probe.site == ResponseSite::stage1) {
    map = &out.e1;
  } else {
    if (probe.iteration < 0 || (size_t)probe.iteration >= out.features.size())
      throw std::invalid_argument("unit_responses: iteration " + std::to_string(probe.iteration) +
                                  " outside the recorded range 0.." +
                                  std::to_string(out.features.size() - 1));
    map = &out.features[(size_t)probe.iteration];
  }
  const int64_t N = map->shape()[0], C = map->shape()[1];
  std::vector<double> r((size_t)C, 0.0);
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) r[(size_t)c] += std::max(0.0, (*map)[n * C + c]);
  for (auto& v : r) v /= (double)N;
  return r;
}

inline std::vector<double> unit_responses(const TwoStageModel& model, const Tensor& rgb,
                                          const ResponseProbe& probe) {
  return unit_responses(model.forward(rgb), probe);
}

struct TuningProtocol {
  int directions = 12;
  int grid = 8;            // grid x grid log-spaced frequency pairs
  double freq_lo = 0.02;   // cycles/px and cycles/frame
  double freq_hi = 0.24;
  double contrast = 1.0;
};

// All units' responses to one stimulus family at one frequency pair, swept
// over the direction circle. responses is direction-major [D*C].
struct DirectionStudy {
  double fs = 0, ft = 0;
  std::vector<double> angles;
  std::vector<double> responses;
  int64_t channels = 0;
  std::string kind;

  TuningCurve curve(int64_t unit) const {
    if (unit < 0 || unit >= channels)
      throw std::invalid_argument("tuning curve: unit " + std::to_string(unit) +
                                  " outside 0.." + std::to_string(channels - 1));
    TuningCurve c;
    c.angles = angles;
    c.stimulus = kind + " fs=" + std::to_string(fs) + " ft=" + std::to_string(ft);
    for (size_t d = 0; d < angles.size(); ++d)
      c.responses.push_back(responses[d * (size_t)channels + (size_t)unit]);
    return c;
  }
};

namespace detail {

inline Tensor tuning_stimulus(const TwoStageModel& model, double fs, double ft, double angle,
                              double contrast, bool plaid_stim) {
  const auto& cfg = model.config();
  if (cfg.height != cfg.width)
    throw std::invalid_argument("tuning protocol: needs a square model input");
  GratingParams p;
  p.size = cfg.height;
  p.frames = cfg.frames_in;
  p.sfreq = fs;
  p.speed = ft / fs;
  p.theta = angle;
  p.contrast = contrast;
  p.envelope = false;
  StimulusSequence s = plaid_stim ? plaid(p) : drifting_gabor(p);
  return gray_to_rgb(s.frames);
}

}  // namespace detail

inline DirectionStudy direction_study(const TwoStageModel& model, const PreparedKernels& kn,
                                      const ResponseProbe& probe, double fs, double ft,
                                      bool plaid_stim, const TuningProtocol& pp = {}) {
  DirectionStudy st;
  st.fs = fs;
  st.ft = ft;
  st.angles = protocol_angles(pp.directions);
  st.kind = plaid_stim ? "plaid" : "grating";
  for (double a : st.angles) {
    Tensor rgb = detail::tuning_stimulus(model, fs, ft, a, pp.contrast, plaid_stim);
    auto r = unit_responses(model.forward(rgb, kn), probe);
    st.channels = (int64_t)r.size();
    st.responses.insert(st.responses.end(), r.begin(), r.end());
  }
  return st;
}

inline DirectionStudy direction_study(const TwoStageModel& model, const ResponseProbe& probe,
                                      double fs, double ft, bool plaid_stim,
                                      const TuningProtocol& pp = {}) {
  return direction_study(model, model.prepare(), probe, fs, ft, plaid_stim, pp);
}

// Grating tuning curves for every unit over the full log-spaced frequency
// grid. Entries are ft-major: studies[ift * grid + ifs].
struct GridStudy {
  std::vector<double> fs, ft;
  std::vector<DirectionStudy> studies;
  int grid = 0;

  const DirectionStudy& at(int ift, int ifs) const {
    return studies[(size_t)(ift * grid + ifs)];
  }
};

inline std::vector<double> log_frequency_axis(int n, double lo, double hi) {
  if (n < 1 || lo <= 0 || hi <= lo) throw std::invalid_argument("frequency axis: bad range");
  std::vector<double> v((size_t)n);
  for (int k = 0; k < n; ++k)
    v[(size_t)k] = n == 1 ? lo : lo * std::pow(hi / lo, (double)k / (double)(n - 1));
  return v;
}

inline GridStudy grating_grid_study(const TwoStageModel& model, const ResponseProbe& probe,
                                    const TuningProtocol& pp = {}) {
  GridStudy g;
  g.grid = pp.grid;
  g.fs = log_frequency_axis(pp.grid, pp.freq_lo, pp.freq_hi);
  g.ft = g.fs;
  const PreparedKernels kn = model.prepare();
  for (double ft : g.ft)
    for (double fs : g.fs)
      g.studies.push_back(direction_study(model, kn, probe, fs, ft, false, pp));
  return g;
}

struct PreferredFrequency {
  int ifs = 0, ift = 0;
  double fs = 0, ft = 0;
  double curve_std = 0;
  bool degenerate = false;  // every curve on the grid is flat
};

inline double curve_stddev(const std::vector<double>& r) {
  double m = 0;
  for (double v : r) m += v;
  m /= (double)r.size();
  double s = 0;
  for (double v : r) s += (v - m) * (v - m);
  return std::sqrt(s / (double)r.size());
}

// The grid point whose direction curve varies most; ties break toward lower
// temporal then lower spatial frequency.
inline PreferredFrequency preferred_frequency(const GridStudy& g, int64_t unit) {
  PreferredFrequency best;
  double top = -1.0;
  for (int it = 0; it < g.grid; ++it)
    for (int is = 0; is < g.grid; ++is) {
      const double sd = curve_stddev(g.at(it, is).curve(unit).responses);
      if (sd > top) {
        top = sd;
        best.ifs = is;
        best.ift = it;
        best.curve_std = sd;
      }
    }
  best.fs = g.fs[(size_t)best.ifs];
  best.ft = g.ft[(size_t)best.ift];
  best.degenerate = top < 1e-15;
  return best;
}

// A component-selective unit answers a compound stimulus as the mean of its
// grating curve read 30 degrees to either side (circular interpolation).
inline std::vector<double> component_prediction(const std::vector<double>& curve) {
  const int n = (int)curve.size();
  if (n < 4) throw std::invalid_argument("component prediction: curve too short");
  const double shift = (M_PI / 6.0) / (2.0 * M_PI / (double)n);  // bins per 30 degrees
  auto sample = [&](double pos) {
    double p = std::fmod(pos, (double)n);
    if (p < 0) p += (double)n;
    const int i0 = (int)std::floor(p), i1 = (i0 + 1) % n;
    const double f = p - (double)i0;
    return (1 - f) * curve[(size_t)i0] + f * curve[(size_t)(i1)];
  };
  std::vector<double> out((size_t)n);
  for (int d = 0; d < n; ++d)
    out[(size_t)d] = 0.5 * (sample((double)d + shift) + sample((double)d - shift));
  return out;
}

struct PatternIndex {
  double r_pattern = 0, r_component = 0;
  bool saturated = false;  // a control correlation hit +-1 or a curve was flat
};

// Partial correlations from the three raw curve correlations.
inline PatternIndex pattern_component_from_correlations(double r_p, double r_c, double r_cp) {
  PatternIndex out;
  if (std::abs(r_c) >= 1.0 - 1e-12 || std::abs(r_cp) >= 1.0 - 1e-12) {
    out.saturated = true;
    return out;
  }
  out.r_pattern = partial_correlation(r_p, r_c, r_cp);
  // a plaid response identical to the grating curve leaves no residual for
  // the component partial once the pattern prediction is conditioned out
  out.r_component = std::abs(r_p) >= 1.0 - 1e-12 ? 0.0 : partial_correlation(r_c, r_p, r_cp);
  return out;
}

// C: grating curve, P: plaid curve of the same unit at the same frequency.
inline PatternIndex pattern_component_correlation(const TuningCurve& C, const TuningCurve& P) {
  if (C.responses.size() != P.responses.size())
    throw std::invalid_argument("pattern/component: curves differ in length");
  const std::vector<double> comp = component_prediction(C.responses);
  try {
    const double r_p = pearson(P.responses, C.responses);
    const double r_c = pearson(P.responses, comp);
    const double r_cp = pearson(C.responses, comp);
    return pattern_component_from_correlations(r_p, r_c, r_cp);
  } catch (const std::runtime_error&) {
    PatternIndex out;
    out.saturated = true;
    return out;
  }
}

enum class CellClass { component, pattern, unclassified };

inline std::string cell_class_name(CellClass c) {
  switch (c) {
    case CellClass::component: return "component";
    case CellClass::pattern: return "pattern";
    default: return "unclassified";
  }
}

struct CellClassification {
  double r_pattern = 0, r_component = 0;
  CellClass label = CellClass::unclassified;
};

// Fisher z with n direction samples; a cell is claimed only when its z beats
// both zero and the rival by 1.28 (one-sided 90%).
inline CellClassification classify_cell(double r_pattern, double r_component, int n = 12) {
  if (!std::isfinite(r_pattern) || !std::isfinite(r_component))
    throw std::invalid_argument("classify_cell: correlations must be finite");
  if (n < 4) throw std::invalid_argument("classify_cell: need at least 4 samples");
  auto z = [&](double r) {
    return std::atanh(std::clamp(r, -1.0, 1.0)) * std::sqrt((double)n - 3.0);
  };
  const double zp = z(r_pattern), zc = z(r_component), margin = 1.28;
  CellClassification out;
  out.r_pattern = r_pattern;
  out.r_component = r_component;
  if (zp - std::max(zc, 0.0) > margin)
    out.label = CellClass::pattern;
  else if (zc - std::max(zp, 0.0) > margin)
    out.label = CellClass::component;
  return out;
}

// |sum A e^{2 i theta}| / sum A. The doubled angle reads orientation
// selectivity (period pi); direction_period switches to e^{i theta}.
inline double circular_variance_selectivity(const TuningCurve& curve,
                                            bool direction_period = false) {
  if (curve.angles.size() != curve.responses.size() || curve.responses.empty())
    throw std::invalid_argument("selectivity: angles and responses must match");
  double re = 0, im = 0, tot = 0;
  for (size_t i = 0; i < curve.responses.size(); ++i) {
    const double a = curve.responses[i];
    if (a < 0) throw std::invalid_argument("selectivity: responses must be nonnegative");
    const double ph = (direction_period ? 1.0 : 2.0) * curve.angles[i];
    re += a * std::cos(ph);
    im += a * std::sin(ph);
    tot += a;
  }
  if (tot <= 0) throw std::invalid_argument("selectivity: all responses are zero");
  return std::hypot(re, im) / tot;
}

struct UnitAnalysis {
  int64_t unit = 0;
  double fs = 0, ft = 0;
  double r_pattern = 0, r_component = 0;
  CellClass label = CellClass::unclassified;
  bool saturated = false;
  double o_ori = 0;
};

// Full per-unit protocol at one probe: preferred frequency from the grating
// grid, plaid curves at the preferred point, classification, selectivity.
inline std::vector<UnitAnalysis> analyze_population(const TwoStageModel& model,
                                                    const ResponseProbe& probe,
                                                    const TuningProtocol& pp = {}) {
  const GridStudy g = grating_grid_study(model, probe, pp);
  const PreparedKernels kn = model.prepare();
  std::map<std::pair<int, int>, DirectionStudy> plaids;
  std::vector<UnitAnalysis> out;
  const int64_t C = g.studies.front().channels;
  for (int64_t u = 0; u < C; ++u) {
    UnitAnalysis ua;
    ua.unit = u;
    const PreferredFrequency pf = preferred_frequency(g, u);
    ua.fs = pf.fs;
    ua.ft = pf.ft;
    const TuningCurve grating = g.at(pf.ift, pf.ifs).curve(u);
    const auto key = std::make_pair(pf.ift, pf.ifs);
    if (!plaids.count(key))
      plaids[key] = direction_study(model, kn, probe, pf.fs, pf.ft, true, pp);
    const PatternIndex pi = pattern_component_correlation(grating, plaids[key].curve(u));
    ua.saturated = pi.saturated;
    if (!pi.saturated) {
      const CellClassification cc = classify_cell(pi.r_pattern, pi.r_component, pp.directions);
      ua.r_pattern = cc.r_pattern;
      ua.r_component = cc.r_component;
      ua.label = cc.label;
    }
    double tot = 0;
    for (double r : grating.responses) tot += r;
    ua.o_ori = tot > 0 ? circular_variance_selectivity(grating) : 0.0;
    out.push_back(ua);
  }
  return out;
}

inline double pattern_fraction(const std::vector<UnitAnalysis>& pop) {
  if (pop.empty()) throw std::invalid_argument("pattern_fraction: empty population");
  int64_t n = 0;
  for (const auto& u : pop) n += u.label == CellClass::pattern ? 1 : 0;
  return (double)n / (double)pop.size();
}

inline std::string analysis_csv(const std::vector<UnitAnalysis>& pop) {
  std::ostringstream os;
  os.precision(10);
  os << "unit,fs,ft,r_pattern,r_component,label,o_ori\n";
  for (const auto& u : pop)
    os << u.unit << ',' << u.fs << ',' << u.ft << ',' << u.r_pattern << ',' << u.r_component
       << ',' << cell_class_name(u.label) << ',' << u.o_ori << '\n';
  return os.str();
}

}  // namespace meflow
