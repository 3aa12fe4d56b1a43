#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "meflow/core/adam.hpp"
#include "meflow/core/checkpoint.hpp"
#include "meflow/metrics/metrics.hpp"
#include "meflow/model/model.hpp"
#include "meflow/stim/stimulus.hpp"
#include "meflow/stim/texture.hpp"

namespace meflow {

enum class DatasetKind { toy_blobs, toy_gratings, proxy_diffuse, proxy_nondiffuse };

inline const char* dataset_name(DatasetKind k) {
  switch (k) {
    case DatasetKind::toy_blobs: return "toy_blobs";
    case DatasetKind::toy_gratings: return "toy_gratings";
    case DatasetKind::proxy_diffuse: return "proxy_diffuse";
    default: return "proxy_nondiffuse";
  }
}

inline DatasetKind parse_dataset(const std::string& s) {
  for (DatasetKind k : {DatasetKind::toy_blobs, DatasetKind::toy_gratings,
                        DatasetKind::proxy_diffuse, DatasetKind::proxy_nondiffuse})
    if (s == dataset_name(k)) return k;
  throw std::invalid_argument("unknown dataset kind '" + s + "'");
}

inline bool is_toy(DatasetKind k) {
  return k == DatasetKind::toy_blobs || k == DatasetKind::toy_gratings;
}

// one freshly generated labeled sequence; `size` is the square frame side
inline StimulusSequence draw_sample(DatasetKind k, uint64_t seed, int64_t size, int64_t frames) {
  switch (k) {
    case DatasetKind::toy_blobs: return toy_blob_sample(seed, size, frames);
    case DatasetKind::toy_gratings: return toy_grating_sample(seed, size, frames);
    case DatasetKind::proxy_diffuse:
      return proxy_material_sample(seed, MaterialMode::diffuse, size, frames);
    default: return proxy_material_sample(seed, MaterialMode::nondiffuse, size, frames);
  }
}

// geometric decay toward the final decode point: the last weight is 1
inline std::vector<double> default_loss_weights(int64_t n, double gamma = 0.8) {
  if (n < 1) throw std::invalid_argument("loss weights: need at least one decode point");
  if (!(gamma > 0.0)) throw std::invalid_argument("loss weights: decay must be positive");
  std::vector<double> w((size_t)n);
  for (int64_t i = 0; i < n; ++i) w[(size_t)i] = std::pow(gamma, (double)(n - 1 - i));
  return w;
}

// weighted mean-square error accumulated over every decode point
inline Tensor sequence_loss(const std::vector<Tensor>& preds, const Tensor& gt,
                            const std::vector<double>& weights) {
  if (preds.empty()) throw std::invalid_argument("sequence loss: no decode points");
  if (weights.size() != preds.size())
    throw std::invalid_argument("sequence loss: " + std::to_string(weights.size()) +
                                " weights for " + std::to_string(preds.size()) +
                                " decode points");
  Tensor loss;
  for (size_t k = 0; k < preds.size(); ++k) {
    if (preds[k].shape() != gt.shape())
      throw std::invalid_argument("sequence loss: decode point " + std::to_string(k) +
                                  " has shape " + shape_str(preds[k].shape()) +
                                  ", ground truth is " + shape_str(gt.shape()));
    Tensor term = mul_const(mean_all(square(sub(preds[k], gt))), weights[k]);
    loss = k == 0 ? term : add(loss, term);
  }
  return loss;
}

struct TrainPhase {
  std::vector<DatasetKind> mix;
  int64_t steps = 0;
};

struct TrainConfig {
  TwoStageModel::Config model;
  std::vector<TrainPhase> phases;
  double lr = 2e-4;
  int64_t batch = 4;
  uint64_t seed = 0;
  double loss_gamma = 0.8;
  std::vector<double> loss_weights;  // empty = geometric decay via loss_gamma
  int64_t stim_frames = 0;           // 0 = exactly the model window
  int64_t eval_every = 100;          // 0 = held-out evaluation only at the end
  int64_t eval_n = 8;
  DatasetKind eval_kind = DatasetKind::toy_gratings;
  std::string checkpoint_path;       // empty = keep weights in memory only
};

// the standard two-phase schedule: toys first, then toys plus a material proxy
inline std::vector<TrainPhase> curriculum_phases(int64_t warm_steps, int64_t full_steps,
                                                 MaterialMode material) {
  const DatasetKind proxy = material == MaterialMode::diffuse ? DatasetKind::proxy_diffuse
                                                              : DatasetKind::proxy_nondiffuse;
  return {{{DatasetKind::toy_blobs, DatasetKind::toy_gratings}, warm_steps},
          {{DatasetKind::toy_blobs, DatasetKind::toy_gratings, proxy}, full_steps}};
}

inline void validate_train_config(const TrainConfig& cfg) {
  if (cfg.phases.empty()) throw std::invalid_argument("train: no phases configured");
  for (const TrainPhase& p : cfg.phases) {
    if (p.mix.empty()) throw std::invalid_argument("train: a phase has an empty dataset mix");
    if (p.steps < 0) throw std::invalid_argument("train: negative step count");
  }
  if (cfg.phases.size() > 1)
    for (DatasetKind k : cfg.phases[0].mix)
      if (!is_toy(k))
        throw std::invalid_argument(
            "train: a curriculum must warm up on the toy datasets before the full mix");
  if (cfg.batch < 1) throw std::invalid_argument("train: batch size must be positive");
  if (!(cfg.lr >= 0.0)) throw std::invalid_argument("train: learning rate must be nonnegative");
  if (cfg.eval_n < 1) throw std::invalid_argument("train: need at least one held-out sample");
  if (cfg.model.height != cfg.model.width)
    throw std::invalid_argument("train: generated datasets are square, height must equal width");
  if (cfg.stim_frames > 0 && cfg.stim_frames < cfg.model.frames_in)
    throw std::invalid_argument("train: stimulus shorter than the model window");
  if (!cfg.loss_weights.empty() &&
      (int64_t)cfg.loss_weights.size() != (int64_t)cfg.model.iterations + 1)
    throw std::invalid_argument("train: expected one loss weight per decode point, " +
                                std::to_string(cfg.model.iterations + 1) + " total");
}

inline TwoStageModel build_model(const TrainConfig& cfg) {
  Rng rng(cfg.seed);
  return TwoStageModel(cfg.model, rng);
}

// mean endpoint error of the final flow over a fixed held-out stream
inline double evaluate(TwoStageModel& model, DatasetKind kind, int64_t n, uint64_t seed,
                       int64_t frames = 0) {
  if (n < 1) throw std::invalid_argument("evaluate: need at least one sample");
  const auto& mc = model.config();
  const int64_t F = frames > 0 ? frames : mc.frames_in;
  if (F < mc.frames_in) throw std::invalid_argument("evaluate: stimulus shorter than the window");
  Rng rng = Rng(seed).split(0x6e1dUL);
  PreparedKernels kn = model.prepare();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    StimulusSequence s = draw_sample(kind, rng.bits(), mc.height, F);
    Tensor rgb = gray_to_rgb(slice_frames(s.frames, 0, mc.frames_in));
    ModelOutput out = model.forward(rgb, kn);
    acc += epe(out.flows.back(), s.gt[(size_t)mc.mid]);
  }
  return acc / (double)n;
}

struct TrainLogRow {
  int64_t step = 0;
  int64_t phase = 0;
  double loss = 0.0;
  double eval_epe = std::numeric_limits<double>::quiet_NaN();  // NaN outside eval steps
};

struct TrainResult {
  std::vector<TrainLogRow> log;
  std::vector<std::string> warnings;
  double final_epe = std::numeric_limits<double>::quiet_NaN();
  int64_t steps = 0;

  std::string csv() const {
    std::ostringstream os;
    os.precision(10);
    os << "step,phase,loss,eval_epe\n";
    for (const TrainLogRow& r : log) {
      os << r.step << ',' << r.phase << ',' << r.loss << ',';
      if (std::isfinite(r.eval_epe)) os << r.eval_epe;
      os << '\n';
    }
    return os.str();
  }
};

namespace detail {

// flag consecutive disjoint windows whose smoothed loss went up
inline void smoothed_loss_monitor(TrainResult& res, int64_t window = 50) {
  if ((int64_t)res.log.size() < 2 * window) return;
  double prev = std::numeric_limits<double>::infinity();
  for (size_t base = 0; base + (size_t)window <= res.log.size(); base += (size_t)window) {
    double m = 0.0;
    for (size_t i = base; i < base + (size_t)window; ++i) m += res.log[i].loss;
    m /= (double)window;
    if (m > prev * 1.10)
      res.warnings.push_back("train: smoothed loss rose near step " +
                             std::to_string(res.log[base].step));
    prev = m;
  }
}

}  // namespace detail

// one optimizer step per log row; parameters are re-projected after every step
inline TrainResult train(TwoStageModel& model, const TrainConfig& cfg) {
  validate_train_config(cfg);
  const auto& mc = model.config();
  const int64_t K = (int64_t)mc.iterations + 1;
  const std::vector<double> w =
      cfg.loss_weights.empty() ? default_loss_weights(K, cfg.loss_gamma) : cfg.loss_weights;
  if ((int64_t)w.size() != K)
    throw std::invalid_argument("train: model decodes " + std::to_string(K) +
                                " points, got " + std::to_string(w.size()) + " weights");
  const int64_t F = cfg.stim_frames > 0 ? cfg.stim_frames : mc.frames_in;

  auto params = model.params();
  AdamConfig ac;
  ac.lr = cfg.lr;
  Adam opt(ac);
  Rng data = Rng(cfg.seed).split(0xda7aUL);

  TrainResult res;
  int64_t gstep = 0;
  for (size_t pi = 0; pi < cfg.phases.size(); ++pi) {
    const TrainPhase& ph = cfg.phases[pi];
    for (int64_t s = 0; s < ph.steps; ++s) {
      ++gstep;
      for (auto& p : params) p.second.zero_grad();
      PreparedKernels kn = model.prepare();
      Tensor loss;
      for (int64_t b = 0; b < cfg.batch; ++b) {
        const DatasetKind kind = ph.mix[(size_t)data.below((int64_t)ph.mix.size())];
        StimulusSequence sample = draw_sample(kind, data.bits(), mc.height, F);
        Tensor rgb = gray_to_rgb(slice_frames(sample.frames, 0, mc.frames_in));
        ModelOutput out = model.forward(rgb, kn);
        Tensor lb = sequence_loss(out.flows, sample.gt[(size_t)mc.mid], w);
        loss = b == 0 ? lb : add(loss, lb);
      }
      loss = mul_const(loss, 1.0 / (double)cfg.batch);
      const double lv = loss[0];
      if (!std::isfinite(lv))
        throw std::runtime_error("train: loss is not finite at step " + std::to_string(gstep) +
                                 " (phase " + std::to_string(pi + 1) + ")");
      backward(loss);
      opt.step(params);
      model.clamp();

      TrainLogRow row;
      row.step = gstep;
      row.phase = (int64_t)pi + 1;
      row.loss = lv;
      if (cfg.eval_every > 0 && gstep % cfg.eval_every == 0) {
        row.eval_epe = evaluate(model, cfg.eval_kind, cfg.eval_n, cfg.seed, F);
        res.final_epe = row.eval_epe;
      }
      res.log.push_back(row);
    }
  }
  res.steps = gstep;
  if (gstep > 0 && !std::isfinite(res.log.back().eval_epe)) {
    const double e = evaluate(model, cfg.eval_kind, cfg.eval_n, cfg.seed, F);
    res.log.back().eval_epe = e;
    res.final_epe = e;
  }
  detail::smoothed_loss_monitor(res);
  if (!cfg.checkpoint_path.empty()) {
    nlohmann::json extra;
    extra["steps"] = gstep;
    extra["final_epe"] = res.final_epe;
    extra["channel"] = channel_mode_name(mc.mode);
    extra["model"] = {{"height", mc.height},
                      {"width", mc.width},
                      {"iterations", mc.iterations},
                      {"units_per_scale", mc.units_per_scale},
                      {"num_scales", mc.num_scales},
                      {"frames_in", mc.frames_in},
                      {"mid", mc.mid},
                      {"hoc_hidden", mc.hoc_hidden},
                      {"proj_dim", mc.proj_dim},
                      {"decoder_width", mc.decoder_width}};
    save_checkpoint(cfg.checkpoint_path, params, extra);
  }
  return res;
}

// -------- second-order ablation: channel x material over the modulation set --------

struct AblationConfig {
  int64_t size = 32;
  int64_t train_steps = 300;
  int64_t batch = 2;
  double lr = 1e-3;
  int64_t bench_per_kind = 6;
  int iterations = 2;
  int64_t units_per_scale = 12;
  int num_scales = 1;
  int64_t frames_in = 11;
  int64_t mid = 5;
  int64_t hoc_hidden = 6;
  int64_t proj_dim = 24;
  int64_t decoder_width = 24;
  double region_radius = 9.0;
};

// region-bearing second-order probe over a static texture; the carrier is
// redrawn until the region stays inside the frame
inline StimulusSequence benchmark_sample(ModulationKind kind, uint64_t seed, int64_t size,
                                         int64_t frames, double radius) {
  Rng rng(seed);
  Tensor image = value_noise_texture(size, size, 9.0, rng.bits(), 3, 0.1, 0.9);
  ModulationParams mp;
  mp.radius = radius;
  std::string last;
  for (int tries = 0; tries < 64; ++tries) {
    CarrierTrace c = markov_carrier(frames, 0.05, rng.bits(), 0.3);
    try {
      return apply_modulation(image, c, kind, rng.bits(), mp);
    } catch (const std::invalid_argument& e) {
      last = e.what();
    }
  }
  throw std::runtime_error("benchmark: no carrier kept the region inside the frame (" + last +
                           ")");
}

struct AblationEntry {
  ChannelMode channel = ChannelMode::first_order;
  MaterialMode material = MaterialMode::diffuse;
  std::vector<double> r;  // one per modulation kind, all_modulation_kinds() order
  double mean_r = 0.0;
};

struct AblationReport {
  std::vector<AblationEntry> entries;

  const AblationEntry& entry(ChannelMode ch, MaterialMode mat) const {
    for (const AblationEntry& e : entries)
      if (e.channel == ch && e.material == mat) return e;
    throw std::invalid_argument("ablation: configuration missing from the report");
  }

  std::string csv() const {
    std::ostringstream os;
    os.precision(10);
    os << "channel,material";
    for (ModulationKind k : all_modulation_kinds()) os << ',' << modulation_name(k);
    os << ",mean_r\n";
    for (const AblationEntry& e : entries) {
      os << channel_mode_name(e.channel) << ','
         << (e.material == MaterialMode::diffuse ? "diffuse" : "nondiffuse");
      for (double v : e.r) os << ',' << v;
      os << ',' << e.mean_r << '\n';
    }
    return os.str();
  }
};

// trains {first_order, dual} x {diffuse, nondiffuse} on the matching proxy
// data, then scores every model against one shared second-order benchmark:
// pooled correlation between predicted flow and the true carrier field
inline AblationReport ablation_suite(uint64_t seed, const AblationConfig& acfg = {}) {
  if (acfg.bench_per_kind < 1)
    throw std::invalid_argument("ablation: need at least one benchmark sample per kind");
  const auto& kinds = all_modulation_kinds();
  std::vector<std::vector<StimulusSequence>> bench(kinds.size());
  Rng brng = Rng(seed).split(0xbe6cUL);
  for (size_t ki = 0; ki < kinds.size(); ++ki)
    for (int64_t j = 0; j < acfg.bench_per_kind; ++j)
      bench[ki].push_back(
          benchmark_sample(kinds[ki], brng.bits(), acfg.size, acfg.frames_in, acfg.region_radius));

  AblationReport rep;
  for (ChannelMode ch : {ChannelMode::first_order, ChannelMode::dual})
    for (MaterialMode mat : {MaterialMode::diffuse, MaterialMode::nondiffuse}) {
      TrainConfig cfg;
      cfg.model.height = cfg.model.width = acfg.size;
      cfg.model.mode = ch;
      cfg.model.iterations = acfg.iterations;
      cfg.model.units_per_scale = acfg.units_per_scale;
      cfg.model.num_scales = acfg.num_scales;
      cfg.model.frames_in = acfg.frames_in;
      cfg.model.mid = acfg.mid;
      cfg.model.hoc_hidden = acfg.hoc_hidden;
      cfg.model.proj_dim = acfg.proj_dim;
      cfg.model.decoder_width = acfg.decoder_width;
      cfg.phases = {{{mat == MaterialMode::diffuse ? DatasetKind::proxy_diffuse
                                                   : DatasetKind::proxy_nondiffuse},
                     acfg.train_steps}};
      cfg.lr = acfg.lr;
      cfg.batch = acfg.batch;
      cfg.seed = seed;
      cfg.eval_every = 0;
      cfg.eval_n = 1;
      cfg.eval_kind = cfg.phases[0].mix[0];
      TwoStageModel model = build_model(cfg);
      train(model, cfg);

      AblationEntry e;
      e.channel = ch;
      e.material = mat;
      PreparedKernels kn = model.prepare();
      const int64_t mid = model.config().mid;
      for (size_t ki = 0; ki < kinds.size(); ++ki) {
        std::vector<double> pred, truth;
        for (const StimulusSequence& s : bench[ki]) {
          ModelOutput out = model.forward(gray_to_rgb(s.frames), kn);
          const Tensor& fl = out.flows.back();
          const Tensor& gt = s.gt[(size_t)mid];
          for (int64_t i = 0; i < fl.size(); ++i) {
            pred.push_back(fl[i]);
            truth.push_back(gt[i]);
          }
        }
        double r = 0.0;
        try {
          r = pearson(pred, truth);
        } catch (const std::runtime_error&) {
          r = 0.0;  // a constant prediction carries no motion signal
        }
        e.r.push_back(r);
        e.mean_r += r;
      }
      e.mean_r /= (double)kinds.size();
      rep.entries.push_back(std::move(e));
    }
  return rep;
}

}  // namespace meflow
