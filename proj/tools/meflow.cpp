#include <cstdint>
#include <cstdio>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "meflow/io/config.hpp"
#include "meflow/io/flow_image.hpp"
#include "meflow/io/image.hpp"
#include "meflow/neuro/analysis.hpp"
#include "meflow/seg/segment.hpp"
#include "meflow/train/trainer.hpp"

namespace {

using Flags = std::map<std::string, std::string>;

const char* kUsage =
    "usage: meflow <command> [flags]\n"
    "\n"
    "commands:\n"
    "  genstim   generate a labeled stimulus sequence (frames + ground-truth flow)\n"
    "  infer     estimate flow for a frame sequence\n"
    "  segment   write a motion segmentation mask for a frame sequence\n"
    "  train     optimize a model on the procedural datasets\n"
    "  eval      endpoint error of a checkpoint, or of two .flo files\n"
    "  analyze   direction-tuning population study of a model\n"
    "  ablate    channel x material study on the second-order benchmark\n"
    "\n"
    "common flags: --seed N, --out PATH, --channel first|dual, --iters N,\n"
    "              --config FILE, --dump-config, --help\n";

const std::set<std::string>& boolean_flags() {
  static const std::set<std::string> b{"--help", "--dump-config", "--no-refine"};
  return b;
}

Flags parse_flags(int argc, char** argv, int from) {
  Flags f;
  for (int i = from; i < argc; ++i) {
    const std::string a = argv[i];
    if (a.rfind("--", 0) != 0) throw std::runtime_error("unexpected argument '" + a + "'");
    if (boolean_flags().count(a)) {
      f[a] = "1";
    } else {
      if (i + 1 >= argc) throw std::runtime_error("flag " + a + " needs a value");
      f[a] = argv[++i];
    }
  }
  return f;
}

std::string flag_str(const Flags& f, const std::string& name, const std::string& fallback) {
  auto it = f.find(name);
  return it == f.end() ? fallback : it->second;
}

std::string flag_required(const Flags& f, const std::string& name) {
  auto it = f.find(name);
  if (it == f.end()) throw std::runtime_error("missing required flag " + name);
  return it->second;
}

int64_t flag_int(const Flags& f, const std::string& name, int64_t fallback) {
  auto it = f.find(name);
  if (it == f.end()) return fallback;
  char* end = nullptr;
  const long long v = std::strtoll(it->second.c_str(), &end, 10);
  if (end == it->second.c_str() || *end != '\0')
    throw std::runtime_error("flag " + name + " holds '" + it->second + "', expected an integer");
  return (int64_t)v;
}

double flag_double(const Flags& f, const std::string& name, double fallback) {
  auto it = f.find(name);
  if (it == f.end()) return fallback;
  char* end = nullptr;
  const double v = std::strtod(it->second.c_str(), &end);
  if (end == it->second.c_str() || *end != '\0')
    throw std::runtime_error("flag " + name + " holds '" + it->second + "', expected a number");
  return v;
}

uint64_t flag_seed(const Flags& f) { return (uint64_t)flag_int(f, "--seed", 0); }

void reject_unknown(const Flags& f, const std::set<std::string>& known) {
  for (const auto& [k, v] : f)
    if (!known.count(k)) throw std::runtime_error("unknown flag " + k + " (try --help)");
}

// ---------------------------------------------------------------- genstim

meflow::StimulusSequence make_stimulus(const std::string& kind, uint64_t seed, int64_t size,
                                       int64_t frames) {
  if (kind == "grating") return meflow::toy_grating_sample(seed, size, frames);
  if (kind == "blobs") return meflow::toy_blob_sample(seed, size, frames);
  if (kind == "gabor" || kind == "plaid") {
    meflow::Rng rng(seed);
    meflow::GratingParams gp;
    gp.size = size;
    gp.frames = frames;
    gp.sfreq = rng.log_uniform(0.03, 0.12);
    gp.theta = rng.uniform(0.0, 2.0 * M_PI);
    gp.speed = std::min(rng.uniform(0.3, 2.0), 0.45 / gp.sfreq);
    gp.envelope = kind == "gabor";
    return kind == "gabor" ? meflow::drifting_gabor(gp) : meflow::plaid(gp);
  }
  if (kind == "proxy_diffuse" || kind == "proxy_nondiffuse")
    return meflow::proxy_material_sample(
        seed, kind == "proxy_diffuse" ? meflow::MaterialMode::diffuse
                                      : meflow::MaterialMode::nondiffuse,
        size, frames);
  const meflow::ModulationKind mk = meflow::parse_modulation(kind);  // throws on junk
  const double radius = size >= 34 ? 13.0 : std::max(3.0, (double)size / 2.0 - 3.0);
  return meflow::benchmark_sample(mk, seed, size, frames, radius);
}

int cmd_genstim(const Flags& f) {
  reject_unknown(f, {"--kind", "--out", "--seed", "--size", "--frames"});
  const std::string kind = flag_str(f, "--kind", "grating");
  const uint64_t seed = flag_seed(f);
  const int64_t size = flag_int(f, "--size", 64);
  const int64_t frames = flag_int(f, "--frames", 16);
  const std::string out = flag_required(f, "--out");

  meflow::StimulusSequence s = make_stimulus(kind, seed, size, frames);
  meflow::write_sequence(out, s.frames);
  for (size_t t = 0; t < s.gt.size(); ++t) {
    char num[8];
    std::snprintf(num, sizeof(num), "%04d", (int)t);
    meflow::write_flo(out + "/gt_" + std::string(num) + ".flo", s.gt[t]);
  }
  std::cout << "wrote " << s.frames.shape()[0] << " " << size << "x" << size << " '" << s.kind
            << "' frames and ground truth to " << out << "\n";
  return 0;
}

// ------------------------------------------------- model assembly helpers

meflow::TwoStageModel::Config config_from_manifest(const nlohmann::json& manifest) {
  if (!manifest.contains("extra") || !manifest["extra"].contains("model"))
    throw std::runtime_error("checkpoint carries no model geometry");
  const auto& extra = manifest["extra"];
  const auto& m = extra["model"];
  meflow::TwoStageModel::Config mc;
  mc.height = m.at("height").get<int64_t>();
  mc.width = m.at("width").get<int64_t>();
  mc.mode = meflow::parse_channel_mode(extra.at("channel").get<std::string>());
  mc.iterations = m.at("iterations").get<int>();
  mc.units_per_scale = m.at("units_per_scale").get<int64_t>();
  mc.num_scales = m.at("num_scales").get<int>();
  mc.frames_in = m.at("frames_in").get<int64_t>();
  mc.mid = m.at("mid").get<int64_t>();
  mc.hoc_hidden = m.at("hoc_hidden").get<int64_t>();
  mc.proj_dim = m.at("proj_dim").get<int64_t>();
  mc.decoder_width = m.at("decoder_width").get<int64_t>();
  return mc;
}

// Model sized to the loaded sequence. Weights come from --checkpoint when
// given (parameters are geometry independent, so a trained model runs at any
// multiple-of-8 frame size); otherwise the model is seeded fresh.
meflow::TwoStageModel sequence_model(const Flags& f, const meflow::Tensor& seq) {
  const int64_t T = seq.shape()[0], H = seq.shape()[1], W = seq.shape()[2];
  if (H % 8 || W % 8)
    throw std::runtime_error("frame size " + std::to_string(W) + "x" + std::to_string(H) +
                             " is not a multiple of 8");
  meflow::TwoStageModel::Config mc;
  int64_t lookahead = 0;
  const std::string ckpt = flag_str(f, "--checkpoint", "");
  if (!ckpt.empty()) {
    mc = config_from_manifest(meflow::read_checkpoint_manifest(ckpt));
    lookahead = mc.frames_in - 1 - mc.mid;
    if (f.count("--channel") && meflow::parse_channel_mode(f.at("--channel")) != mc.mode)
      throw std::runtime_error("checkpoint was trained with the " +
                               meflow::channel_mode_name(mc.mode) + " channel");
    mc.iterations = (int)flag_int(f, "--iters", mc.iterations);
  } else {
    mc.mode = meflow::parse_channel_mode(flag_str(f, "--channel", "dual"));
    mc.iterations = (int)flag_int(f, "--iters", 4);
    mc.units_per_scale = flag_int(f, "--units", 32);
    mc.num_scales = (int)flag_int(f, "--scales", 8);
    mc.hoc_hidden = flag_int(f, "--hoc-hidden", 8);
    mc.proj_dim = flag_int(f, "--proj", 64);
    mc.decoder_width = flag_int(f, "--decoder", 64);
  }
  mc.height = H;
  mc.width = W;
  mc.frames_in = T;
  mc.mid = T - 1 - lookahead;
  if (mc.mid < 5)
    throw std::runtime_error("sequence too short: need at least " + std::to_string(lookahead + 6) +
                             " frames, got " + std::to_string(T));
  meflow::Rng rng(flag_seed(f));
  meflow::TwoStageModel model(mc, rng);
  if (!ckpt.empty()) {
    auto params = model.params();
    meflow::load_checkpoint(ckpt, params);
  }
  return model;
}

const std::set<std::string>& sequence_model_flags() {
  static const std::set<std::string> s{"--frames",     "--out",  "--seed",    "--channel",
                                       "--iters",      "--checkpoint", "--units", "--scales",
                                       "--hoc-hidden", "--proj", "--decoder"};
  return s;
}

// ---------------------------------------------------------------- infer

int cmd_infer(const Flags& f) {
  reject_unknown(f, sequence_model_flags());
  const std::string dir = flag_required(f, "--frames");
  const std::string out = flag_required(f, "--out");
  meflow::Tensor seq = meflow::load_sequence(dir);
  meflow::TwoStageModel model = sequence_model(f, seq);
  meflow::ModelOutput res = model.forward(seq);
  const meflow::Tensor& flow = res.flows.back();
  meflow::write_flo(out + ".flo", flow);
  meflow::write_ppm(out + ".ppm", meflow::flow_to_image(flow));
  std::cout << "wrote " << out << ".flo and " << out << ".ppm ("
            << meflow::channel_mode_name(model.config().mode) << " channel, "
            << model.config().iterations << " iterations)\n";
  return 0;
}

// --------------------------------------------------------------- segment

int cmd_segment(const Flags& f) {
  std::set<std::string> known = sequence_model_flags();
  known.insert("--no-refine");
  reject_unknown(f, known);
  const std::string dir = flag_required(f, "--frames");
  const std::string out = flag_required(f, "--out");
  meflow::Tensor seq = meflow::load_sequence(dir);
  meflow::TwoStageModel model = sequence_model(f, seq);
  meflow::ModelOutput res = model.forward(seq);

  const int64_t H = seq.shape()[1], W = seq.shape()[2];
  const int64_t gh = H / 8, gw = W / 8;
  meflow::SegmentationMask mask = meflow::segment(res.adjacency, gh, gw, !f.count("--no-refine"));

  meflow::Tensor img = meflow::Tensor::zeros({H, W});
  for (int64_t y = 0; y < H; ++y)
    for (int64_t x = 0; x < W; ++x)
      img.data()[y * W + x] = mask.fg[(size_t)((y / 8) * gw + x / 8)] ? 1.0 : 0.0;
  meflow::write_pgm(out, img);
  std::cout << "wrote " << out << " (" << gw << "x" << gh << " grid upsampled to " << W << "x"
            << H << ")\n";
  return 0;
}

// ----------------------------------------------------------------- train

int cmd_train(const Flags& f) {
  reject_unknown(f, {"--config", "--seed", "--iters", "--channel", "--steps", "--warm", "--size",
                     "--lr", "--batch", "--dataset", "--material", "--out", "--log",
                     "--dump-config"});
  std::map<std::string, std::string> file;
  if (f.count("--config")) file = meflow::parse_config_file(f.at("--config"));

  auto pick_str = [&](const std::string& flag, const std::string& key,
                      const std::string& fallback) {
    return flag_str(f, flag, meflow::config_str(file, key, fallback));
  };
  auto pick_int = [&](const std::string& flag, const std::string& key, int64_t fallback) {
    return flag_int(f, flag, meflow::config_int(file, key, fallback));
  };
  auto pick_double = [&](const std::string& flag, const std::string& key, double fallback) {
    return flag_double(f, flag, meflow::config_double(file, key, fallback));
  };

  meflow::TrainConfig cfg;
  const int64_t size = pick_int("--size", "model.size", 64);
  cfg.model.height = cfg.model.width = size;
  cfg.model.mode = meflow::parse_channel_mode(pick_str("--channel", "model.channel", "dual"));
  cfg.model.iterations = (int)pick_int("--iters", "model.iterations", 4);
  cfg.model.units_per_scale = meflow::config_int(file, "model.units", 32);
  cfg.model.num_scales = (int)meflow::config_int(file, "model.scales", 8);
  cfg.model.frames_in = meflow::config_int(file, "model.frames", 15);
  cfg.model.mid = meflow::config_int(file, "model.mid", 7);
  cfg.model.hoc_hidden = meflow::config_int(file, "model.hoc_hidden", 8);
  cfg.model.proj_dim = meflow::config_int(file, "model.proj", 64);
  cfg.model.decoder_width = meflow::config_int(file, "model.decoder", 64);

  cfg.seed = (uint64_t)pick_int("--seed", "train.seed", 0);
  cfg.lr = pick_double("--lr", "train.lr", 2e-4);
  cfg.batch = pick_int("--batch", "train.batch", 4);
  cfg.loss_gamma = meflow::config_double(file, "train.gamma", 0.8);
  cfg.eval_every = meflow::config_int(file, "train.eval_every", 100);
  cfg.eval_n = meflow::config_int(file, "train.eval_n", 8);
  cfg.eval_kind =
      meflow::parse_dataset(meflow::config_str(file, "train.eval_kind", "toy_gratings"));
  cfg.stim_frames = meflow::config_int(file, "train.stim_frames", 0);
  cfg.checkpoint_path = pick_str("--out", "train.out", "model.ckpt");
  const std::string log_path = pick_str("--log", "train.log", "train_log.csv");

  const int64_t steps = pick_int("--steps", "train.steps", 1600);
  const int64_t warm = pick_int("--warm", "train.warm", 400);
  const std::string dataset = pick_str("--dataset", "train.dataset", "");
  const std::string material_s = pick_str("--material", "train.material", "nondiffuse");
  const meflow::MaterialMode material = meflow::parse_material(material_s);
  if (!dataset.empty())
    cfg.phases = {{{meflow::parse_dataset(dataset)}, steps}};
  else
    cfg.phases = meflow::curriculum_phases(warm, steps, material);

  if (f.count("--dump-config")) {
    std::map<std::string, std::string> eff;
    eff["model.size"] = std::to_string(size);
    eff["model.channel"] = meflow::channel_mode_name(cfg.model.mode);
    eff["model.iterations"] = std::to_string(cfg.model.iterations);
    eff["model.units"] = std::to_string(cfg.model.units_per_scale);
    eff["model.scales"] = std::to_string(cfg.model.num_scales);
    eff["model.frames"] = std::to_string(cfg.model.frames_in);
    eff["model.mid"] = std::to_string(cfg.model.mid);
    eff["model.hoc_hidden"] = std::to_string(cfg.model.hoc_hidden);
    eff["model.proj"] = std::to_string(cfg.model.proj_dim);
    eff["model.decoder"] = std::to_string(cfg.model.decoder_width);
    eff["train.seed"] = std::to_string(cfg.seed);
    eff["train.lr"] = std::to_string(cfg.lr);
    eff["train.batch"] = std::to_string(cfg.batch);
    eff["train.gamma"] = std::to_string(cfg.loss_gamma);
    eff["train.eval_every"] = std::to_string(cfg.eval_every);
    eff["train.eval_n"] = std::to_string(cfg.eval_n);
    eff["train.eval_kind"] = meflow::dataset_name(cfg.eval_kind);
    eff["train.steps"] = std::to_string(steps);
    eff["train.material"] = material_s;
    if (!dataset.empty())
      eff["train.dataset"] = dataset;
    else
      eff["train.warm"] = std::to_string(warm);
    eff["train.out"] = cfg.checkpoint_path;
    eff["train.log"] = log_path;
    std::cout << meflow::dump_config(eff);
    return 0;
  }

  meflow::validate_train_config(cfg);
  meflow::TwoStageModel model = meflow::build_model(cfg);
  meflow::TrainResult res = meflow::train(model, cfg);
  meflow::detail::write_file_atomic(log_path, res.csv());
  for (const std::string& w : res.warnings) std::cout << "warning: " << w << "\n";
  std::cout << "trained " << res.steps << " steps, held-out epe " << res.final_epe
            << "; checkpoint " << cfg.checkpoint_path << ", log " << log_path << "\n";
  return 0;
}

// ------------------------------------------------------------------ eval

// Rebuild a trained model exactly as its checkpoint records it.
meflow::TwoStageModel checkpoint_model(const std::string& path, uint64_t seed) {
  meflow::TwoStageModel::Config mc = config_from_manifest(meflow::read_checkpoint_manifest(path));
  meflow::Rng rng(seed);
  meflow::TwoStageModel model(mc, rng);
  auto params = model.params();
  meflow::load_checkpoint(path, params);
  return model;
}

int cmd_eval(const Flags& f) {
  reject_unknown(f, {"--flow", "--gt", "--checkpoint", "--kind", "--n", "--seed"});
  if (f.count("--flow") || f.count("--gt")) {
    meflow::Tensor flow = meflow::read_flo(flag_required(f, "--flow"));
    meflow::Tensor gt = meflow::read_flo(flag_required(f, "--gt"));
    std::cout << "epe " << meflow::epe(flow, gt) << "\n";
    return 0;
  }
  meflow::TwoStageModel model = checkpoint_model(flag_required(f, "--checkpoint"), 0);
  const meflow::DatasetKind kind = meflow::parse_dataset(flag_str(f, "--kind", "toy_gratings"));
  const int64_t n = flag_int(f, "--n", 16);
  const double e = meflow::evaluate(model, kind, n, flag_seed(f));
  std::cout << "epe " << e << " (" << meflow::dataset_name(kind) << ", n=" << n << ")\n";
  return 0;
}

// --------------------------------------------------------------- analyze

int cmd_analyze(const Flags& f) {
  reject_unknown(f, {"--checkpoint", "--out", "--seed", "--stage", "--iteration", "--size",
                     "--grid", "--dirs", "--channel", "--iters", "--units", "--scales"});
  const std::string out = flag_required(f, "--out");
  const std::string ckpt = flag_str(f, "--checkpoint", "");

  std::optional<meflow::TwoStageModel> model;
  if (!ckpt.empty()) {
    meflow::TwoStageModel::Config mc =
        config_from_manifest(meflow::read_checkpoint_manifest(ckpt));
    if (f.count("--size")) mc.height = mc.width = flag_int(f, "--size", mc.height);
    meflow::Rng rng(flag_seed(f));
    model.emplace(mc, rng);
    auto params = model->params();
    meflow::load_checkpoint(ckpt, params);
  } else {
    meflow::TwoStageModel::Config mc;
    mc.height = mc.width = flag_int(f, "--size", 32);
    mc.mode = meflow::parse_channel_mode(flag_str(f, "--channel", "dual"));
    mc.iterations = (int)flag_int(f, "--iters", 4);
    mc.units_per_scale = flag_int(f, "--units", 32);
    mc.num_scales = (int)flag_int(f, "--scales", 8);
    meflow::Rng rng(flag_seed(f));
    model.emplace(mc, rng);
  }

  meflow::ResponseProbe probe;
  probe.site = flag_int(f, "--stage", 2) == 1 ? meflow::ResponseSite::stage1
                                              : meflow::ResponseSite::stage2;
  probe.iteration = (int)flag_int(f, "--iteration", model->config().iterations);
  meflow::TuningProtocol proto;
  proto.directions = (int)flag_int(f, "--dirs", 12);
  proto.grid = (int)flag_int(f, "--grid", 8);

  std::vector<meflow::UnitAnalysis> pop = meflow::analyze_population(*model, probe, proto);
  meflow::detail::write_file_atomic(out, meflow::analysis_csv(pop));
  std::cout << "analyzed " << pop.size() << " units; pattern fraction "
            << meflow::pattern_fraction(pop) << "; wrote " << out << "\n";
  return 0;
}

// ---------------------------------------------------------------- ablate

int cmd_ablate(const Flags& f) {
  reject_unknown(f,
                 {"--seed", "--out", "--size", "--steps", "--bench", "--batch", "--lr",
                  "--iters"});
  meflow::AblationConfig acfg;
  acfg.size = flag_int(f, "--size", acfg.size);
  acfg.train_steps = flag_int(f, "--steps", acfg.train_steps);
  acfg.bench_per_kind = flag_int(f, "--bench", acfg.bench_per_kind);
  acfg.batch = flag_int(f, "--batch", acfg.batch);
  acfg.lr = flag_double(f, "--lr", acfg.lr);
  acfg.iterations = (int)flag_int(f, "--iters", acfg.iterations);
  const std::string out = flag_str(f, "--out", "ablation.csv");

  meflow::AblationReport rep = meflow::ablation_suite(flag_seed(f), acfg);
  meflow::detail::write_file_atomic(out, rep.csv());
  for (const auto& e : rep.entries)
    std::cout << meflow::channel_mode_name(e.channel) << " + "
              << (e.material == meflow::MaterialMode::diffuse ? "diffuse" : "nondiffuse")
              << ": mean r " << e.mean_r << "\n";
  std::cout << "wrote " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    if (argc < 2) {
      std::cerr << "error: no command given\n" << kUsage;
      return 2;
    }
    const std::string cmd = argv[1];
    if (cmd == "--help" || cmd == "help") {
      std::cout << kUsage;
      return 0;
    }
    Flags f = parse_flags(argc, argv, 2);
    if (f.count("--help")) {
      std::cout << kUsage;
      return 0;
    }
    if (cmd == "genstim") return cmd_genstim(f);
    if (cmd == "infer") return cmd_infer(f);
    if (cmd == "segment") return cmd_segment(f);
    if (cmd == "train") return cmd_train(f);
    if (cmd == "eval") return cmd_eval(f);
    if (cmd == "analyze") return cmd_analyze(f);
    if (cmd == "ablate") return cmd_ablate(f);
    throw std::runtime_error("unknown command '" + cmd + "' (try --help)");
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
