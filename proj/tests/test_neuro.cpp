#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>
#include <sstream>
#include <vector>

#include "meflow/neuro/analysis.hpp"
#include "oracles.hpp"

using meflow::Tensor;

namespace {

meflow::TwoStageModel::Config tiny_config() {
  meflow::TwoStageModel::Config c;
  c.height = c.width = 16;
  c.mode = meflow::ChannelMode::first_order;
  c.iterations = 1;
  c.units_per_scale = 8;
  c.num_scales = 1;
  c.frames_in = 11;
  c.mid = 5;
  c.proj_dim = 8;
  c.decoder_width = 8;
  return c;
}

Tensor grating_rgb(int64_t size, int64_t frames, double fs, double speed, double theta) {
  meflow::GratingParams p;
  p.size = size;
  p.frames = frames;
  p.sfreq = fs;
  p.speed = speed;
  p.theta = theta;
  p.envelope = false;
  return meflow::gray_to_rgb(meflow::drifting_gabor(p).frames);
}

meflow::TuningCurve bump_curve(double center, double kappa) {
  meflow::TuningCurve c;
  c.angles = meflow::protocol_angles(12);
  for (double a : c.angles) c.responses.push_back(std::exp(kappa * std::cos(a - center)));
  return c;
}

}  // namespace

TEST_CASE("protocol angles cover the direction circle") {
  auto a = meflow::protocol_angles(12);
  REQUIRE(a.size() == 12);
  for (size_t i = 0; i < 12; ++i) {
    CHECK(a[i] > 0.0);
    CHECK(a[i] <= 2.0 * M_PI + 1e-15);
    if (i) CHECK(a[i] - a[i - 1] == Catch::Approx(M_PI / 6.0).margin(1e-12));
  }
  CHECK(a.back() == Catch::Approx(2.0 * M_PI).margin(1e-15));
  CHECK_THROWS_AS(meflow::protocol_angles(2), std::invalid_argument);
}

TEST_CASE("log frequency axis") {
  auto f = meflow::log_frequency_axis(8, 0.02, 0.24);
  REQUIRE(f.size() == 8);
  CHECK(f.front() == Catch::Approx(0.02).margin(1e-15));
  CHECK(f.back() == Catch::Approx(0.24).margin(1e-15));
  for (size_t k = 2; k < 8; ++k)
    CHECK(f[k] / f[k - 1] == Catch::Approx(f[1] / f[0]).margin(1e-12));
  CHECK_THROWS_AS(meflow::log_frequency_axis(8, 0.0, 0.24), std::invalid_argument);
  CHECK_THROWS_AS(meflow::log_frequency_axis(8, 0.1, 0.05), std::invalid_argument);
}

TEST_CASE("unit responses are rectified spatial means") {
  meflow::Rng rng(11);
  meflow::TwoStageModel model(tiny_config(), rng);
  Tensor rgb = grating_rgb(16, 11, 0.1, 1.0, 0.5);
  auto out = model.forward(rgb);

  meflow::ResponseProbe p1;
  auto r1 = meflow::unit_responses(out, p1);
  REQUIRE(r1.size() == 8);
  const int64_t N = out.e1.shape()[0], C = out.e1.shape()[1];
  for (int64_t c = 0; c < C; ++c) {
    double m = 0;
    for (int64_t n = 0; n < N; ++n) m += std::max(0.0, out.e1[n * C + c]);
    CHECK(r1[(size_t)c] == m / (double)N);
    CHECK(r1[(size_t)c] >= 0.0);
  }

  meflow::ResponseProbe p2;
  p2.site = meflow::ResponseSite::stage2;
  p2.iteration = 1;
  auto r2 = meflow::unit_responses(out, p2);
  REQUIRE(r2.size() == 8);
  for (double v : r2) CHECK(v >= 0.0);

  auto again = meflow::unit_responses(model, rgb, p1);
  for (size_t i = 0; i < 8; ++i) CHECK(again[i] == r1[i]);

  p2.iteration = 5;
  CHECK_THROWS_WITH(meflow::unit_responses(out, p2),
                    Catch::Matchers::ContainsSubstring("outside the recorded range"));
  p2.iteration = -1;
  CHECK_THROWS_AS(meflow::unit_responses(out, p2), std::invalid_argument);
}

TEST_CASE("uniform black input reads out the offset baseline") {
  meflow::Rng rng(5);
  meflow::TwoStageModel model(tiny_config(), rng);
  auto& sc = model.bank().scale(0);
  for (int64_t u = 0; u < 8; ++u) sc.offset.data()[u] = 0.01 * (double)(u + 1);

  Tensor black = Tensor::zeros({11, 16, 16, 3});
  auto r = meflow::unit_responses(model, black, meflow::ResponseProbe{});

  const double gain = model.bank().gain()[0], floor = model.bank().norm_floor()[0];
  double denom = floor;
  for (int64_t u = 0; u < 8; ++u) denom += 2.0 * sc.offset[u] * sc.offset[u];
  for (int64_t u = 0; u < 8; ++u) {
    const double expect = gain * 2.0 * sc.offset[u] * sc.offset[u] / denom;
    REQUIRE(r[(size_t)u] == Catch::Approx(expect).margin(1e-9));
  }
}

TEST_CASE("preferred frequency recovers a planted unit") {
  CHECK(meflow::TuningProtocol{}.grid == 8);
  CHECK(meflow::TuningProtocol{}.directions == 12);

  meflow::Rng rng(21);
  meflow::TwoStageModel model(tiny_config(), rng);
  auto axis = meflow::log_frequency_axis(8, 0.02, 0.24);
  auto& sc = model.bank().scale(0);
  const int64_t u = 3;
  sc.sfreq.data()[u] = axis[4];
  sc.tfreq.data()[u] = axis[7];
  sc.theta.data()[u] = 0.0;
  sc.sigma.data()[u] = 4.0;
  sc.aspect.data()[u] = 1.0;
  sc.decay.data()[u] = 3.0;
  sc.offset.data()[u] = 0.0;
  // a second plant at a temporal frequency the six-frame window cannot
  // separate from its grid neighbors
  const int64_t v = 5;
  sc.sfreq.data()[v] = axis[4];
  sc.tfreq.data()[v] = axis[4];
  sc.theta.data()[v] = 0.0;
  sc.sigma.data()[v] = 4.0;
  sc.aspect.data()[v] = 1.0;
  sc.decay.data()[v] = 3.0;
  sc.offset.data()[v] = 0.0;
  model.bank().norm_floor().data()[0] = 50.0;  // near-linear readout

  auto g = meflow::grating_grid_study(model, meflow::ResponseProbe{});
  REQUIRE(g.studies.size() == 64);
  for (const auto& st : g.studies) REQUIRE(st.angles.size() == 12);

  auto pf = meflow::preferred_frequency(g, u);
  CHECK(pf.ifs == 4);
  CHECK(pf.ift == 7);
  CHECK(pf.fs == Catch::Approx(axis[4]).margin(1e-15));
  CHECK(pf.ft == Catch::Approx(axis[7]).margin(1e-15));
  CHECK_FALSE(pf.degenerate);

  // spatial recovery stays exact below the temporal resolution limit; the
  // temporal index may slip one bin
  auto pv = meflow::preferred_frequency(g, v);
  CHECK(pv.ifs == 4);
  CHECK(std::abs(pv.ift - 4) <= 1);

  // uniform positive rescaling leaves the argmax alone
  meflow::GridStudy scaled = g;
  for (auto& st : scaled.studies)
    for (auto& v : st.responses) v *= 3.7;
  auto pf2 = meflow::preferred_frequency(scaled, u);
  CHECK(pf2.ifs == pf.ifs);
  CHECK(pf2.ift == pf.ift);
  CHECK(pf2.curve_std == Catch::Approx(3.7 * pf.curve_std).epsilon(1e-12));
}

TEST_CASE("preferred frequency tie-break and degenerate flag") {
  meflow::GridStudy g;
  g.grid = 2;
  g.fs = {0.05, 0.1};
  g.ft = {0.05, 0.1};
  meflow::DirectionStudy st;
  st.angles = meflow::protocol_angles(12);
  st.channels = 1;
  st.kind = "grating";
  st.responses.assign(12, 1.0);
  for (int i = 0; i < 4; ++i) g.studies.push_back(st);
  auto flat = meflow::preferred_frequency(g, 0);
  CHECK(flat.degenerate);

  // equal positive stds tie toward the lowest temporal then spatial index
  for (auto& s : g.studies) s.responses[0] = 2.0;
  auto tied = meflow::preferred_frequency(g, 0);
  CHECK(tied.ift == 0);
  CHECK(tied.ifs == 0);
  CHECK_FALSE(tied.degenerate);
}

TEST_CASE("component prediction shifts the curve thirty degrees") {
  auto C = bump_curve(meflow::protocol_angles(12)[3], 2.0);
  auto comp = meflow::component_prediction(C.responses);
  REQUIRE(comp.size() == 12);
  for (int d = 0; d < 12; ++d) {
    const double expect =
        0.5 * (C.responses[(size_t)((d + 1) % 12)] + C.responses[(size_t)((d + 11) % 12)]);
    REQUIRE(comp[(size_t)d] == Catch::Approx(expect).margin(1e-15));
  }
}

TEST_CASE("pattern component partial correlations") {
  auto pi = meflow::pattern_component_from_correlations(0.9, 0.2, 0.3);
  CHECK_FALSE(pi.saturated);
  CHECK(pi.r_pattern == Catch::Approx(oracle::partial_corr(0.9, 0.2, 0.3)).margin(1e-12));
  CHECK(pi.r_component == Catch::Approx(oracle::partial_corr(0.2, 0.9, 0.3)).margin(1e-12));

  // swapping the two predictions swaps the outputs
  auto sw = meflow::pattern_component_from_correlations(0.2, 0.9, 0.3);
  CHECK(sw.r_pattern == Catch::Approx(pi.r_component).margin(1e-15));
  CHECK(sw.r_component == Catch::Approx(pi.r_pattern).margin(1e-15));

  auto C = bump_curve(meflow::protocol_angles(12)[3], 2.0);
  auto self = meflow::pattern_component_correlation(C, C);
  CHECK_FALSE(self.saturated);
  CHECK(self.r_pattern > self.r_component);

  meflow::TuningCurve comp = C;
  comp.responses = meflow::component_prediction(C.responses);
  auto sat = meflow::pattern_component_correlation(C, comp);
  CHECK(sat.saturated);  // r_c pins to one

  meflow::TuningCurve flat = C;
  flat.responses.assign(12, 0.5);  // exactly representable, so variance is exactly zero
  CHECK(meflow::pattern_component_correlation(C, flat).saturated);

  meflow::TuningCurve shorter = C;
  shorter.responses.pop_back();
  shorter.angles.pop_back();
  CHECK_THROWS_AS(meflow::pattern_component_correlation(C, shorter), std::invalid_argument);
}

TEST_CASE("cell classification rule") {
  CHECK(meflow::classify_cell(0.9, 0.0).label == meflow::CellClass::pattern);
  CHECK(meflow::classify_cell(0.0, 0.9).label == meflow::CellClass::component);
  CHECK(meflow::classify_cell(0.3, 0.3).label == meflow::CellClass::unclassified);
  CHECK(meflow::classify_cell(std::tanh((1.28 - 0.01) / 3.0), 0.0).label ==
        meflow::CellClass::unclassified);
  CHECK(meflow::classify_cell(std::tanh((1.28 + 0.01) / 3.0), 0.0).label ==
        meflow::CellClass::pattern);
  CHECK(meflow::classify_cell(1.0, 0.0).label == meflow::CellClass::pattern);
  CHECK_THROWS_AS(meflow::classify_cell(std::nan(""), 0.1), std::invalid_argument);
  CHECK(meflow::cell_class_name(meflow::CellClass::pattern) == "pattern");
}

TEST_CASE("circular variance selectivity") {
  meflow::TuningCurve uniform;
  uniform.angles = meflow::protocol_angles(12);
  uniform.responses.assign(12, 0.8);
  CHECK(meflow::circular_variance_selectivity(uniform) < 1e-12);

  meflow::TuningCurve single = uniform;
  single.responses.assign(12, 0.0);
  single.responses[5] = 2.3;
  CHECK(meflow::circular_variance_selectivity(single) == Catch::Approx(1.0).margin(1e-12));

  // equal mass at theta and theta + pi/2: doubled phasors cancel
  meflow::TuningCurve ortho = uniform;
  ortho.responses.assign(12, 0.0);
  ortho.responses[0] = 1.0;
  ortho.responses[3] = 1.0;
  CHECK(meflow::circular_variance_selectivity(ortho) < 1e-12);
  CHECK(meflow::circular_variance_selectivity(ortho, true) ==
        Catch::Approx(std::sqrt(0.5)).margin(1e-12));

  meflow::TuningCurve zero = uniform;
  zero.responses.assign(12, 0.0);
  CHECK_THROWS_AS(meflow::circular_variance_selectivity(zero), std::invalid_argument);
  meflow::TuningCurve neg = uniform;
  neg.responses[2] = -0.1;
  CHECK_THROWS_AS(meflow::circular_variance_selectivity(neg), std::invalid_argument);
}

TEST_CASE("plaid study and end to end classification") {
  auto C = bump_curve(meflow::protocol_angles(12)[5], 2.0);
  meflow::Rng rng(99);

  meflow::TuningCurve like_pattern = C;
  for (auto& v : like_pattern.responses) v += 0.01 * rng.uniform();
  auto a = meflow::pattern_component_correlation(C, like_pattern);
  REQUIRE_FALSE(a.saturated);
  CHECK(meflow::classify_cell(a.r_pattern, a.r_component).label == meflow::CellClass::pattern);

  meflow::TuningCurve like_component = C;
  like_component.responses = meflow::component_prediction(C.responses);
  for (auto& v : like_component.responses) v += 0.01 * rng.uniform();
  auto b = meflow::pattern_component_correlation(C, like_component);
  REQUIRE_FALSE(b.saturated);
  CHECK(meflow::classify_cell(b.r_pattern, b.r_component).label == meflow::CellClass::component);
}

TEST_CASE("population analysis exports csv") {
  meflow::Rng rng(31);
  meflow::TwoStageModel model(tiny_config(), rng);
  meflow::TuningProtocol pp;
  pp.grid = 2;  // keep the sweep small; the full grid is covered above
  auto pop = meflow::analyze_population(model, meflow::ResponseProbe{}, pp);
  REQUIRE(pop.size() == 8);

  const double frac = meflow::pattern_fraction(pop);
  CHECK(frac >= 0.0);
  CHECK(frac <= 1.0);
  CHECK_THROWS_AS(meflow::pattern_fraction({}), std::invalid_argument);

  const std::string csv = meflow::analysis_csv(pop);
  std::istringstream is(csv);
  std::string line;
  REQUIRE(std::getline(is, line));
  CHECK(line == "unit,fs,ft,r_pattern,r_component,label,o_ori");
  int rows = 0;
  std::set<std::string> labels{"component", "pattern", "unclassified"};
  while (std::getline(is, line)) {
    REQUIRE(std::count(line.begin(), line.end(), ',') == 6);
    const size_t a = line.rfind(',');
    const size_t b = line.rfind(',', a - 1);
    CHECK(labels.count(line.substr(b + 1, a - b - 1)) == 1);
    ++rows;
  }
  CHECK(rows == 8);

  auto pop2 = meflow::analyze_population(model, meflow::ResponseProbe{}, pp);
  CHECK(meflow::analysis_csv(pop2) == csv);

  meflow::ResponseProbe deep;
  deep.site = meflow::ResponseSite::stage2;
  deep.iteration = 1;
  auto pop3 = meflow::analyze_population(model, deep, pp);
  REQUIRE(pop3.size() == 8);
  for (const auto& u : pop3) CHECK(u.o_ori >= 0.0);
}
