#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>
#include <set>

#include "meflow/core/random.hpp"
#include "meflow/model/model.hpp"
#include "oracles.hpp"

using namespace meflow;

namespace {

Tensor randmat(Rng& rng, int64_t R, int64_t C, bool rg = false) {
  Tensor t = Tensor::zeros({R, C}, rg);
  for (int64_t i = 0; i < t.size(); ++i) t.data()[i] = rng.normal();
  return t;
}

void set_identity_projection(MotionGraph& g, int64_t c) {
  Tensor phi = g.projection();
  REQUIRE(phi.shape() == Shape{c, c});
  for (int64_t i = 0; i < c; ++i)
    for (int64_t j = 0; j < c; ++j) phi.data()[i * c + j] = i == j ? 1.0 : 0.0;
}

// scalar reference: cosine similarities (zero rows give 0), elementwise
// exp(s*sim), symmetric degree normalization
std::vector<double> adjacency_oracle(const std::vector<std::vector<double>>& rows, double s) {
  const size_t N = rows.size();
  std::vector<std::vector<double>> unit(N);
  for (size_t i = 0; i < N; ++i) {
    double n = 0;
    for (double v : rows[i]) n += v * v;
    n = std::sqrt(n);
    for (double v : rows[i]) unit[i].push_back(n < 1e-30 ? 0.0 : v / n);
  }
  std::vector<double> w(N * N);
  for (size_t i = 0; i < N; ++i)
    for (size_t j = 0; j < N; ++j) {
      double c = 0;
      for (size_t k = 0; k < rows[i].size(); ++k) c += unit[i][k] * unit[j][k];
      w[i * N + j] = std::exp(s * c);
    }
  std::vector<double> deg(N, 0.0);
  for (size_t i = 0; i < N; ++i)
    for (size_t j = 0; j < N; ++j) deg[i] += w[i * N + j];
  std::vector<double> a(N * N);
  for (size_t i = 0; i < N; ++i)
    for (size_t j = 0; j < N; ++j) a[i * N + j] = w[i * N + j] / std::sqrt(deg[i] * deg[j]);
  return a;
}

}  // namespace

TEST_CASE("adjacency of identical features is uniform and averages features") {
  Rng rng(31);
  MotionGraph g(6, 3, rng);
  const int64_t N = 5;
  Tensor e = Tensor::zeros({N, 6});
  for (int64_t j = 0; j < 6; ++j) {
    const double v = rng.normal();
    for (int64_t i = 0; i < N; ++i) e.data()[i * 6 + j] = v;
  }
  auto res = g.build(e);
  REQUIRE(res.A.shape() == Shape{N, N});
  REQUIRE(res.zero_norm_nodes == 0);
  for (int64_t i = 0; i < N * N; ++i) REQUIRE(res.A[i] == Catch::Approx(1.0 / (double)N).margin(1e-12));
  Tensor prop = matmul(res.A, e);
  for (int64_t i = 0; i < prop.size(); ++i)
    REQUIRE(prop[i] == Catch::Approx(e[i % (6 * N)]).margin(1e-12));
}

TEST_CASE("adjacency matches a scalar oracle on orthogonal and oblique features") {
  Rng rng(32);
  MotionGraph g(3, 3, rng);
  set_identity_projection(g, 3);
  g.temperature().data()[0] = 1.7;
  std::vector<std::vector<double>> rows = {{1, 0, 0}, {0, 2, 0}, {3, 4, 0}};
  Tensor e = Tensor::zeros({3, 3});
  for (int64_t i = 0; i < 3; ++i)
    for (int64_t j = 0; j < 3; ++j) e.data()[i * 3 + j] = rows[(size_t)i][(size_t)j];
  auto res = g.build(e);
  auto want = adjacency_oracle(rows, 1.7);
  for (int64_t i = 0; i < 9; ++i) REQUIRE(res.A[i] == Catch::Approx(want[(size_t)i]).margin(1e-12));
}

TEST_CASE("adjacency is symmetric with a positive semidefinite normalized laplacian") {
  Rng rng(33);
  MotionGraph g(8, 4, rng);
  Tensor e = randmat(rng, 16, 8);
  auto res = g.build(e);
  const int64_t N = 16;
  double asym = 0;
  for (int64_t i = 0; i < N; ++i)
    for (int64_t j = 0; j < N; ++j)
      asym = std::max(asym, std::abs(res.A[i * N + j] - res.A[j * N + i]));
  REQUIRE(asym < 1e-9);
  for (int64_t i = 0; i < N * N; ++i) REQUIRE(res.A[i] > 0.0);

  Eigen::MatrixXd L = Eigen::MatrixXd::Identity(N, N);
  Eigen::VectorXd deg = Eigen::VectorXd::Zero(N);
  for (int64_t i = 0; i < N; ++i)
    for (int64_t j = 0; j < N; ++j) deg(i) += res.A[i * N + j];
  for (int64_t i = 0; i < N; ++i)
    for (int64_t j = 0; j < N; ++j)
      L(i, j) -= res.A[i * N + j] / std::sqrt(deg(i) * deg(j));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(L);
  REQUIRE(es.eigenvalues().minCoeff() >= -1e-8);
}

TEST_CASE("zero-norm nodes are reported and carry zero similarity") {
  Rng rng(34);
  MotionGraph g(3, 3, rng);
  set_identity_projection(g, 3);
  g.temperature().data()[0] = 2.0;
  std::vector<std::vector<double>> rows = {{1, 1, 0}, {0, 0, 0}, {0, 5, 2}, {1, 0, 1}};
  Tensor e = Tensor::zeros({4, 3});
  for (size_t i = 0; i < 4; ++i)
    for (size_t j = 0; j < 3; ++j) e.data()[(int64_t)(i * 3 + j)] = rows[i][j];
  auto res = g.build(e);
  REQUIRE(res.zero_norm_nodes == 1);
  auto want = adjacency_oracle(rows, 2.0);
  for (int64_t i = 0; i < 16; ++i) REQUIRE(res.A[i] == Catch::Approx(want[(size_t)i]).margin(1e-12));
}

TEST_CASE("graphs beyond the node limit are rejected") {
  Rng rng(35);
  MotionGraph g(1, 1, rng);
  REQUIRE_THROWS_WITH(g.build(Tensor::zeros({4097, 1})),
                      Catch::Matchers::ContainsSubstring("4096") &&
                          Catch::Matchers::ContainsSubstring("downscale"));
  REQUIRE_THROWS_WITH(g.build(Tensor::zeros({4, 2})),
                      Catch::Matchers::ContainsSubstring("expected"));
}

TEST_CASE("temperature clamp keeps the scale inside its open interval") {
  Rng rng(36);
  MotionGraph g(4, 2, rng);
  g.temperature().data()[0] = 12.0;
  g.clamp();
  REQUIRE(g.temperature().item() == Catch::Approx(10.0 - 1e-3));
  g.temperature().data()[0] = -3.0;
  g.clamp();
  REQUIRE(g.temperature().item() == Catch::Approx(1e-3));
  g.clamp();
  REQUIRE(g.temperature().item() == Catch::Approx(1e-3));
}

TEST_CASE("saturated gates reduce the recurrent update to its exact limits") {
  Rng rng(40);
  const int64_t gh = 2, gw = 3, C = 5, N = gh * gw;
  MotionGraph graph(C, 3, rng);
  ConvGru gru(gh, gw, C, rng);
  Tensor e = randmat(rng, N, C);
  auto adj = graph.build(e);
  Tensor ax = matmul(adj.A, e);

  // candidate configured as exact pass-through of its input half
  for (int64_t i = 0; i < 2 * C; ++i)
    for (int64_t j = 0; j < C; ++j) gru.candidate().pw.data()[i * C + j] = i == j ? 1.0 : 0.0;
  for (int64_t j = 0; j < C; ++j) gru.candidate().b.data()[j] = 0.0;

  for (int64_t j = 0; j < C; ++j) gru.update().b.data()[j] = 1000.0;
  Tensor up = gru.step(ax, e);
  for (int64_t i = 0; i < up.size(); ++i) REQUIRE(up[i] == ax[i]);

  for (int64_t j = 0; j < C; ++j) gru.update().b.data()[j] = -1000.0;
  Tensor keep = gru.step(ax, e);
  for (int64_t i = 0; i < keep.size(); ++i) REQUIRE(keep[i] == e[i]);
}

TEST_CASE("recurrent update rejects mismatched grids") {
  Rng rng(41);
  ConvGru gru(2, 2, 4, rng);
  REQUIRE_THROWS_WITH(gru.step(Tensor::zeros({4, 3}), Tensor::zeros({4, 3})),
                      Catch::Matchers::ContainsSubstring("expected"));
  REQUIRE_THROWS_WITH(gru.step(Tensor::zeros({6, 4}), Tensor::zeros({6, 4})),
                      Catch::Matchers::ContainsSubstring("expected"));
}

TEST_CASE("decoded flow is invariant to feature sign") {
  Rng rng(42);
  FlowDecoder dec(6, 5, rng);
  Tensor e = randmat(rng, 8, 6);
  Tensor f1 = dec.decode(e, 2, 4);
  Tensor f2 = dec.decode(mul_const(e, -1.0), 2, 4);
  REQUIRE(f1.shape() == Shape{16, 32, 2});
  for (int64_t i = 0; i < f1.size(); ++i) REQUIRE(f1[i] == f2[i]);
}

TEST_CASE("decoding a uniform map yields a spatially constant field") {
  Rng rng(43);
  FlowDecoder dec(6, 5, rng);
  Tensor e = Tensor::zeros({6, 6});
  for (int64_t j = 0; j < 6; ++j) {
    const double v = rng.normal();
    for (int64_t i = 0; i < 6; ++i) e.data()[i * 6 + j] = v;
  }
  Tensor f = dec.decode(e, 2, 3);
  REQUIRE(f.shape() == Shape{16, 24, 2});
  for (int64_t p = 0; p < 16 * 24; ++p)
    for (int64_t c = 0; c < 2; ++c) {
      REQUIRE(std::isfinite(f[p * 2 + c]));
      REQUIRE(f[p * 2 + c] == Catch::Approx(f[c]).margin(1e-12));
    }
  REQUIRE_THROWS_WITH(dec.decode(e, 3, 3), Catch::Matchers::ContainsSubstring("expected"));
}

TEST_CASE("integrator emits one field per decode point and rebuilds the graph each step") {
  Rng rng(44);
  const int64_t gh = 2, gw = 2, C = 6;
  MotionIntegrator integ(gh, gw, C, 3, rng);
  FlowDecoder dec(C, 5, rng);
  Tensor em = randmat(rng, gh * gw, C);

  auto one = integ.run(em, dec, 1);
  REQUIRE(one.features.size() == 2);
  REQUIRE(one.flows.size() == 2);
  REQUIRE(one.adjacency.shape() == Shape{4, 4});
  for (int64_t i = 0; i < em.size(); ++i) REQUIRE(one.features[0][i] == em[i]);

  auto three = integ.run(em, dec, 3);
  REQUIRE(three.features.size() == 4);
  REQUIRE(three.flows.size() == 4);
  REQUIRE(three.zero_norm_nodes == 0);
  for (const auto& f : three.flows) {
    REQUIRE(f.shape() == Shape{16, 16, 2});
    for (int64_t i = 0; i < f.size(); ++i) REQUIRE(std::isfinite(f[i]));
  }
  Tensor last = integ.graph().build(three.features[2]).A;
  for (int64_t i = 0; i < last.size(); ++i) REQUIRE(three.adjacency[i] == last[i]);

  REQUIRE_THROWS_WITH(integ.run(em, dec, 0),
                      Catch::Matchers::ContainsSubstring("at least one"));
}

TEST_CASE("integration stack matches finite differences") {
  Rng rng(45);
  const int64_t gh = 2, gw = 2, C = 4, N = gh * gw;
  MotionIntegrator integ(gh, gw, C, 3, rng);
  FlowDecoder dec(C, 4, rng);
  Tensor em = randmat(rng, N, C, true);

  std::vector<std::pair<std::string, Tensor>> params;
  integ.collect_params("s2", params);
  dec.collect_params("dec", params);
  params.push_back({"em", em});

  auto forward = [&]() {
    auto res = integ.run(em, dec, 2);
    Tensor loss;
    for (size_t k = 0; k < res.flows.size(); ++k) {
      Tensor term = mul_const(mean_all(square(res.flows[k])), 1.0 + (double)k);
      loss = k == 0 ? term : add(loss, term);
    }
    return loss;
  };
  auto r = oracle::gradcheck(params, forward, 1e-5);
  INFO(r.worst_param << "[" << r.worst_index << "]");
  REQUIRE(r.max_rel_err < 1e-5);
}

TEST_CASE("first-order model hands the sensed map straight to integration") {
  Rng rng(50);
  TwoStageModel::Config cfg;
  cfg.height = cfg.width = 16;
  cfg.mode = ChannelMode::first_order;
  cfg.iterations = 2;
  cfg.units_per_scale = 8;
  cfg.num_scales = 1;
  cfg.proj_dim = 4;
  cfg.decoder_width = 8;
  TwoStageModel model(cfg, rng);
  Tensor rgb = Tensor::zeros({15, 16, 16, 3});
  for (int64_t i = 0; i < rgb.size(); ++i) rgb.data()[i] = rng.uniform();
  auto out = model.forward(rgb);
  REQUIRE(out.e1.data() == out.em.data());
  REQUIRE_FALSE(out.e2.defined());
  REQUIRE(out.flows.size() == 3);
  REQUIRE(out.features.size() == 3);
  for (int64_t i = 0; i < out.features[0].size(); ++i)
    REQUIRE(out.features[0][i] == out.em[i]);
}

TEST_CASE("dual model produces matching maps and one field per decode point") {
  Rng rng(51);
  TwoStageModel::Config cfg;
  cfg.height = cfg.width = 16;
  cfg.mode = ChannelMode::dual;
  cfg.iterations = 2;
  cfg.units_per_scale = 8;
  cfg.num_scales = 1;
  cfg.hoc_hidden = 4;
  cfg.proj_dim = 4;
  cfg.decoder_width = 8;
  TwoStageModel model(cfg, rng);
  Tensor rgb = Tensor::zeros({15, 16, 16, 3});
  Rng drng(99);
  for (int64_t i = 0; i < rgb.size(); ++i) rgb.data()[i] = drng.uniform();
  auto out = model.forward(rgb);
  const int64_t N = 4, C = 8;
  REQUIRE(out.e1.shape() == Shape{N, C});
  REQUIRE(out.e2.shape() == Shape{N, C});
  REQUIRE(out.em.shape() == Shape{N, C});
  REQUIRE(out.adjacency.shape() == Shape{N, N});
  REQUIRE(out.flows.size() == 3);
  for (const auto& f : out.flows) {
    REQUIRE(f.shape() == Shape{16, 16, 2});
    for (int64_t i = 0; i < f.size(); ++i) REQUIRE(std::isfinite(f[i]));
  }

  Rng rng2(51);
  TwoStageModel twin(cfg, rng2);
  auto out2 = twin.forward(rgb);
  for (size_t k = 0; k < out.flows.size(); ++k)
    for (int64_t i = 0; i < out.flows[k].size(); ++i)
      REQUIRE(out.flows[k][i] == out2.flows[k][i]);

  REQUIRE_THROWS_WITH(model.forward(Tensor::zeros({15, 16, 24, 3})),
                      Catch::Matchers::ContainsSubstring("expected"));
}

TEST_CASE("model parameters are uniquely named and the decoder appears once") {
  Rng rng(52);
  TwoStageModel::Config cfg;
  cfg.height = cfg.width = 16;
  cfg.mode = ChannelMode::dual;
  cfg.units_per_scale = 4;
  cfg.num_scales = 1;
  cfg.hoc_hidden = 4;
  cfg.proj_dim = 4;
  cfg.decoder_width = 8;
  TwoStageModel model(cfg, rng);
  auto params = model.params();
  std::set<std::string> names;
  int decoder_count = 0;
  bool has_hoc = false, has_fusion = false;
  for (const auto& [name, t] : params) {
    REQUIRE(names.insert(name).second);
    if (name.rfind("decoder.", 0) == 0) ++decoder_count;
    if (name.rfind("hoc.", 0) == 0) has_hoc = true;
    if (name.rfind("fusion.", 0) == 0) has_fusion = true;
  }
  REQUIRE(decoder_count == 10);
  REQUIRE(has_hoc);
  REQUIRE(has_fusion);

  Rng rng2(53);
  cfg.mode = ChannelMode::first_order;
  TwoStageModel fo(cfg, rng2);
  for (const auto& [name, t] : fo.params()) {
    REQUIRE(name.rfind("hoc.", 0) != 0);
    REQUIRE(name.rfind("fusion.", 0) != 0);
  }
}

TEST_CASE("luma conversion and the causal window follow the documented layout") {
  Rng rng(54);
  Tensor rgb = Tensor::zeros({2, 1, 2, 3});
  const double px[12] = {1, 0, 0, 0, 1, 0, 0, 0, 1, 0.5, 0.25, 0.125};
  for (int64_t i = 0; i < 12; ++i) rgb.data()[i] = px[i];
  Tensor g = luma(rgb);
  REQUIRE(g.shape() == Shape{2, 1, 2});
  REQUIRE(g[0] == Catch::Approx(0.299).margin(1e-15));
  REQUIRE(g[1] == Catch::Approx(0.587).margin(1e-15));
  REQUIRE(g[2] == Catch::Approx(0.114).margin(1e-15));
  REQUIRE(g[3] == Catch::Approx(0.299 * 0.5 + 0.587 * 0.25 + 0.114 * 0.125).margin(1e-15));
  REQUIRE_THROWS_WITH(luma(Tensor::zeros({2, 4, 4})),
                      Catch::Matchers::ContainsSubstring("expected"));

  TwoStageModel::Config cfg;
  cfg.height = cfg.width = 16;
  cfg.mode = ChannelMode::first_order;
  cfg.units_per_scale = 4;
  cfg.num_scales = 1;
  cfg.proj_dim = 4;
  cfg.decoder_width = 8;
  TwoStageModel model(cfg, rng);
  Tensor gray = Tensor::zeros({15, 16, 16});
  for (int64_t i = 0; i < gray.size(); ++i) gray.data()[i] = rng.normal();
  Tensor win = model.stage1_window(gray);
  REQUIRE(win.shape() == Shape{6, 16, 16});
  for (int64_t i = 0; i < win.size(); ++i) REQUIRE(win[i] == gray[2 * 16 * 16 + i]);
}

TEST_CASE("channel mode names round trip") {
  REQUIRE(parse_channel_mode("dual") == ChannelMode::dual);
  REQUIRE(parse_channel_mode("first") == ChannelMode::first_order);
  REQUIRE(parse_channel_mode("first_order") == ChannelMode::first_order);
  REQUIRE_THROWS_WITH(parse_channel_mode("both"), Catch::Matchers::ContainsSubstring("channel"));
  REQUIRE(channel_mode_name(ChannelMode::dual) == "dual");
  REQUIRE(channel_mode_name(ChannelMode::first_order) == "first_order");
}
