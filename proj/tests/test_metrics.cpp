#include <catch2/catch_amalgamated.hpp>
#include <algorithm>

#include <cmath>
#include <vector>

#include "meflow/core/random.hpp"
#include "meflow/metrics/metrics.hpp"
#include "oracles.hpp"

using meflow::Tensor;

namespace {

Tensor random_flow(int64_t h, int64_t w, meflow::Rng& rng, double scale = 1.0) {
  Tensor f = Tensor::zeros({h, w, 2});
  for (int64_t i = 0; i < f.size(); ++i) f.data()[i] = rng.normal(0.0, scale);
  return f;
}

}  // namespace

TEST_CASE("endpoint error basics and loop oracle") {
  meflow::Rng rng(3);
  Tensor f = random_flow(6, 5, rng);
  CHECK(meflow::epe(f, f) == 0.0);

  Tensor g = f;
  Tensor shifted = Tensor::zeros({6, 5, 2});
  for (int64_t i = 0; i < f.size() / 2; ++i) {
    shifted.data()[2 * i] = f[2 * i] + 1.0;
    shifted.data()[2 * i + 1] = f[2 * i + 1];
  }
  CHECK(meflow::epe(shifted, f) == Catch::Approx(1.0).margin(1e-12));

  Tensor h = random_flow(6, 5, rng, 2.0);
  double acc = 0;
  for (int64_t i = 0; i < f.size() / 2; ++i)
    acc += std::hypot(f[2 * i] - h[2 * i], f[2 * i + 1] - h[2 * i + 1]);
  CHECK(meflow::epe(f, h) == Catch::Approx(acc / 30.0).margin(1e-12));

  Tensor bad = Tensor::zeros({5, 6, 2});
  CHECK_THROWS_AS(meflow::epe(f, bad), std::invalid_argument);
  Tensor notflow = Tensor::zeros({6, 5, 3});
  CHECK_THROWS_AS(meflow::epe(notflow, notflow), std::invalid_argument);
}

TEST_CASE("endpoint error satisfies the triangle bound") {
  meflow::Rng rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor a = random_flow(4, 4, rng), b = random_flow(4, 4, rng), c = random_flow(4, 4, rng);
    CHECK(meflow::epe(a, c) <= meflow::epe(a, b) + meflow::epe(b, c) + 1e-12);
  }
}

TEST_CASE("flow decomposition") {
  Tensor f = Tensor::from({2, 2, 2}, {1, 0, 0, -2, 0, 0, -3, 0});
  auto c = meflow::decompose(f);
  CHECK(c.dir[0] == Catch::Approx(0.0).margin(1e-15));
  CHECK(c.spd[0] == 1.0);
  CHECK(c.dir[1] == Catch::Approx(-1.5707963267948966).margin(1e-15));
  CHECK(c.spd[1] == 2.0);
  CHECK(c.valid[2] == 0);
  CHECK(c.spd[2] == 0.0);
  CHECK(c.dir[3] == Catch::Approx(3.14159265358979323846).margin(1e-15));
  CHECK(c.dir[3] > 0.0);

  int masked = 0, zero_speed = 0;
  meflow::Rng rng(9);
  Tensor g = Tensor::zeros({8, 8, 2});
  for (int64_t i = 0; i < 64; ++i) {
    if (rng.uniform() < 0.3) continue;  // leave (0,0)
    g.data()[2 * i] = rng.normal();
    g.data()[2 * i + 1] = rng.normal();
  }
  auto cg = meflow::decompose(g);
  for (int64_t i = 0; i < 64; ++i) {
    masked += cg.valid[(size_t)i] == 0;
    zero_speed += cg.spd[(size_t)i] < 1e-6;
    CHECK(cg.dir[(size_t)i] > -3.14159265358979323846);
    CHECK(cg.dir[(size_t)i] <= 3.14159265358979323846);
  }
  CHECK(masked == zero_speed);
}

TEST_CASE("pearson correlation against the scalar oracle") {
  std::vector<double> x{0.5, 1.5, -2.0, 3.0, 0.25};
  std::vector<double> y(x.size()), z(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    y[i] = 2.0 * x[i] + 3.0;
    z[i] = -x[i];
  }
  CHECK(meflow::pearson(x, y) == Catch::Approx(1.0).margin(1e-12));
  CHECK(meflow::pearson(x, z) == Catch::Approx(-1.0).margin(1e-12));

  meflow::Rng rng(21);
  std::vector<double> a(64), b(64);
  for (size_t i = 0; i < a.size(); ++i) {
    a[i] = rng.normal();
    b[i] = 0.4 * a[i] + rng.normal();
  }
  CHECK(meflow::pearson(a, b) == Catch::Approx(oracle::pearson(a, b)).margin(1e-12));

  for (double scale : {2.5, -0.7}) {
    std::vector<double> ax(a.size());
    for (size_t i = 0; i < a.size(); ++i) ax[i] = scale * a[i] + 1.3;
    const double want = (scale > 0 ? 1.0 : -1.0) * meflow::pearson(a, b);
    CHECK(meflow::pearson(ax, b) == Catch::Approx(want).margin(1e-12));
  }

  std::vector<double> flat(8, 4.0);
  CHECK_THROWS_WITH(meflow::pearson(flat, a = std::vector<double>(8, 1.0)),
                    Catch::Matchers::ContainsSubstring("zero variance"));
  std::vector<uint8_t> mask(5, 0);
  mask[0] = 1;
  CHECK_THROWS_WITH(meflow::pearson(x, z, &mask),
                    Catch::Matchers::ContainsSubstring("fewer than two"));
}

TEST_CASE("masked pearson ignores masked entries") {
  std::vector<double> x{1, 2, 3, 100, 4}, y{2, 4, 6, -50, 8};
  std::vector<uint8_t> mask{1, 1, 1, 0, 1};
  CHECK(meflow::pearson(x, y, &mask) == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("partial correlation formula and guards") {
  CHECK(meflow::partial_correlation(0.8, 0.5, 0.5) ==
        Catch::Approx(0.55 / 0.75).margin(1e-12));
  CHECK(meflow::partial_correlation(0.8, 0.5, 0.5) ==
        Catch::Approx(oracle::partial_corr(0.8, 0.5, 0.5)).margin(1e-12));
  CHECK(meflow::partial_correlation(0.3, 0.6, -0.2) ==
        Catch::Approx(oracle::partial_corr(0.3, 0.6, -0.2)).margin(1e-12));
  CHECK(meflow::partial_correlation(0.3, 0.6, -0.2) ==
        meflow::partial_correlation(0.3, -0.2, 0.6));  // symmetric in the pair
  CHECK_THROWS_WITH(meflow::partial_correlation(0.5, 1.0, 0.2),
                    Catch::Matchers::ContainsSubstring("saturated"));
  CHECK_THROWS_WITH(meflow::partial_correlation(0.5, 0.2, -1.0),
                    Catch::Matchers::ContainsSubstring("saturated"));
}

TEST_CASE("partial correlation on samples") {
  meflow::Rng rng(33);
  const size_t n = 10000;
  std::vector<double> a(n), b(n), g(n);
  for (size_t i = 0; i < n; ++i) {
    a[i] = rng.normal();
    b[i] = rng.normal();
    g[i] = rng.normal();
  }
  CHECK(std::abs(meflow::partial_correlation(a, b, g)) < 0.05);

  std::vector<double> twin = a;
  CHECK(meflow::partial_correlation(a, twin, g) == Catch::Approx(1.0).margin(1e-9));

  // controlling away a shared driver removes most of the correlation
  for (size_t i = 0; i < n; ++i) {
    a[i] = g[i] + 0.3 * rng.normal();
    b[i] = g[i] + 0.3 * rng.normal();
  }
  const double raw = meflow::pearson(a, b);
  const double part = meflow::partial_correlation(a, b, g);
  CHECK(raw > 0.8);
  CHECK(std::abs(part) < 0.1);
}

TEST_CASE("intersection over union") {
  std::vector<uint8_t> a{1, 1, 0, 0}, b{1, 1, 0, 0};
  CHECK(meflow::iou(a, b).value == 1.0);

  std::vector<uint8_t> c{0, 0, 1, 1};
  CHECK(meflow::iou(a, c).value == 0.0);
  CHECK_FALSE(meflow::iou(a, c).empty_union);

  // two 4x2 squares overlapping in half their area: 4 / 12
  std::vector<uint8_t> sq1(32, 0), sq2(32, 0);
  for (int64_t y = 0; y < 4; ++y)
    for (int64_t x = 0; x < 2; ++x) {
      sq1[(size_t)(y * 8 + x + 2)] = 1;
      sq2[(size_t)(y * 8 + x + 3)] = 1;
    }
  int64_t inter = 0, uni = 0;
  for (size_t i = 0; i < sq1.size(); ++i) {
    inter += sq1[i] && sq2[i];
    uni += sq1[i] || sq2[i];
  }
  CHECK(meflow::iou(sq1, sq2).value == Catch::Approx((double)inter / (double)uni));
  CHECK(meflow::iou(sq1, sq2).value == Catch::Approx(1.0 / 3.0).margin(1e-12));

  std::vector<uint8_t> empty(4, 0);
  auto r = meflow::iou(empty, empty);
  CHECK(r.value == 0.0);
  CHECK(r.empty_union);

  auto flip = meflow::iou_adaptive(c, a);  // complement of c equals a
  CHECK(flip.value == 1.0);
  CHECK(flip.flipped);
  auto keep = meflow::iou_adaptive(a, a);
  CHECK(keep.value == 1.0);
  CHECK_FALSE(keep.flipped);

  CHECK_THROWS_AS(meflow::iou(a, empty = std::vector<uint8_t>(3, 0)), std::invalid_argument);
}

TEST_CASE("direction correlation unwraps across the seam") {
  const double pi = 3.14159265358979323846;
  std::vector<double> da(9), db(9);
  std::vector<uint8_t> mask(9, 1);
  for (size_t i = 0; i < 9; ++i) {
    da[i] = pi - 0.45 + 0.05 * (double)i;
    db[i] = da[i] + 0.1;            // constant angular offset...
    if (db[i] > pi) db[i] -= 2 * pi;  // ...but the last pair wraps past the seam
  }
  CHECK(meflow::pearson(da, db) < 0.9);
  CHECK(meflow::direction_correlation(da, db, mask) == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("flow comparison aggregates all components") {
  meflow::Rng rng(55);
  Tensor gt = random_flow(8, 8, rng);
  Tensor model = Tensor::zeros({8, 8, 2});
  Tensor ref = Tensor::zeros({8, 8, 2});
  for (int64_t i = 0; i < gt.size(); ++i) {
    model.data()[i] = gt[i] + 0.5 * rng.normal();
    ref.data()[i] = gt[i] + 0.5 * rng.normal();
  }
  auto cmp = meflow::compare_flows(model, ref, gt);
  CHECK(cmp.epe > 0.0);
  for (double v : {cmp.r_uv, cmp.r_dir, cmp.r_spd, cmp.p_uv, cmp.p_dir, cmp.p_spd}) {
    CHECK(std::isfinite(v));
    CHECK(std::abs(v) <= 1.0 + 1e-9);
  }
  CHECK(cmp.r_uv > 0.3);  // both track the same gt
  CHECK(cmp.p_uv < cmp.r_uv);

  auto self = meflow::compare_flows(model, model, gt);
  CHECK(self.epe == 0.0);
  CHECK(self.r_uv == Catch::Approx(1.0).margin(1e-12));
  CHECK(self.p_uv == Catch::Approx(1.0).margin(1e-9));

  CHECK(meflow::FlowComparison::csv_header() == "epe,r_uv,r_dir,r_spd,p_uv,p_dir,p_spd");
  const std::string row = cmp.csv_row();
  CHECK(std::count(row.begin(), row.end(), ',') == 6);

  Tensor bad = Tensor::zeros({4, 4, 2});
  CHECK_THROWS_AS(meflow::compare_flows(model, ref, bad), std::invalid_argument);
}
