#include <catch2/catch_amalgamated.hpp>

#include "meflow/core/adam.hpp"
#include "meflow/core/checkpoint.hpp"
#include "meflow/core/ops.hpp"
#include "meflow/core/random.hpp"
#include "meflow/core/tensor.hpp"
#include "oracles.hpp"

using namespace meflow;

namespace {
Tensor randt(Rng& rng, Shape s, bool rg = true, double scale = 1.0) {
  Tensor t = Tensor::zeros(std::move(s), rg);
  for (int64_t i = 0; i < t.size(); ++i) t.data()[i] = rng.normal() * scale;
  return t;
}
Tensor randpos(Rng& rng, Shape s, bool rg = true) {
  Tensor t = Tensor::zeros(std::move(s), rg);
  for (int64_t i = 0; i < t.size(); ++i) t.data()[i] = 0.1 + rng.uniform();
  return t;
}
}  // namespace

TEST_CASE("tensor basics and error reporting") {
  Tensor a = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  REQUIRE(a.size() == 6);
  REQUIRE(a.shape() == Shape{2, 3});

  REQUIRE_THROWS_WITH(Tensor::from({2, 2}, {1, 2, 3}),
                      Catch::Matchers::ContainsSubstring("[2,2]"));
  Tensor b = Tensor::zeros({3, 2});
  REQUIRE_THROWS_WITH(add(a, b), Catch::Matchers::ContainsSubstring("[2,3]") &&
                                     Catch::Matchers::ContainsSubstring("[3,2]"));
  REQUIRE_THROWS_AS(matmul(a, a), std::invalid_argument);
  REQUIRE_THROWS_AS(a.item(), std::invalid_argument);
}

TEST_CASE("backward requires scalar loss") {
  Tensor a = Tensor::from({2}, {1, 2}, true);
  Tensor y = mul(a, a);
  REQUIRE_THROWS_AS(backward(y), std::invalid_argument);
}

TEST_CASE("simple chain gradients") {
  Tensor x = Tensor::scalar(3.0, true);
  Tensor y = Tensor::scalar(4.0, true);
  // z = x*y + x, dz/dx = y + 1, dz/dy = x (x feeds two tape records)
  Tensor z = add(mul(x, y), x);
  backward(z);
  REQUIRE(x.grad()[0] == Catch::Approx(5.0).epsilon(1e-12));
  REQUIRE(y.grad()[0] == Catch::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("unreachable parameters get zero gradients") {
  Tensor x = Tensor::scalar(2.0, true);
  Tensor orphan = Tensor::scalar(7.0, true);
  Tensor z = mul(x, x);
  backward(z);
  REQUIRE(orphan.grad()[0] == 0.0);
}

TEST_CASE("backward is deterministic across repeated runs") {
  Rng rng(11);
  Tensor w = randt(rng, {8, 8});
  Tensor x = randt(rng, {8, 8});
  auto run = [&] {
    w.zero_grad();
    x.zero_grad();
    Tensor y = matmul(w, x);
    Tensor l = mean_all(mul(y, y));
    backward(l);
    return std::vector<double>(w.grad(), w.grad() + w.size());
  };
  auto g1 = run();
  auto g2 = run();
  REQUIRE(g1 == g2);  // bitwise
}

TEST_CASE("matmul matches loop oracle") {
  Rng rng(5);
  Tensor A = randt(rng, {7, 5});
  Tensor B = randt(rng, {5, 9});
  Tensor C = matmul(A, B);
  for (int64_t i = 0; i < 7; ++i)
    for (int64_t j = 0; j < 9; ++j) {
      double acc = 0;
      for (int64_t k = 0; k < 5; ++k) acc += A[i * 5 + k] * B[k * 9 + j];
      REQUIRE(C[i * 9 + j] == Catch::Approx(acc).margin(1e-12));
    }
}

TEST_CASE("conv2d output shape follows H + 2*pad - kh + 1") {
  Rng rng(6);
  Tensor x = randt(rng, {10, 12, 2}, false);
  Tensor k = randt(rng, {3, 5, 2, 4}, false);
  Tensor y = conv2d(x, k, 2);
  REQUIRE(y.shape() == Shape{10 + 4 - 3 + 1, 12 + 4 - 5 + 1, 4});
  REQUIRE_THROWS_WITH(conv2d(x, randt(rng, {11, 3, 2, 1}, false), 0),
                      Catch::Matchers::ContainsSubstring("too large"));
}

TEST_CASE("conv2d matches quadruple-loop oracle") {
  Rng rng(7);
  Tensor x = randt(rng, {9, 8, 3}, false);
  Tensor k = randt(rng, {3, 3, 3, 5}, false);
  Tensor y = conv2d(x, k, 1);
  auto ref = oracle::conv2d_loops({x.data(), x.data() + x.size()}, 9, 8, 3,
                                  {k.data(), k.data() + k.size()}, 3, 3, 5, 1);
  REQUIRE(y.size() == (int64_t)ref.size());
  for (int64_t i = 0; i < y.size(); ++i) REQUIRE(y[i] == Catch::Approx(ref[(size_t)i]).margin(1e-10));
}

TEST_CASE("conv_temporal: delta kernel at lag zero returns the last frame") {
  Rng rng(8);
  Tensor x = randt(rng, {6, 4, 4, 2}, false);
  Tensor k = Tensor::zeros({6, 2});
  k.data()[0] = 1.0;  // lag 0, channel 0
  k.data()[1] = 1.0;  // lag 0, channel 1
  Tensor y = conv_temporal(x, k);
  REQUIRE(y.shape() == Shape{4, 4, 2});
  const double* last = x.data() + 5 * 4 * 4 * 2;
  for (int64_t i = 0; i < y.size(); ++i) REQUIRE(y[i] == last[i]);
}

TEST_CASE("conv_temporal rejects kernels longer than the sequence") {
  Tensor x = Tensor::zeros({3, 2, 2, 1});
  Tensor k = Tensor::zeros({4, 1});
  REQUIRE_THROWS_AS(conv_temporal(x, k), std::invalid_argument);
}

TEST_CASE("bilinear resize: identity when sizes match, mean preserved on constant") {
  Rng rng(9);
  Tensor x = randt(rng, {6, 5, 3}, false);
  Tensor same = bilinear_resize(x, 6, 5);
  for (int64_t i = 0; i < x.size(); ++i) REQUIRE(same[i] == Catch::Approx(x[i]).margin(1e-14));
  Tensor c = Tensor::full({8, 8, 1}, 3.25);
  Tensor down = bilinear_resize(c, 3, 5);
  for (int64_t i = 0; i < down.size(); ++i) REQUIRE(down[i] == Catch::Approx(3.25).margin(1e-14));
}

TEST_CASE("gradient checks: elementwise, scalar, reduction ops") {
  Rng rng(21);
  Tensor a = randt(rng, {4, 3});
  Tensor b = randt(rng, {4, 3});
  Tensor s = Tensor::scalar(0.7, true);

  auto res = oracle::gradcheck(
      {{"a", a}, {"b", b}, {"s", s}},
      [&] {
        Tensor y = add(mul(a, b), mul_scalar(square(b), s));
        Tensor z = mul(sigmoid(a), add_scalar(tanh_t(y), s));
        return mean_all(z);
      });
  INFO("worst " << res.worst_param << "[" << res.worst_index << "]");
  REQUIRE(res.max_rel_err < 1e-6);
}

TEST_CASE("gradient checks: trig, exp, sqrt, recip chain") {
  Rng rng(22);
  Tensor a = randpos(rng, {3, 4});
  auto res = oracle::gradcheck({{"a", a}}, [&] {
    Tensor y = add(cos_t(a), mul(sin_t(a), exp_t(neg(a))));
    return mean_all(mul(sqrt_t(a), add(y, recip(add_const(a, 2.0)))));
  });
  REQUIRE(res.max_rel_err < 1e-6);
}

TEST_CASE("gradient checks: matmul, add_rowvec, relu") {
  Rng rng(23);
  Tensor W = randt(rng, {5, 4});
  Tensor X = randt(rng, {6, 5});
  Tensor b = randt(rng, {4});
  auto res = oracle::gradcheck({{"W", W}, {"X", X}, {"b", b}}, [&] {
    return mean_all(relu(add_rowvec(matmul(X, W), b)));
  });
  REQUIRE(res.max_rel_err < 1e-6);
}

TEST_CASE("gradient checks: conv2d w.r.t. input and kernel") {
  Rng rng(24);
  Tensor x = randt(rng, {5, 6, 2});
  Tensor k = randt(rng, {3, 3, 2, 3});
  auto res = oracle::gradcheck({{"x", x}, {"k", k}}, [&] {
    return mean_all(square(conv2d(x, k, 1)));
  });
  REQUIRE(res.max_rel_err < 1e-6);
}

TEST_CASE("gradient checks: conv_temporal and conv3d") {
  Rng rng(25);
  Tensor x = randt(rng, {5, 3, 3, 2});
  Tensor kt = randt(rng, {4, 2});
  auto r1 = oracle::gradcheck({{"x", x}, {"kt", kt}}, [&] {
    return mean_all(square(conv_temporal(x, kt)));
  });
  REQUIRE(r1.max_rel_err < 1e-6);

  Tensor k3 = randt(rng, {3, 3, 3, 2, 2});
  auto r2 = oracle::gradcheck({{"x", x}, {"k3", k3}}, [&] {
    return mean_all(square(conv3d_3x3x3(x, k3, 1, 4)));
  });
  REQUIRE(r2.max_rel_err < 1e-6);
}

TEST_CASE("conv3d matches brute-force loops") {
  Rng rng(26);
  Tensor x = randt(rng, {4, 5, 5, 2}, false);
  Tensor k = randt(rng, {3, 3, 3, 2, 3}, false);
  Tensor y = conv3d_3x3x3(x, k, 0, 4);
  REQUIRE(y.shape() == Shape{4, 5, 5, 3});
  for (int64_t t = 0; t < 4; ++t)
    for (int64_t yy = 0; yy < 5; ++yy)
      for (int64_t xx = 0; xx < 5; ++xx)
        for (int64_t co = 0; co < 3; ++co) {
          double acc = 0;
          for (int64_t dt = 0; dt < 3; ++dt)
            for (int64_t dy = 0; dy < 3; ++dy)
              for (int64_t dx = 0; dx < 3; ++dx)
                for (int64_t ci = 0; ci < 2; ++ci) {
                  const int64_t it = t + dt - 1, iy = yy + dy - 1, ix = xx + dx - 1;
                  if (it < 0 || it >= 4 || iy < 0 || iy >= 5 || ix < 0 || ix >= 5) continue;
                  acc += x[((it * 5 + iy) * 5 + ix) * 2 + ci] *
                         k[(((dt * 3 + dy) * 3 + dx) * 2 + ci) * 3 + co];
                }
          REQUIRE(y[((t * 5 + yy) * 5 + xx) * 3 + co] == Catch::Approx(acc).margin(1e-11));
        }
}

TEST_CASE("gradient checks: depthwise, bilinear, slicing, stacking") {
  Rng rng(27);
  Tensor x = randt(rng, {5, 4, 3});
  Tensor k = randt(rng, {3, 3, 3});
  auto r1 = oracle::gradcheck({{"x", x}, {"k", k}}, [&] {
    return mean_all(square(depthwise3x3(x, k)));
  });
  REQUIRE(r1.max_rel_err < 1e-6);

  Tensor z = randt(rng, {6, 6, 2});
  auto r2 = oracle::gradcheck({{"z", z}}, [&] {
    return mean_all(square(bilinear_resize(z, 3, 4)));
  });
  REQUIRE(r2.max_rel_err < 1e-6);

  Tensor c1 = randt(rng, {5});
  Tensor c2 = randt(rng, {5});
  Tensor c3 = randt(rng, {5});
  auto r3 = oracle::gradcheck({{"c1", c1}, {"c2", c2}, {"c3", c3}}, [&] {
    Tensor m = stack_columns({c1, c2, c3});
    Tensor r = stack_rows({c2, c3});
    return add(mean_all(square(m)), mean_all(mul(r, r)));
  });
  REQUIRE(r3.max_rel_err < 1e-6);

  Tensor seq = randt(rng, {6, 2, 2, 2});
  auto r4 = oracle::gradcheck({{"seq", seq}}, [&] {
    return mean_all(square(slice_frames(seq, 1, 4)));
  });
  REQUIRE(r4.max_rel_err < 1e-6);
}

TEST_CASE("gradient checks: fused normalizations") {
  Rng rng(28);
  Tensor x = randpos(rng, {6, 5});
  Tensor K = Tensor::scalar(1.3, true);
  Tensor sg = Tensor::scalar(0.21, true);
  auto r1 = oracle::gradcheck({{"x", x}, {"K", K}, {"sg", sg}}, [&] {
    return mean_all(square(divisive_normalize_rows(x, K, sg)));
  });
  REQUIRE(r1.max_rel_err < 1e-6);

  Tensor y = randt(rng, {7, 4});
  auto r2 = oracle::gradcheck({{"y", y}, {"K", K}, {"sg", sg}}, [&] {
    return mean_all(square(square_column_normalize(y, K, sg)));
  });
  REQUIRE(r2.max_rel_err < 1e-6);

  Tensor f = randt(rng, {5, 6});
  auto r3 = oracle::gradcheck({{"f", f}}, [&] {
    Tensor rn = row_normalize(f);
    return mean_all(square(matmul_tB(rn, rn)));
  });
  REQUIRE(r3.max_rel_err < 1e-6);

  Tensor adj = randpos(rng, {5, 5});
  Tensor u = randpos(rng, {5});
  auto r4 = oracle::gradcheck({{"adj", adj}, {"u", u}}, [&] {
    return mean_all(square(sym_scale(adj, u)));
  });
  REQUIRE(r4.max_rel_err < 1e-6);
}

TEST_CASE("gradient check: fused quadrature energy") {
  Rng rng(29);
  Tensor R = randt(rng, {4, 6, 6});  // 4 frames, 6 positions, 3 units
  Tensor tre = randt(rng, {3, 4});
  Tensor tim = randt(rng, {3, 4});
  Tensor a1 = randt(rng, {3});
  auto res = oracle::gradcheck({{"R", R}, {"tre", tre}, {"tim", tim}, {"a1", a1}}, [&] {
    return mean_all(quadrature_energy(R, tre, tim, a1));
  });
  REQUIRE(res.max_rel_err < 1e-6);
}

TEST_CASE("gradient checks: sequence resize, patch gather, column interleave") {
  Rng rng(30);
  Tensor seq = randt(rng, {3, 7, 6});
  auto r1 = oracle::gradcheck({{"seq", seq}}, [&] {
    return mean_all(square(bilinear_resize_seq(seq, 4, 3)));
  });
  REQUIRE(r1.max_rel_err < 1e-6);

  auto r2 = oracle::gradcheck({{"seq", seq}}, [&] {
    return mean_all(square(gather_patches_seq(seq, {0, 3, 6}, {1, 5}, 3, 3)));
  });
  REQUIRE(r2.max_rel_err < 1e-6);

  Tensor a = randt(rng, {4, 3});
  Tensor b = randt(rng, {4, 3});
  auto r3 = oracle::gradcheck({{"a", a}, {"b", b}}, [&] {
    return mean_all(square(interleave_cols(a, mul_const(b, 2.0))));
  });
  REQUIRE(r3.max_rel_err < 1e-6);
}

TEST_CASE("patch gather matches im2col positions") {
  Rng rng(31);
  Tensor x = randt(rng, {2, 6, 5});
  Tensor k = randt(rng, {3, 3, 1, 2});
  Tensor p = gather_patches_seq(x, {0, 2, 5}, {1, 4}, 3, 3);
  REQUIRE(p.shape() == Shape{12, 9});
  for (int f = 0; f < 2; ++f) {
    Tensor frame = reshape(slice_frames(x, f, f + 1), {6, 5, 1});
    Tensor full = conv2d(frame, k, 1);
    Tensor sampled = matmul(p, reshape(k, {9, 2}));
    const int64_t rows[3] = {0, 2, 5}, cols[2] = {1, 4};
    for (int ri = 0; ri < 3; ++ri)
      for (int ci = 0; ci < 2; ++ci)
        for (int c = 0; c < 2; ++c) {
          const double want = full[(rows[ri] * 5 + cols[ci]) * 2 + c];
          const double got = sampled[(f * 6 + ri * 2 + ci) * 2 + c];
          REQUIRE(got == Catch::Approx(want).margin(1e-12));
        }
  }
}

TEST_CASE("sequence resize matches per-frame channel resize") {
  Rng rng(32);
  Tensor seq = randt(rng, {3, 8, 6});
  Tensor out = bilinear_resize_seq(seq, 5, 4);
  for (int f = 0; f < 3; ++f) {
    Tensor frame = reshape(slice_frames(seq, f, f + 1), {8, 6, 1});
    Tensor ref = bilinear_resize(frame, 5, 4);
    for (int i = 0; i < 20; ++i)
      REQUIRE(out[f * 20 + i] == Catch::Approx(ref[i]).margin(1e-12));
  }
}

TEST_CASE("divisive normalization bounds: outputs in [0, K)") {
  Rng rng(30);
  Tensor x = randpos(rng, {10, 8}, false);
  Tensor K = Tensor::scalar(0.9);
  Tensor sg = Tensor::scalar(0.05);
  Tensor y = divisive_normalize_rows(x, K, sg);
  for (int64_t i = 0; i < y.size(); ++i) {
    REQUIRE(y[i] >= 0.0);
    REQUIRE(y[i] < 0.9);
  }
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  Tensor p = Tensor::from({3}, {1.0, -2.0, 0.5}, true);
  p.zero_grad();
  std::vector<std::pair<std::string, Tensor>> params{{"p", p}};
  Adam opt({.lr = 0.01});
  opt.step(params);
  REQUIRE(p[0] == 1.0);
  REQUIRE(p[1] == -2.0);
  REQUIRE(p[2] == 0.5);
}

TEST_CASE("adam: NaN gradient rejects the step and names the parameter") {
  Tensor p = Tensor::from({2}, {1.0, 1.0}, true);
  p.grad()[0] = std::nan("");
  std::vector<std::pair<std::string, Tensor>> params{{"theta", p}};
  Adam opt;
  REQUIRE_THROWS_WITH(opt.step(params), Catch::Matchers::ContainsSubstring("theta"));
  REQUIRE(p[0] == 1.0);
}

TEST_CASE("adam: first step moves by lr for unit gradient direction") {
  Tensor p = Tensor::from({2}, {0.0, 0.0}, true);
  p.grad()[0] = 1.0;
  p.grad()[1] = -2.0;
  std::vector<std::pair<std::string, Tensor>> params{{"p", p}};
  Adam opt({.lr = 0.1, .eps = 1e-12});
  opt.step(params);
  // bias-corrected first step is -lr * sign(g)
  REQUIRE(p[0] == Catch::Approx(-0.1).margin(1e-9));
  REQUIRE(p[1] == Catch::Approx(0.1).margin(1e-9));
}

TEST_CASE("checkpoint round trip is bit exact") {
  Rng rng(31);
  Tensor a = randt(rng, {4, 5}, true);
  Tensor b = randt(rng, {7}, true);
  std::vector<std::pair<std::string, Tensor>> params{{"w.a", a}, {"w.b", b}};
  const std::string path = "/tmp/meflow_test_ckpt.bin";
  save_checkpoint(path, params, {{"note", "t"}});

  Tensor a2 = Tensor::zeros({4, 5}, true);
  Tensor b2 = Tensor::zeros({7}, true);
  std::vector<std::pair<std::string, Tensor>> params2{{"w.a", a2}, {"w.b", b2}};
  auto manifest = load_checkpoint(path, params2);
  REQUIRE(std::equal(a.data(), a.data() + a.size(), a2.data()));
  REQUIRE(std::equal(b.data(), b.data() + b.size(), b2.data()));
  REQUIRE(manifest["extra"]["note"] == "t");

  Tensor wrong = Tensor::zeros({5, 4}, true);
  std::vector<std::pair<std::string, Tensor>> bad{{"w.a", wrong}, {"w.b", b2}};
  REQUIRE_THROWS_WITH(load_checkpoint(path, bad),
                      Catch::Matchers::ContainsSubstring("shape mismatch"));
  std::vector<std::pair<std::string, Tensor>> badname{{"w.x", a2}, {"w.b", b2}};
  REQUIRE_THROWS_WITH(load_checkpoint(path, badname),
                      Catch::Matchers::ContainsSubstring("w.x"));
}

TEST_CASE("rng determinism and distribution sanity") {
  Rng r1(42), r2(42);
  for (int i = 0; i < 100; ++i) REQUIRE(r1.uniform() == r2.uniform());
  Rng r3(43);
  double acc = 0;
  for (int i = 0; i < 20000; ++i) acc += r3.normal();
  REQUIRE(std::abs(acc / 20000) < 0.05);
}
