#pragma once

#include "meflow/core/gemm.hpp"
#include "meflow/core/tensor.hpp"

// Heavy differentiable ops. Layout convention: spatial tensors are
// channel-last ([H,W,C], sequences [T,H,W,C]), so 1x1 convolutions and node
// features reduce to plain GEMMs.

namespace meflow {

// ---- matmul ----

inline Tensor matmul(const Tensor& A, const Tensor& B) {
  if (A.shape().size() != 2 || B.shape().size() != 2 || A.shape()[1] != B.shape()[0])
    throw std::invalid_argument("matmul: incompatible shapes " + shape_str(A.shape()) + " x " +
                                shape_str(B.shape()));
  const int64_t m = A.shape()[0], k = A.shape()[1], n = B.shape()[1];
  Tensor out = detail::make_out({m, n}, {A, B});
  gemm_nn(A.data(), B.data(), out.data(), m, k, n);
  detail::set_backfn(out, [m, k, n](TensorImpl& self) {
    TensorImpl& A = *self.parents[0];
    TensorImpl& B = *self.parents[1];
    if (A.requires_grad) {
      A.ensure_grad();
      gemm_nt(self.grad.data(), B.data.data(), A.grad.data(), m, n, k);
    }
    if (B.requires_grad) {
      B.ensure_grad();
      gemm_tn(A.data.data(), self.grad.data(), B.grad.data(), k, m, n);
    }
  });
  return out;
}

// A[m,k] * B[n,k]^T -> [m,n]
inline Tensor matmul_tB(const Tensor& A, const Tensor& B) {
  if (A.shape().size() != 2 || B.shape().size() != 2 || A.shape()[1] != B.shape()[1])
    throw std::invalid_argument("matmul_tB: incompatible shapes " + shape_str(A.shape()) + " x " +
                                shape_str(B.shape()) + "^T");
  const int64_t m = A.shape()[0], k = A.shape()[1], n = B.shape()[0];
  Tensor out = detail::make_out({m, n}, {A, B});
  gemm_nt(A.data(), B.data(), out.data(), m, k, n);
  detail::set_backfn(out, [m, k, n](TensorImpl& self) {
    TensorImpl& A = *self.parents[0];
    TensorImpl& B = *self.parents[1];
    if (A.requires_grad) {
      A.ensure_grad();
      gemm_nn(self.grad.data(), B.data.data(), A.grad.data(), m, n, k);
    }
    if (B.requires_grad) {
      B.ensure_grad();
      gemm_tn(self.grad.data(), A.data.data(), B.grad.data(), n, m, k);
    }
  });
  return out;
}

// X[N,C] + b[C] broadcast over rows
inline Tensor add_rowvec(const Tensor& X, const Tensor& b) {
  if (X.shape().size() != 2 || b.shape().size() != 1 || X.shape()[1] != b.shape()[0])
    throw std::invalid_argument("add_rowvec: incompatible " + shape_str(X.shape()) + " + " +
                                shape_str(b.shape()));
  const int64_t n = X.shape()[0], c = X.shape()[1];
  Tensor out = detail::make_out({n, c}, {X, b});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < c; ++j) out.data()[i * c + j] = X.data()[i * c + j] + b.data()[j];
  detail::set_backfn(out, [n, c](TensorImpl& self) {
    TensorImpl& X = *self.parents[0];
    TensorImpl& b = *self.parents[1];
    if (X.requires_grad) {
      X.ensure_grad();
      for (size_t i = 0; i < X.grad.size(); ++i) X.grad[i] += self.grad[i];
    }
    if (b.requires_grad) {
      b.ensure_grad();
      for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < c; ++j) b.grad[(size_t)j] += self.grad[i * c + j];
    }
  });
  return out;
}

// ---- conv2d ----

namespace detail {
inline void im2col2d(const double* x, int64_t H, int64_t W, int64_t C, int64_t kh, int64_t kw,
                     int64_t pad, int64_t Ho, int64_t Wo, double* cols) {
  // cols: [Ho*Wo, kh*kw*C], patch element order (dy, dx, c)
  const int64_t K = kh * kw * C;
  for (int64_t oy = 0; oy < Ho; ++oy)
    for (int64_t ox = 0; ox < Wo; ++ox) {
      double* dst = cols + (oy * Wo + ox) * K;
      for (int64_t dy = 0; dy < kh; ++dy) {
        const int64_t iy = oy + dy - pad;
        for (int64_t dx = 0; dx < kw; ++dx) {
          const int64_t ix = ox + dx - pad;
          double* d = dst + (dy * kw + dx) * C;
          if (iy < 0 || iy >= H || ix < 0 || ix >= W) {
            for (int64_t c = 0; c < C; ++c) d[c] = 0.0;
          } else {
            const double* s = x + (iy * W + ix) * C;
            for (int64_t c = 0; c < C; ++c) d[c] = s[c];
          }
        }
      }
    }
}
}  // namespace detail

// x[H,W,Ci], k[kh,kw,Ci,Co], zero padding; output [H',W',Co] with
// H' = H + 2*pad - kh + 1 (rejected if not positive)
inline Tensor conv2d(const Tensor& x, const Tensor& k, int64_t pad) {
  if (x.shape().size() != 3 || k.shape().size() != 4 || x.shape()[2] != k.shape()[2])
    throw std::invalid_argument("conv2d: incompatible shapes " + shape_str(x.shape()) + " * " +
                                shape_str(k.shape()));
  const int64_t H = x.shape()[0], W = x.shape()[1], Ci = x.shape()[2];
  const int64_t kh = k.shape()[0], kw = k.shape()[1], Co = k.shape()[3];
  const int64_t Ho = H + 2 * pad - kh + 1, Wo = W + 2 * pad - kw + 1;
  if (Ho < 1 || Wo < 1)
    throw std::invalid_argument("conv2d: kernel " + shape_str(k.shape()) + " too large for input " +
                                shape_str(x.shape()) + " with pad " + std::to_string(pad));
  const int64_t K = kh * kw * Ci;
  std::vector<double> cols((size_t)(Ho * Wo) * K);
  detail::im2col2d(x.data(), H, W, Ci, kh, kw, pad, Ho, Wo, cols.data());
  Tensor out = detail::make_out({Ho, Wo, Co}, {x, k});
  gemm_nn(cols.data(), k.data(), out.data(), Ho * Wo, K, Co);
  detail::set_backfn(out, [H, W, Ci, kh, kw, pad, Ho, Wo, Co, K](TensorImpl& self) {
    TensorImpl& x = *self.parents[0];
    TensorImpl& k = *self.parents[1];
    if (k.requires_grad) {
      k.ensure_grad();
      std::vector<double> cols((size_t)(Ho * Wo) * K);
      detail::im2col2d(x.data.data(), H, W, Ci, kh, kw, pad, Ho, Wo, cols.data());
      gemm_tn(cols.data(), self.grad.data(), k.grad.data(), K, Ho * Wo, Co);
    }
    if (x.requires_grad) {
      x.ensure_grad();
      std::vector<double> dcols((size_t)(Ho * Wo) * K, 0.0);
      gemm_nt(self.grad.data(), k.data.data(), dcols.data(), Ho * Wo, Co, K);
      for (int64_t oy = 0; oy < Ho; ++oy)
        for (int64_t ox = 0; ox < Wo; ++ox) {
          const double* src = dcols.data() + (oy * Wo + ox) * K;
          for (int64_t dy = 0; dy < kh; ++dy) {
            const int64_t iy = oy + dy - pad;
            if (iy < 0 || iy >= H) continue;
            for (int64_t dx = 0; dx < kw; ++dx) {
              const int64_t ix = ox + dx - pad;
              if (ix < 0 || ix >= W) continue;
              double* d = x.grad.data() + (iy * W + ix) * Ci;
              const double* s = src + (dy * kw + dx) * Ci;
              for (int64_t c = 0; c < Ci; ++c) d[c] += s[c];
            }
          }
        }
    }
  });
  return out;
}

// ---- temporal conv ----

// x[T, ..., C], k[kt, C]; output drops the leading time dim. Kernel index is
// the lag: k[0,:] multiplies the most recent frame.
inline Tensor conv_temporal(const Tensor& x, const Tensor& k) {
  if (x.shape().size() < 2 || k.shape().size() != 2 || x.shape().back() != k.shape()[1])
    throw std::invalid_argument("conv_temporal: incompatible shapes " + shape_str(x.shape()) +
                                " * " + shape_str(k.shape()));
  const int64_t T = x.shape()[0], kt = k.shape()[0], C = x.shape().back();
  if (kt > T)
    throw std::invalid_argument("conv_temporal: kernel taps " + std::to_string(kt) +
                                " exceed frames " + std::to_string(T));
  const int64_t M = x.size() / (T * C);  // flattened spatial extent
  Shape so(x.shape().begin() + 1, x.shape().end());
  Tensor out = detail::make_out(std::move(so), {x, k});
  for (int64_t j = 0; j < kt; ++j) {
    const double* frame = x.data() + (T - 1 - j) * M * C;
    const double* kj = k.data() + j * C;
    double* o = out.data();
    for (int64_t m = 0; m < M; ++m)
      for (int64_t c = 0; c < C; ++c) o[m * C + c] += frame[m * C + c] * kj[c];
  }
  detail::set_backfn(out, [T, kt, C, M](TensorImpl& self) {
    TensorImpl& x = *self.parents[0];
    TensorImpl& k = *self.parents[1];
    if (x.requires_grad) {
      x.ensure_grad();
      for (int64_t j = 0; j < kt; ++j) {
        double* dframe = x.grad.data() + (T - 1 - j) * M * C;
        const double* kj = k.data.data() + j * C;
        for (int64_t m = 0; m < M; ++m)
          for (int64_t c = 0; c < C; ++c) dframe[m * C + c] += self.grad[m * C + c] * kj[c];
      }
    }
    if (k.requires_grad) {
      k.ensure_grad();
      for (int64_t j = 0; j < kt; ++j) {
        const double* frame = x.data.data() + (T - 1 - j) * M * C;
        double* dkj = k.grad.data() + j * C;
        for (int64_t m = 0; m < M; ++m)
          for (int64_t c = 0; c < C; ++c) dkj[c] += self.grad[m * C + c] * frame[m * C + c];
      }
    }
  });
  return out;
}

// ---- 3d conv (3x3x3, spatial pad 1, zero temporal padding outside [0,T)) ----

// x[T,H,W,Ci], k[3,3,3,Ci,Co]. Output frames cover input times [t_lo, t_hi).
inline Tensor conv3d_3x3x3(const Tensor& x, const Tensor& k, int64_t t_lo, int64_t t_hi) {
  if (x.shape().size() != 4 || k.shape().size() != 5 || x.shape()[3] != k.shape()[3] ||
      k.shape()[0] != 3 || k.shape()[1] != 3 || k.shape()[2] != 3)
    throw std::invalid_argument("conv3d: incompatible shapes " + shape_str(x.shape()) + " * " +
                                shape_str(k.shape()));
  const int64_t T = x.shape()[0], H = x.shape()[1], W = x.shape()[2], Ci = x.shape()[3];
  const int64_t Co = k.shape()[4];
  if (t_lo >= t_hi)
    throw std::invalid_argument("conv3d: empty frame range");
  const int64_t To = t_hi - t_lo;
  Tensor out = detail::make_out({To, H, W, Co}, {x, k});
  const double* kd = k.data();
  double* od = out.data();
#pragma omp parallel for schedule(static)
  for (int64_t oi = 0; oi < To * H; ++oi) {
    const int64_t ot = oi / H, y = oi % H;
    const int64_t t = t_lo + ot;
    for (int64_t xx = 0; xx < W; ++xx) {
      double* o = od + ((ot * H + y) * W + xx) * Co;
      for (int64_t dt = 0; dt < 3; ++dt) {
        const int64_t it = t + dt - 1;
        if (it < 0 || it >= T) continue;
        for (int64_t dy = 0; dy < 3; ++dy) {
          const int64_t iy = y + dy - 1;
          if (iy < 0 || iy >= H) continue;
          for (int64_t dx = 0; dx < 3; ++dx) {
            const int64_t ix = xx + dx - 1;
            if (ix < 0 || ix >= W) continue;
            const double* s = x.data() + (((it * H) + iy) * W + ix) * Ci;
            const double* kk = kd + (((dt * 3) + dy) * 3 + dx) * Ci * Co;
            for (int64_t ci = 0; ci < Ci; ++ci) {
              const double sv = s[ci];
              const double* kc = kk + ci * Co;
              for (int64_t co = 0; co < Co; ++co) o[co] += sv * kc[co];
            }
          }
        }
      }
    }
  }
  detail::set_backfn(out, [T, H, W, Ci, Co, t_lo, To](TensorImpl& self) {
    TensorImpl& x = *self.parents[0];
    TensorImpl& k = *self.parents[1];
    if (x.requires_grad) {
      x.ensure_grad();
      // gather form: each input cell collects from the outputs that used it
      for (int64_t it = 0; it < T; ++it)
        for (int64_t iy = 0; iy < H; ++iy)
          for (int64_t ix = 0; ix < W; ++ix) {
            double* dx_ = x.grad.data() + ((it * H + iy) * W + ix) * Ci;
            for (int64_t dt = 0; dt < 3; ++dt) {
              const int64_t ot = it - (dt - 1) - t_lo;
              if (ot < 0 || ot >= To) continue;
              for (int64_t dy = 0; dy < 3; ++dy) {
                const int64_t oy = iy - (dy - 1);
                if (oy < 0 || oy >= H) continue;
                for (int64_t dxp = 0; dxp < 3; ++dxp) {
                  const int64_t ox = ix - (dxp - 1);
                  if (ox < 0 || ox >= W) continue;
                  const double* g = self.grad.data() + ((ot * H + oy) * W + ox) * Co;
                  const double* kk =
                      k.data.data() + (((dt * 3) + dy) * 3 + dxp) * Ci * Co;
                  for (int64_t ci = 0; ci < Ci; ++ci) {
                    double acc = 0;
                    const double* kc = kk + ci * Co;
                    for (int64_t co = 0; co < Co; ++co) acc += g[co] * kc[co];
                    dx_[ci] += acc;
                  }
                }
              }
            }
          }
    }
    if (k.requires_grad) {
      k.ensure_grad();
      for (int64_t ot = 0; ot < To; ++ot) {
        const int64_t t = t_lo + ot;
        for (int64_t y = 0; y < H; ++y)
          for (int64_t xx = 0; xx < W; ++xx) {
            const double* g = self.grad.data() + ((ot * H + y) * W + xx) * Co;
            for (int64_t dt = 0; dt < 3; ++dt) {
              const int64_t it = t + dt - 1;
              if (it < 0 || it >= T) continue;
              for (int64_t dy = 0; dy < 3; ++dy) {
                const int64_t iy = y + dy - 1;
                if (iy < 0 || iy >= H) continue;
                for (int64_t dxp = 0; dxp < 3; ++dxp) {
                  const int64_t ix = xx + dxp - 1;
                  if (ix < 0 || ix >= W) continue;
                  const double* s = x.data.data() + ((it * H + iy) * W + ix) * Ci;
                  double* dk = k.grad.data() + (((dt * 3) + dy) * 3 + dxp) * Ci * Co;
                  for (int64_t ci = 0; ci < Ci; ++ci) {
                    const double sv = s[ci];
                    double* kc = dk + ci * Co;
                    for (int64_t co = 0; co < Co; ++co) kc[co] += sv * g[co];
                  }
                }
              }
            }
          }
      }
    }
  });
  return out;
}

// contiguous frame slice x[t0:t1] of a [T,...] tensor
inline Tensor slice_frames(const Tensor& x, int64_t t0, int64_t t1) {
  const int64_t T = x.shape()[0];
  if (t0 < 0 || t1 > T || t0 >= t1)
    throw std::invalid_argument("slice_frames: range [" + std::to_string(t0) + "," +
                                std::to_string(t1) + ") out of " + std::to_string(T) + " frames");
  const int64_t M = x.size() / T;
  Shape so = x.shape();
  so[0] = t1 - t0;
  Tensor out = detail::make_out(std::move(so), {x});
  std::copy(x.data() + t0 * M, x.data() + t1 * M, out.data());
  detail::set_backfn(out, [t0, M](TensorImpl& self) {
    TensorImpl& x = *self.parents[0];
    x.ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) x.grad[t0 * M + (int64_t)i] += self.grad[i];
  });
  return out;
}

// ---- depthwise 3x3, pad 1, channel-last ----

inline Tensor depthwise3x3(const Tensor& x, const Tensor& k) {
  if (x.shape().size() != 3 || k.shape().size() != 3 || k.shape()[0] != 3 || k.shape()[1] != 3 ||
      k.shape()[2] != x.shape()[2])
    throw std::invalid_argument("depthwise3x3: incompatible shapes " + shape_str(x.shape()) +
                                " * " + shape_str(k.shape()));
  const int64_t H = x.shape()[0], W = x.shape()[1], C = x.shape()[2];
  Tensor out = detail::make_out({H, W, C}, {x, k});
  for (int64_t y = 0; y < H; ++y)
    for (int64_t xx = 0; xx < W; ++xx) {
      double* o = out.data() + (y * W + xx) * C;
      for (int64_t dy = 0; dy < 3; ++dy) {
        const int64_t iy = y + dy - 1;
        if (iy < 0 || iy >= H) continue;
        for (int64_t dx = 0; dx < 3; ++dx) {
          const int64_t ix = xx + dx - 1;
          if (ix < 0 || ix >= W) continue;
          const double* s = x.data() + (iy * W + ix) * C;
          const double* kk = k.data() + (dy * 3 + dx) * C;
          for (int64_t c = 0; c < C; ++c) o[c] += s[c] * kk[c];
        }
      }
    }
  detail::set_backfn(out, [H, W, C](TensorImpl& self) {
    TensorImpl& x = *self.parents[0];
    TensorImpl& k = *self.parents[1];
    if (x.requires_grad) {
      x.ensure_grad();
      for (int64_t iy = 0; iy < H; ++iy)
        for (int64_t ix = 0; ix < W; ++ix) {
          double* d = x.grad.data() + (iy * W + ix) * C;
          for (int64_t dy = 0; dy < 3; ++dy) {
            const int64_t oy = iy - (dy - 1);
            if (oy < 0 || oy >= H) continue;
            for (int64_t dx = 0; dx < 3; ++dx) {
              const int64_t ox = ix - (dx - 1);
              if (ox < 0 || ox >= W) continue;
              const double* g = self.grad.data() + (oy * W + ox) * C;
              const double* kk = k.data.data() + (dy * 3 + dx) * C;
              for (int64_t c = 0; c < C; ++c) d[c] += g[c] * kk[c];
            }
          }
        }
    }
    if (k.requires_grad) {
      k.ensure_grad();
      for (int64_t y = 0; y < H; ++y)
        for (int64_t xx = 0; xx < W; ++xx) {
          const double* g = self.grad.data() + (y * W + xx) * C;
          for (int64_t dy = 0; dy < 3; ++dy) {
            const int64_t iy = y + dy - 1;
            if (iy < 0 || iy >= H) continue;
            for (int64_t dx = 0; dx < 3; ++dx) {
              const int64_t ix = xx + dx - 1;
              if (ix < 0 || ix >= W) continue;
              const double* s = x.data.data() + (iy * W + ix) * C;
              double* dk = k.grad.data() + (dy * 3 + dx) * C;
              for (int64_t c = 0; c < C; ++c) dk[c] += s[c] * g[c];
            }
          }
        }
    }
  });
  return out;
}

// ---- bilinear resize, channel-last ----

namespace detail {
struct ResizeTaps {
  std::vector<int64_t> i0, i1;
  std::vector<double> w;  // weight of i1; (1-w) goes to i0
};
inline ResizeTaps resize_taps(int64_t in, int64_t out) {
  ResizeTaps t;
  t.i0.resize(out);
  t.i1.resize(out);
  t.w.resize(out);
  const double scale = (double)in / (double)out;
  for (int64_t i = 0; i < out; ++i) {
    double src = (i + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    if (src > in - 1) src = (double)(in - 1);
    const int64_t lo = (int64_t)src;
    t.i0[i] = lo;
    t.i1[i] = lo + 1 < in ? lo + 1 : in - 1;
    t.w[i] = src - (double)lo;
  }
  return t;
}
}  // namespace detail

inline Tensor bilinear_resize(const Tensor& x, int64_t H2, int64_t W2) {
  if (x.shape().size() != 3)
    throw std::invalid_argument("bilinear_resize: expected [H,W,C], got " + shape_str(x.shape()));
  const int64_t H = x.shape()[0], W = x.shape()[1], C = x.shape()[2];
  if (H2 < 1 || W2 < 1) throw std::invalid_argument("bilinear_resize: empty target");
  auto ty = detail::resize_taps(H, H2);
  auto tx = detail::resize_taps(W, W2);
  Tensor out = detail::make_out({H2, W2, C}, {x});
  for (int64_t y = 0; y < H2; ++y) {
    const int64_t y0 = ty.i0[y], y1 = ty.i1[y];
    const double wy = ty.w[y];
    for (int64_t xx = 0; xx < W2; ++xx) {
      const int64_t x0 = tx.i0[xx], x1 = tx.i1[xx];
      const double wx = tx.w[xx];
      const double* p00 = x.data() + (y0 * W + x0) * C;
      const double* p01 = x.data() + (y0 * W + x1) * C;
      const double* p10 = x.data() + (y1 * W + x0) * C;
      const double* p11 = x.data() + (y1 * W + x1) * C;
      double* o = out.data() + (y * W2 + xx) * C;
      for (int64_t c = 0; c < C; ++c)
        o[c] = (1 - wy) * ((1 - wx) * p00[c] + wx * p01[c]) +
               wy * ((1 - wx) * p10[c] + wx * p11[c]);
    }
  }
  detail::set_backfn(out, [H, W, C, H2, W2](TensorImpl& self) {
    TensorImpl& x = *self.parents[0];
    x.ensure_grad();
    auto ty = detail::resize_taps(H, H2);
    auto tx = detail::resize_taps(W, W2);
    for (int64_t y = 0; y < H2; ++y) {
      const int64_t y0 = ty.i0[y], y1 = ty.i1[y];
      const double wy = ty.w[y];
      for (int64_t xx = 0; xx < W2; ++xx) {
        const int64_t x0 = tx.i0[xx], x1 = tx.i1[xx];
        const double wx = tx.w[xx];
        const double* g = self.grad.data() + (y * W2 + xx) * C;
        double* g00 = x.grad.data() + (y0 * W + x0) * C;
        double* g01 = x.grad.data() + (y0 * W + x1) * C;
        double* g10 = x.grad.data() + (y1 * W + x0) * C;
        double* g11 = x.grad.data() + (y1 * W + x1) * C;
        for (int64_t c = 0; c < C; ++c) {
          g00[c] += (1 - wy) * (1 - wx) * g[c];
          g01[c] += (1 - wy) * wx * g[c];
          g10[c] += wy * (1 - wx) * g[c];
          g11[c] += wy * wx * g[c];
        }
      }
    }
  });
  return out;
}

// ---- fused normalizations ----

// y[r,c] = K * x[r,c] / (sum_c x[r,c] + sig); x [R,C], K and sig 1-element
inline Tensor divisive_normalize_rows(const Tensor& x, const Tensor& K, const Tensor& sig) {
  if (x.shape().size() != 2)
    throw std::invalid_argument("divisive_normalize: expected [R,C], got " + shape_str(x.shape()));
  detail::check_scalar(K, "divisive_normalize");
  detail::check_scalar(sig, "divisive_normalize");
  const int64_t R = x.shape()[0], C = x.shape()[1];
  Tensor out = detail::make_out({R, C}, {x, K, sig});
  const double kv = K[0], sv = sig[0];
  for (int64_t r = 0; r < R; ++r) {
    const double* xr = x.data() + r * C;
    double s = 0;
    for (int64_t c = 0; c < C; ++c) s += xr[c];
    const double inv = 1.0 / (s + sv);
    double* o = out.data() + r * C;
    for (int64_t c = 0; c < C; ++c) o[c] = kv * xr[c] * inv;
  }
  detail::set_backfn(out, [R, C](TensorImpl& self) {
    TensorImpl& x = *self.parents[0];
    TensorImpl& K = *self.parents[1];
    TensorImpl& sig = *self.parents[2];
    const double kv = K.data[0], sv = sig.data[0];
    double dK = 0, dsig = 0;
    if (x.requires_grad) x.ensure_grad();
    for (int64_t r = 0; r < R; ++r) {
      const double* xr = x.data.data() + r * C;
      const double* g = self.grad.data() + r * C;
      const double* y = self.data.data() + r * C;
      double s = 0, gy = 0;
      for (int64_t c = 0; c < C; ++c) {
        s += xr[c];
        gy += g[c] * y[c];
      }
      const double inv = 1.0 / (s + sv);
      if (x.requires_grad) {
        double* dx = x.grad.data() + r * C;
        for (int64_t c = 0; c < C; ++c) dx[c] += (kv * g[c] - gy) * inv;
      }
      dK += gy / kv;
      dsig -= gy * inv;
    }
    if (K.requires_grad) {
      K.ensure_grad();
      K.grad[0] += dK;
    }
    if (sig.requires_grad) {
      sig.ensure_grad();
      sig.grad[0] += dsig;
    }
  });
  return out;
}

// y[n,c] = K * x[n,c]^2 / (sum_n x[n,c]^2 + sig^2); x [N,C]
inline Tensor square_column_normalize(const Tensor& x, const Tensor& K, const Tensor& sig) {
  if (x.shape().size() != 2)
    throw std::invalid_argument("square_column_normalize: expected [N,C], got " +
                                shape_str(x.shape()));
  detail::check_scalar(K, "square_column_normalize");
  detail::check_scalar(sig, "square_column_normalize");
  const int64_t N = x.shape()[0], C = x.shape()[1];
  Tensor out = detail::make_out({N, C}, {x, K, sig});
  const double kv = K[0], s2 = sig[0] * sig[0];
  std::vector<double> colsum((size_t)C, s2);
  for (int64_t n = 0; n < N; ++n) {
    const double* xr = x.data() + n * C;
    for (int64_t c = 0; c < C; ++c) colsum[(size_t)c] += xr[c] * xr[c];
  }
  for (int64_t n = 0; n < N; ++n) {
    const double* xr = x.data() + n * C;
    double* o = out.data() + n * C;
    for (int64_t c = 0; c < C; ++c) o[c] = kv * xr[c] * xr[c] / colsum[(size_t)c];
  }
  detail::set_backfn(out, [N, C](TensorImpl& self) {
    TensorImpl& x = *self.parents[0];
    TensorImpl& K = *self.parents[1];
    TensorImpl& sig = *self.parents[2];
    const double kv = K.data[0], sv = sig.data[0];
    std::vector<double> colsum((size_t)C, sv * sv);
    std::vector<double> gy_col((size_t)C, 0.0);
    for (int64_t n = 0; n < N; ++n) {
      const double* xr = x.data.data() + n * C;
      const double* g = self.grad.data() + n * C;
      const double* y = self.data.data() + n * C;
      for (int64_t c = 0; c < C; ++c) {
        colsum[(size_t)c] += xr[c] * xr[c];
        gy_col[(size_t)c] += g[c] * y[c];
      }
    }
    if (x.requires_grad) {
      x.ensure_grad();
      for (int64_t n = 0; n < N; ++n) {
        const double* xr = x.data.data() + n * C;
        const double* g = self.grad.data() + n * C;
        double* dx = x.grad.data() + n * C;
        for (int64_t c = 0; c < C; ++c)
          dx[c] += 2.0 * xr[c] / colsum[(size_t)c] * (kv * g[c] - gy_col[(size_t)c]);
      }
    }
    if (K.requires_grad) {
      K.ensure_grad();
      double acc = 0;
      for (int64_t c = 0; c < C; ++c) acc += gy_col[(size_t)c];
      K.grad[0] += acc / kv;
    }
    if (sig.requires_grad) {
      sig.ensure_grad();
      double acc = 0;
      for (int64_t c = 0; c < C; ++c) acc -= gy_col[(size_t)c] / colsum[(size_t)c];
      sig.grad[0] += acc * 2.0 * sv;
    }
  });
  return out;
}

// rows scaled to unit Euclidean norm; rows with norm < 1e-30 map to zero
inline Tensor row_normalize(const Tensor& x) {
  if (x.shape().size() != 2)
    throw std::invalid_argument("row_normalize: expected 2-d, got " + shape_str(x.shape()));
  const int64_t N = x.shape()[0], C = x.shape()[1];
  Tensor out = detail::make_out({N, C}, {x});
  for (int64_t n = 0; n < N; ++n) {
    const double* xr = x.data() + n * C;
    double s = 0;
    for (int64_t c = 0; c < C; ++c) s += xr[c] * xr[c];
    const double nrm = std::sqrt(s);
    double* o = out.data() + n * C;
    if (nrm < 1e-30) {
      for (int64_t c = 0; c < C; ++c) o[c] = 0.0;
    } else {
      const double inv = 1.0 / nrm;
      for (int64_t c = 0; c < C; ++c) o[c] = xr[c] * inv;
    }
  }
  detail::set_backfn(out, [N, C](TensorImpl& self) {
    TensorImpl& x = *self.parents[0];
    x.ensure_grad();
    for (int64_t n = 0; n < N; ++n) {
      const double* xr = x.data.data() + n * C;
      const double* g = self.grad.data() + n * C;
      double s = 0, xg = 0;
      for (int64_t c = 0; c < C; ++c) {
        s += xr[c] * xr[c];
        xg += xr[c] * g[c];
      }
      const double nrm = std::sqrt(s);
      if (nrm < 1e-30) continue;
      const double inv = 1.0 / nrm, inv3 = inv * inv * inv;
      double* dx = x.grad.data() + n * C;
      for (int64_t c = 0; c < C; ++c) dx[c] += g[c] * inv - xr[c] * xg * inv3;
    }
  });
  return out;
}

// y[i,j] = x[i,j] * u[i] * u[j] for square x
inline Tensor sym_scale(const Tensor& x, const Tensor& u) {
  if (x.shape().size() != 2 || x.shape()[0] != x.shape()[1] || u.shape().size() != 1 ||
      u.shape()[0] != x.shape()[0])
    throw std::invalid_argument("sym_scale: incompatible " + shape_str(x.shape()) + " with " +
                                shape_str(u.shape()));
  const int64_t N = x.shape()[0];
  Tensor out = detail::make_out({N, N}, {x, u});
  for (int64_t i = 0; i < N; ++i)
    for (int64_t j = 0; j < N; ++j) {
      const double w = u[i] * u[j];
      out.data()[i * N + j] = x.data()[i * N + j] * w;
    }
  detail::set_backfn(out, [N](TensorImpl& self) {
    TensorImpl& x = *self.parents[0];
    TensorImpl& u = *self.parents[1];
    if (x.requires_grad) {
      x.ensure_grad();
      for (int64_t i = 0; i < N; ++i)
        for (int64_t j = 0; j < N; ++j) {
          const double w = u.data[(size_t)i] * u.data[(size_t)j];
          x.grad[i * N + j] += self.grad[i * N + j] * w;
        }
    }
    if (u.requires_grad) {
      u.ensure_grad();
      for (int64_t a = 0; a < N; ++a) {
        double acc = 0;
        for (int64_t j = 0; j < N; ++j)
          acc += self.grad[a * N + j] * x.data[a * N + j] * u.data[(size_t)j];
        for (int64_t i = 0; i < N; ++i)
          acc += self.grad[i * N + a] * x.data[i * N + a] * u.data[(size_t)i];
        u.grad[(size_t)a] += acc;
      }
    }
  });
  return out;
}

// ---- fused quadrature energy ----
//
// R[F,P,2U]: per-frame spatial filter responses, column 2u from the even
// (real) kernel of unit u, column 2u+1 from the odd (imaginary) kernel.
// tre/tim [U,F]: temporal kernel taps per unit (index = lag, frame F-1 is the
// most recent so lag j reads R[F-1-j]). a1[U]: additive response offset.
// E[p,u] = (Le + a1)^2 + (Lo + a1)^2 with
//   Le =  sum_j R[F-1-j,p,2u]  *tre[u,j] - R[F-1-j,p,2u+1]*tim[u,j]
//   Lo =  sum_j R[F-1-j,p,2u+1]*tre[u,j] + R[F-1-j,p,2u]  *tim[u,j]
// ---- single-channel frame sequences ----

// x[F,H,W] -> [F,H2,W2], each frame resized independently.
inline Tensor bilinear_resize_seq(const Tensor& x, int64_t H2, int64_t W2) {
  if (x.shape().size() != 3)
    throw std::invalid_argument("bilinear_resize_seq: expected [F,H,W], got " +
                                shape_str(x.shape()));
  const int64_t F = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
  if (H2 < 1 || W2 < 1) throw std::invalid_argument("bilinear_resize_seq: empty target");
  auto ty = detail::resize_taps(H, H2);
  auto tx = detail::resize_taps(W, W2);
  Tensor out = detail::make_out({F, H2, W2}, {x});
  for (int64_t f = 0; f < F; ++f) {
    const double* src = x.data() + f * H * W;
    double* dst = out.data() + f * H2 * W2;
    for (int64_t y = 0; y < H2; ++y) {
      const int64_t y0 = ty.i0[y], y1 = ty.i1[y];
      const double wy = ty.w[y];
      for (int64_t xx = 0; xx < W2; ++xx) {
        const int64_t x0 = tx.i0[xx], x1 = tx.i1[xx];
        const double wx = tx.w[xx];
        dst[y * W2 + xx] = (1 - wy) * ((1 - wx) * src[y0 * W + x0] + wx * src[y0 * W + x1]) +
                           wy * ((1 - wx) * src[y1 * W + x0] + wx * src[y1 * W + x1]);
      }
    }
  }
  detail::set_backfn(out, [F, H, W, H2, W2](TensorImpl& self) {
    TensorImpl& x = *self.parents[0];
    if (!x.requires_grad) return;
    x.ensure_grad();
    auto ty = detail::resize_taps(H, H2);
    auto tx = detail::resize_taps(W, W2);
    for (int64_t f = 0; f < F; ++f) {
      const double* g = self.grad.data() + f * H2 * W2;
      double* dx = x.grad.data() + f * H * W;
      for (int64_t y = 0; y < H2; ++y) {
        const int64_t y0 = ty.i0[y], y1 = ty.i1[y];
        const double wy = ty.w[y];
        for (int64_t xx = 0; xx < W2; ++xx) {
          const int64_t x0 = tx.i0[xx], x1 = tx.i1[xx];
          const double wx = tx.w[xx];
          const double gv = g[y * W2 + xx];
          dx[y0 * W + x0] += (1 - wy) * (1 - wx) * gv;
          dx[y0 * W + x1] += (1 - wy) * wx * gv;
          dx[y1 * W + x0] += wy * (1 - wx) * gv;
          dx[y1 * W + x1] += wy * wx * gv;
        }
      }
    }
  });
  return out;
}

// x[F,H,W] -> [F*P, kh*kw] where P = rows.size()*cols.size(). Row f*P + p
// holds the zero-padded kh x kw patch of frame f centered at
// (rows[p / nc], cols[p % nc]), flattened in (dy, dx) order. Matches the
// im2col patch layout, so patches * kernel-matrix is a convolution evaluated
// only at the listed positions.
inline Tensor gather_patches_seq(const Tensor& x, std::vector<int64_t> rows,
                                 std::vector<int64_t> cols, int64_t kh, int64_t kw) {
  if (x.shape().size() != 3)
    throw std::invalid_argument("gather_patches_seq: expected [F,H,W], got " +
                                shape_str(x.shape()));
  const int64_t F = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
  const int64_t nr = (int64_t)rows.size(), nc = (int64_t)cols.size();
  if (nr == 0 || nc == 0) throw std::invalid_argument("gather_patches_seq: no positions");
  for (int64_t r : rows)
    if (r < 0 || r >= H) throw std::invalid_argument("gather_patches_seq: row out of range");
  for (int64_t c : cols)
    if (c < 0 || c >= W) throw std::invalid_argument("gather_patches_seq: col out of range");
  const int64_t P = nr * nc, K = kh * kw, py = kh / 2, px = kw / 2;
  Tensor out = detail::make_out({F * P, K}, {x});
  for (int64_t f = 0; f < F; ++f) {
    const double* src = x.data() + f * H * W;
    for (int64_t ri = 0; ri < nr; ++ri)
      for (int64_t ci = 0; ci < nc; ++ci) {
        double* dst = out.data() + ((f * P) + ri * nc + ci) * K;
        const int64_t r = rows[(size_t)ri], c = cols[(size_t)ci];
        for (int64_t dy = 0; dy < kh; ++dy) {
          const int64_t iy = r + dy - py;
          for (int64_t dx = 0; dx < kw; ++dx) {
            const int64_t ix = c + dx - px;
            dst[dy * kw + dx] =
                (iy < 0 || iy >= H || ix < 0 || ix >= W) ? 0.0 : src[iy * W + ix];
          }
        }
      }
  }
  detail::set_backfn(
      out, [F, H, W, nr, nc, P, kh, kw, py, px, rows = std::move(rows),
            cols = std::move(cols)](TensorImpl& self) {
        TensorImpl& x = *self.parents[0];
        if (!x.requires_grad) return;
        x.ensure_grad();
        const int64_t K = kh * kw;
        for (int64_t f = 0; f < F; ++f) {
          double* dx = x.grad.data() + f * H * W;
          for (int64_t ri = 0; ri < nr; ++ri)
            for (int64_t ci = 0; ci < nc; ++ci) {
              const double* g = self.grad.data() + ((f * P) + ri * nc + ci) * K;
              const int64_t r = rows[(size_t)ri], c = cols[(size_t)ci];
              for (int64_t dy = 0; dy < kh; ++dy) {
                const int64_t iy = r + dy - py;
                if (iy < 0 || iy >= H) continue;
                for (int64_t dx_ = 0; dx_ < kw; ++dx_) {
                  const int64_t ix = c + dx_ - px;
                  if (ix < 0 || ix >= W) continue;
                  dx[iy * W + ix] += g[dy * kw + dx_];
                }
              }
            }
        }
      });
  return out;
}

// a[R,C], b[R,C] -> [R,2C] with out[:,2c] = a[:,c] and out[:,2c+1] = b[:,c].
inline Tensor interleave_cols(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || a.shape() != b.shape())
    throw std::invalid_argument("interleave_cols: incompatible shapes " + shape_str(a.shape()) +
                                " / " + shape_str(b.shape()));
  const int64_t R = a.shape()[0], C = a.shape()[1];
  Tensor out = detail::make_out({R, 2 * C}, {a, b});
  for (int64_t r = 0; r < R; ++r)
    for (int64_t c = 0; c < C; ++c) {
      out.data()[r * 2 * C + 2 * c] = a[r * C + c];
      out.data()[r * 2 * C + 2 * c + 1] = b[r * C + c];
    }
  detail::set_backfn(out, [R, C](TensorImpl& self) {
    TensorImpl& a = *self.parents[0];
    TensorImpl& b = *self.parents[1];
    if (a.requires_grad) {
      a.ensure_grad();
      for (int64_t r = 0; r < R; ++r)
        for (int64_t c = 0; c < C; ++c) a.grad[r * C + c] += self.grad[r * 2 * C + 2 * c];
    }
    if (b.requires_grad) {
      b.ensure_grad();
      for (int64_t r = 0; r < R; ++r)
        for (int64_t c = 0; c < C; ++c) b.grad[r * C + c] += self.grad[r * 2 * C + 2 * c + 1];
    }
  });
  return out;
}

inline Tensor quadrature_energy(const Tensor& R, const Tensor& tre, const Tensor& tim,
                                const Tensor& a1) {
  if (R.shape().size() != 3 || tre.shape().size() != 2 || tim.shape() != tre.shape() ||
      a1.shape().size() != 1)
    throw std::invalid_argument("quadrature_energy: bad shapes " + shape_str(R.shape()) + ", " +
                                shape_str(tre.shape()) + ", " + shape_str(a1.shape()));
  const int64_t F = R.shape()[0], P = R.shape()[1], U2 = R.shape()[2];
  const int64_t U = tre.shape()[0], Fk = tre.shape()[1];
  if (U2 != 2 * U || Fk != F || a1.shape()[0] != U)
    throw std::invalid_argument("quadrature_energy: inconsistent unit/frame counts " +
                                shape_str(R.shape()) + " vs " + shape_str(tre.shape()));
  Tensor out = detail::make_out({P, U}, {R, tre, tim, a1});
  // Le/Lo are saved for the backward pass via a captured buffer.
  auto saved = std::make_shared<std::vector<double>>((size_t)(2 * P * U));
  double* le = saved->data();
  double* lo = saved->data() + P * U;
  for (int64_t p = 0; p < P; ++p)
    for (int64_t u = 0; u < U; ++u) {
      double e = 0, o = 0;
      for (int64_t j = 0; j < F; ++j) {
        const double re = R[(F - 1 - j) * P * U2 + p * U2 + 2 * u];
        const double im = R[(F - 1 - j) * P * U2 + p * U2 + 2 * u + 1];
        const double tr = tre[u * F + j], ti = tim[u * F + j];
        e += re * tr - im * ti;
        o += im * tr + re * ti;
      }
      le[p * U + u] = e;
      lo[p * U + u] = o;
      const double a = a1[u];
      out.data()[p * U + u] = (e + a) * (e + a) + (o + a) * (o + a);
    }
  detail::set_backfn(out, [F, P, U, U2, saved](TensorImpl& self) {
    TensorImpl& R = *self.parents[0];
    TensorImpl& tre = *self.parents[1];
    TensorImpl& tim = *self.parents[2];
    TensorImpl& a1 = *self.parents[3];
    const double* le = saved->data();
    const double* lo = saved->data() + P * U;
    if (R.requires_grad) R.ensure_grad();
    if (tre.requires_grad) tre.ensure_grad();
    if (tim.requires_grad) tim.ensure_grad();
    if (a1.requires_grad) a1.ensure_grad();
    for (int64_t p = 0; p < P; ++p)
      for (int64_t u = 0; u < U; ++u) {
        const double g = self.grad[p * U + u];
        if (g == 0.0) continue;
        const double a = a1.data[(size_t)u];
        const double ge = 2.0 * (le[p * U + u] + a) * g;
        const double go = 2.0 * (lo[p * U + u] + a) * g;
        if (a1.requires_grad) a1.grad[(size_t)u] += ge + go;
        for (int64_t j = 0; j < F; ++j) {
          const size_t ri = (size_t)((F - 1 - j) * P * U2 + p * U2 + 2 * u);
          const double re = R.data[ri], im = R.data[ri + 1];
          const double tr = tre.data[u * F + j], ti = tim.data[u * F + j];
          if (R.requires_grad) {
            R.grad[ri] += ge * tr + go * ti;
            R.grad[ri + 1] += -ge * ti + go * tr;
          }
          if (tre.requires_grad) tre.grad[u * F + j] += ge * re + go * im;
          if (tim.requires_grad) tim.grad[u * F + j] += -ge * im + go * re;
        }
      }
  });
  return out;
}

}  // namespace meflow
