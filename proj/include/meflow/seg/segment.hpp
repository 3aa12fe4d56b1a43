#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "meflow/core/tensor.hpp"

// Training-free spectral segmentation of the motion graph: symmetrically
// normalized Laplacian, its second eigenvector found by deflating the known
// near-null direction (sqrt of the degrees), mean-threshold bipartition, and
// an optional 3x3 majority refinement on the feature grid.
//
// Everything here is plain numerics on values; nothing participates in
// differentiation.

namespace meflow {

namespace detail {

// Householder reduction of symmetric a (row-major n*n, overwritten with the
// accumulated orthogonal transform) to tridiagonal d/e.
inline void tred2(std::vector<double>& a, int64_t n, std::vector<double>& d,
                  std::vector<double>& e) {
  auto V = [&](int64_t r, int64_t c) -> double& { return a[(size_t)(r * n + c)]; };
  d.assign((size_t)n, 0.0);
  e.assign((size_t)n, 0.0);
  for (int64_t j = 0; j < n; ++j) d[(size_t)j] = V(n - 1, j);

  for (int64_t i = n - 1; i > 0; --i) {
    double scale = 0, h = 0;
    for (int64_t k = 0; k < i; ++k) scale += std::abs(d[(size_t)k]);
    if (scale == 0.0) {
      e[(size_t)i] = d[(size_t)(i - 1)];
      for (int64_t j = 0; j < i; ++j) {
        d[(size_t)j] = V(i - 1, j);
        V(i, j) = 0.0;
        V(j, i) = 0.0;
      }
    } else {
      for (int64_t k = 0; k < i; ++k) {
        d[(size_t)k] /= scale;
        h += d[(size_t)k] * d[(size_t)k];
      }
      double f = d[(size_t)(i - 1)];
      double g = std::sqrt(h);
      if (f > 0) g = -g;
      e[(size_t)i] = scale * g;
      h -= f * g;
      d[(size_t)(i - 1)] = f - g;
      for (int64_t j = 0; j < i; ++j) e[(size_t)j] = 0.0;

      for (int64_t j = 0; j < i; ++j) {
        f = d[(size_t)j];
        V(j, i) = f;
        g = e[(size_t)j] + V(j, j) * f;
        for (int64_t k = j + 1; k <= i - 1; ++k) {
          g += V(k, j) * d[(size_t)k];
          e[(size_t)k] += V(k, j) * f;
        }
        e[(size_t)j] = g;
      }
      f = 0;
      for (int64_t j = 0; j < i; ++j) {
        e[(size_t)j] /= h;
        f += e[(size_t)j] * d[(size_t)j];
      }
      const double hh = f / (h + h);
      for (int64_t j = 0; j < i; ++j) e[(size_t)j] -= hh * d[(size_t)j];
      for (int64_t j = 0; j < i; ++j) {
        f = d[(size_t)j];
        g = e[(size_t)j];
        for (int64_t k = j; k <= i - 1; ++k) V(k, j) -= f * e[(size_t)k] + g * d[(size_t)k];
        d[(size_t)j] = V(i - 1, j);
        V(i, j) = 0.0;
      }
    }
    d[(size_t)i] = h;
  }

  for (int64_t i = 0; i < n - 1; ++i) {
    V(n - 1, i) = V(i, i);
    V(i, i) = 1.0;
    const double h = d[(size_t)(i + 1)];
    if (h != 0.0) {
      for (int64_t k = 0; k <= i; ++k) d[(size_t)k] = V(k, i + 1) / h;
      for (int64_t j = 0; j <= i; ++j) {
        double g = 0;
        for (int64_t k = 0; k <= i; ++k) g += V(k, i + 1) * V(k, j);
        for (int64_t k = 0; k <= i; ++k) V(k, j) -= g * d[(size_t)k];
      }
    }
    for (int64_t k = 0; k <= i; ++k) V(k, i + 1) = 0.0;
  }
  for (int64_t j = 0; j < n; ++j) {
    d[(size_t)j] = V(n - 1, j);
    V(n - 1, j) = 0.0;
  }
  V(n - 1, n - 1) = 1.0;
  e[0] = 0.0;
}

// Implicit-shift QL on tridiagonal d/e; z (row-major n*n) accumulates the
// eigenvectors as columns. On return d holds eigenvalues, ascending.
inline void tql2(std::vector<double>& d, std::vector<double>& e, std::vector<double>& z,
                 int64_t n) {
  auto V = [&](int64_t r, int64_t c) -> double& { return z[(size_t)(r * n + c)]; };
  for (int64_t i = 1; i < n; ++i) e[(size_t)(i - 1)] = e[(size_t)i];
  e[(size_t)(n - 1)] = 0.0;

  double f = 0, tst1 = 0;
  const double eps = std::pow(2.0, -52.0);
  for (int64_t l = 0; l < n; ++l) {
    tst1 = std::max(tst1, std::abs(d[(size_t)l]) + std::abs(e[(size_t)l]));
    int64_t m = l;
    while (m < n) {
      if (std::abs(e[(size_t)m]) <= eps * tst1) break;
      ++m;
    }
    if (m > l) {
      int iter = 0;
      do {
        if (++iter > 60) throw std::runtime_error("eigensolver: QL iteration failed");
        double g = d[(size_t)l];
        double p = (d[(size_t)(l + 1)] - g) / (2.0 * e[(size_t)l]);
        double r = std::hypot(p, 1.0);
        if (p < 0) r = -r;
        d[(size_t)l] = e[(size_t)l] / (p + r);
        d[(size_t)(l + 1)] = e[(size_t)l] * (p + r);
        const double dl1 = d[(size_t)(l + 1)];
        double h = g - d[(size_t)l];
        for (int64_t i = l + 2; i < n; ++i) d[(size_t)i] -= h;
        f += h;

        p = d[(size_t)m];
        double c = 1.0, c2 = c, c3 = c;
        const double el1 = e[(size_t)(l + 1)];
        double s = 0.0, s2 = 0.0;
        for (int64_t i = m - 1; i >= l; --i) {
          c3 = c2;
          c2 = c;
          s2 = s;
          g = c * e[(size_t)i];
          h = c * p;
          r = std::hypot(p, e[(size_t)i]);
          e[(size_t)(i + 1)] = s * r;
          s = e[(size_t)i] / r;
          c = p / r;
          p = c * d[(size_t)i] - s * g;
          d[(size_t)(i + 1)] = h + s * (c * g + s * d[(size_t)i]);
          for (int64_t k = 0; k < n; ++k) {
            h = V(k, i + 1);
            V(k, i + 1) = s * V(k, i) + c * h;
            V(k, i) = c * V(k, i) - s * h;
          }
        }
        p = -s * s2 * c3 * el1 * e[(size_t)l] / dl1;
        e[(size_t)l] = s * p;
        d[(size_t)l] = c * p;
      } while (std::abs(e[(size_t)l]) > eps * tst1);
    }
    d[(size_t)l] += f;
    e[(size_t)l] = 0.0;
  }

  for (int64_t i = 0; i < n - 1; ++i) {
    int64_t k = i;
    double p = d[(size_t)i];
    for (int64_t j = i + 1; j < n; ++j)
      if (d[(size_t)j] < p) {
        k = j;
        p = d[(size_t)j];
      }
    if (k != i) {
      std::swap(d[(size_t)k], d[(size_t)i]);
      for (int64_t j = 0; j < n; ++j) std::swap(V(j, i), V(j, k));
    }
  }
}

}  // namespace detail

inline void check_adjacency(const Tensor& A) {
  if (A.shape().size() != 2 || A.shape()[0] != A.shape()[1])
    throw std::invalid_argument("laplacian: expected a square matrix, got " +
                                shape_str(A.shape()));
  const int64_t N = A.shape()[0];
  if (N > 4096)
    throw std::invalid_argument("laplacian: " + std::to_string(N) +
                                " nodes exceed the 4096-node limit; downscale the input");
  for (int64_t i = 0; i < N; ++i)
    for (int64_t j = 0; j < N; ++j) {
      const double v = A[i * N + j];
      if (!std::isfinite(v) || v < 0.0)
        throw std::invalid_argument("laplacian: entry (" + std::to_string(i) + "," +
                                    std::to_string(j) + ") is negative or not finite");
      if (std::abs(v - A[j * N + i]) > 1e-8)
        throw std::invalid_argument("laplacian: matrix is not symmetric at (" +
                                    std::to_string(i) + "," + std::to_string(j) + ")");
    }
}

inline std::vector<double> degrees(const Tensor& A) {
  const int64_t N = A.shape()[0];
  std::vector<double> d((size_t)N, 0.0);
  for (int64_t i = 0; i < N; ++i) {
    double s = 0;
    for (int64_t j = 0; j < N; ++j) s += A[i * N + j];
    if (s <= 0.0)
      throw std::invalid_argument("laplacian: node " + std::to_string(i) + " has zero degree");
    d[(size_t)i] = s;
  }
  return d;
}

// D - A. Self-loop weight cancels between D and -A, so the diagonal is the
// off-diagonal row sum; summing a row with the diagonal last gives exactly 0.
inline Tensor combinatorial_laplacian(const Tensor& A) {
  check_adjacency(A);
  const int64_t N = A.shape()[0];
  Tensor L = Tensor::zeros({N, N});
  for (int64_t i = 0; i < N; ++i) {
    double deg = 0;
    for (int64_t j = 0; j < N; ++j) {
      if (j == i) continue;
      deg += A[i * N + j];
      L.data()[i * N + j] = -A[i * N + j];
    }
    L.data()[i * N + i] = deg;
  }
  return L;
}

// I - D^{-1/2} A D^{-1/2}
inline Tensor normalized_laplacian(const Tensor& A) {
  check_adjacency(A);
  auto d = degrees(A);
  const int64_t N = A.shape()[0];
  Tensor L = Tensor::zeros({N, N});
  for (int64_t i = 0; i < N; ++i)
    for (int64_t j = 0; j < N; ++j) {
      const double v = -A[i * N + j] / std::sqrt(d[(size_t)i] * d[(size_t)j]);
      L.data()[i * N + j] = v + (i == j ? 1.0 : 0.0);
    }
  return L;
}

// The exact null direction of the normalized Laplacian built from A.
inline std::vector<double> sqrt_degrees(const Tensor& A) {
  auto d = degrees(A);
  double n2 = 0;
  for (auto& v : d) {
    v = std::sqrt(v);
    n2 += v * v;
  }
  const double inv = 1.0 / std::sqrt(n2);
  for (auto& v : d) v *= inv;
  return d;
}

struct FiedlerResult {
  std::vector<double> u2;  // unit norm
  double lambda2 = 0;
  double residual = 0;  // ||L u2 - lambda2 u2||
};

namespace detail {

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// y = L x + kDeflate * near_null * (near_null . x)
constexpr double kDeflate = 3.0;

inline std::vector<double> deflated_matvec(const Tensor& L, const std::vector<double>& nn,
                                           const std::vector<double>& x) {
  const int64_t N = L.shape()[0];
  std::vector<double> y((size_t)N, 0.0);
  for (int64_t i = 0; i < N; ++i) {
    double s = 0;
    const double* row = L.data() + i * N;
    for (int64_t j = 0; j < N; ++j) s += row[j] * x[(size_t)j];
    y[(size_t)i] = s;
  }
  const double proj = kDeflate * dot(nn, x);
  for (int64_t i = 0; i < N; ++i) y[(size_t)i] += proj * nn[(size_t)i];
  return y;
}

inline FiedlerResult finish_fiedler(const Tensor& L, const std::vector<double>& nn,
                                    std::vector<double> u, double lambda2, double lambda3) {
  if (lambda3 - lambda2 < 1e-10)
    throw std::runtime_error("fiedler: degenerate spectrum, eigengap " +
                             std::to_string(lambda3 - lambda2) + " below 1e-10");
  const int64_t N = L.shape()[0];
  const double c = dot(nn, u);
  for (int64_t i = 0; i < N; ++i) u[(size_t)i] -= c * nn[(size_t)i];
  double n2 = std::sqrt(dot(u, u));
  if (n2 < 1e-12) throw std::runtime_error("fiedler: eigenvector collapsed onto the null space");
  for (auto& v : u) v /= n2;

  FiedlerResult res;
  std::vector<double> lu((size_t)N, 0.0);
  for (int64_t i = 0; i < N; ++i) {
    double s = 0;
    const double* row = L.data() + i * N;
    for (int64_t j = 0; j < N; ++j) s += row[j] * u[(size_t)j];
    lu[(size_t)i] = s;
  }
  res.lambda2 = dot(u, lu);
  double r2 = 0;
  for (int64_t i = 0; i < N; ++i) {
    const double d = lu[(size_t)i] - res.lambda2 * u[(size_t)i];
    r2 += d * d;
  }
  res.residual = std::sqrt(r2);
  if (res.residual >= 1e-6)
    throw std::runtime_error("fiedler: residual " + std::to_string(res.residual) +
                             " did not reach 1e-6");
  res.u2 = std::move(u);
  return res;
}

inline FiedlerResult fiedler_dense(const Tensor& L, const std::vector<double>& nn) {
  const int64_t N = L.shape()[0];
  std::vector<double> m((size_t)(N * N));
  for (int64_t i = 0; i < N; ++i)
    for (int64_t j = 0; j < N; ++j)
      m[(size_t)(i * N + j)] = L[i * N + j] + kDeflate * nn[(size_t)i] * nn[(size_t)j];
  std::vector<double> d, e;
  tred2(m, N, d, e);
  tql2(d, e, m, N);
  std::vector<double> u((size_t)N);
  for (int64_t i = 0; i < N; ++i) u[(size_t)i] = m[(size_t)(i * N + 0)];
  const double lambda3 = N > 1 ? d[1] : d[0];
  return finish_fiedler(L, nn, std::move(u), d[0], lambda3);
}

inline FiedlerResult fiedler_lanczos(const Tensor& L, const std::vector<double>& nn) {
  const int64_t N = L.shape()[0];
  const int64_t m_max = std::min<int64_t>(N - 1, 256);

  // deterministic start vector, orthogonal to the deflated direction
  std::vector<double> v((size_t)N);
  uint64_t state = 0x9e3779b97f4a7c15ull;
  for (int64_t i = 0; i < N; ++i) {
    state = state * 6364136223846793005ull + 1442695040888963407ull;
    v[(size_t)i] = (double)(state >> 11) * 0x1.0p-53 - 0.5;
  }
  const double c0 = dot(nn, v);
  for (int64_t i = 0; i < N; ++i) v[(size_t)i] -= c0 * nn[(size_t)i];
  double nv = std::sqrt(dot(v, v));
  for (auto& x : v) x /= nv;

  std::vector<std::vector<double>> basis{v};
  std::vector<double> alpha, beta;
  std::vector<double> prev;
  int64_t checkpoint = 48;

  for (int64_t k = 0; k < m_max; ++k) {
    std::vector<double> w = deflated_matvec(L, nn, basis[(size_t)k]);
    if (k > 0)
      for (int64_t i = 0; i < N; ++i) w[(size_t)i] -= beta[(size_t)(k - 1)] * prev[(size_t)i];
    const double a = dot(w, basis[(size_t)k]);
    alpha.push_back(a);
    for (int64_t i = 0; i < N; ++i) w[(size_t)i] -= a * basis[(size_t)k][(size_t)i];
    for (int pass = 0; pass < 2; ++pass)
      for (const auto& q : basis) {
        const double c = dot(w, q);
        for (int64_t i = 0; i < N; ++i) w[(size_t)i] -= c * q[(size_t)i];
      }
    const double b = std::sqrt(dot(w, w));
    const int64_t m = (int64_t)alpha.size();
    const bool exhausted = b < 1e-12;

    if (exhausted || m == m_max || m == checkpoint) {
      std::vector<double> td = alpha, te(alpha.size(), 0.0);
      for (size_t i = 1; i < alpha.size(); ++i) te[i] = beta[i - 1];
      std::vector<double> z((size_t)(m * m), 0.0);
      for (int64_t i = 0; i < m; ++i) z[(size_t)(i * m + i)] = 1.0;
      tql2(td, te, z, m);
      // Ritz vector for the smallest Ritz value
      std::vector<double> u((size_t)N, 0.0);
      for (int64_t j = 0; j < m; ++j) {
        const double w0 = z[(size_t)(j * m + 0)];
        for (int64_t i = 0; i < N; ++i) u[(size_t)i] += w0 * basis[(size_t)j][(size_t)i];
      }
      const double bound = exhausted ? 0.0 : b * std::abs(z[(size_t)((m - 1) * m + 0)]);
      if (exhausted || m == m_max || bound < 1e-8) {
        const double lambda3 = m > 1 ? td[1] : td[0] + 1.0;
        return finish_fiedler(L, nn, std::move(u), td[0], lambda3);
      }
      checkpoint = std::min<int64_t>(m_max, checkpoint * 2);
    }

    beta.push_back(b);
    prev = basis[(size_t)k];
    for (auto& x : w) x /= b;
    basis.push_back(std::move(w));
  }
  throw std::runtime_error("fiedler: Lanczos failed to converge");
}

}  // namespace detail

// Second eigenvector of a symmetric PSD Laplacian. near_null is the known
// near-null direction to deflate (sqrt_degrees of the adjacency for a
// normalized Laplacian). Dense solve up to 512 nodes, Lanczos with full
// reorthogonalization above.
inline FiedlerResult fiedler_vector(const Tensor& L, const std::vector<double>& near_null) {
  if (L.shape().size() != 2 || L.shape()[0] != L.shape()[1])
    throw std::invalid_argument("fiedler: expected a square matrix, got " +
                                shape_str(L.shape()));
  const int64_t N = L.shape()[0];
  if (N > 4096)
    throw std::invalid_argument("fiedler: " + std::to_string(N) +
                                " nodes exceed the 4096-node limit; downscale the input");
  if (N < 2) throw std::invalid_argument("fiedler: need at least two nodes");
  if ((int64_t)near_null.size() != N)
    throw std::invalid_argument("fiedler: null direction length " +
                                std::to_string(near_null.size()) + " does not match " +
                                std::to_string(N) + " nodes");
  return N <= 512 ? detail::fiedler_dense(L, near_null) : detail::fiedler_lanczos(L, near_null);
}

struct SegmentationMask {
  int64_t h = 0, w = 0;
  std::vector<uint8_t> fg;  // row-major, 1 = foreground side
  bool flipped_polarity = false;

  SegmentationMask flipped() const {
    SegmentationMask m = *this;
    for (auto& v : m.fg) v = v ? 0 : 1;
    m.flipped_polarity = !flipped_polarity;
    return m;
  }
};

// mask = u2 > mean(u2), reshaped onto the feature grid
inline SegmentationMask bipartition(const std::vector<double>& u2, int64_t h, int64_t w) {
  if ((int64_t)u2.size() != h * w)
    throw std::invalid_argument("bipartition: " + std::to_string(u2.size()) +
                                " values do not fill a " + std::to_string(h) + "x" +
                                std::to_string(w) + " grid");
  double mean = 0;
  for (double v : u2) mean += v;
  mean /= (double)u2.size();
  double lo = u2[0], hi = u2[0];
  for (double v : u2) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (hi - lo < 1e-14)
    throw std::runtime_error("bipartition: all vector entries are equal, mask is degenerate");
  SegmentationMask m;
  m.h = h;
  m.w = w;
  m.fg.resize(u2.size());
  for (size_t i = 0; i < u2.size(); ++i) m.fg[i] = u2[i] > mean ? 1 : 0;
  return m;
}

// 3x3 majority vote; ties keep the center value.
inline SegmentationMask majority_filter(const SegmentationMask& m) {
  SegmentationMask out = m;
  for (int64_t y = 0; y < m.h; ++y)
    for (int64_t x = 0; x < m.w; ++x) {
      int ones = 0, total = 0;
      for (int64_t dy = -1; dy <= 1; ++dy)
        for (int64_t dx = -1; dx <= 1; ++dx) {
          const int64_t iy = y + dy, ix = x + dx;
          if (iy < 0 || iy >= m.h || ix < 0 || ix >= m.w) continue;
          ++total;
          ones += m.fg[(size_t)(iy * m.w + ix)];
        }
      const int zeros = total - ones;
      if (ones > zeros)
        out.fg[(size_t)(y * m.w + x)] = 1;
      else if (zeros > ones)
        out.fg[(size_t)(y * m.w + x)] = 0;
    }
  return out;
}

// Full pipeline on a motion-graph adjacency whose nodes tile an h x w grid.
inline SegmentationMask segment(const Tensor& A, int64_t h, int64_t w, bool refine) {
  if (A.shape().size() != 2 || A.shape()[0] != h * w)
    throw std::invalid_argument("segment: adjacency " + shape_str(A.shape()) +
                                " does not match a " + std::to_string(h) + "x" +
                                std::to_string(w) + " grid");
  Tensor L = normalized_laplacian(A);
  FiedlerResult f = fiedler_vector(L, sqrt_degrees(A));
  SegmentationMask m = bipartition(f.u2, h, w);
  return refine ? majority_filter(m) : m;
}

struct MultiSegmentation {
  int64_t h = 0, w = 0;
  std::vector<uint8_t> labels;  // 0 = smaller first-cut side, 1/2 = re-cut halves
  int regions = 0;
};

// One recursive re-cut of the larger side of the first bipartition.
inline MultiSegmentation segment_multi(const Tensor& A, int64_t h, int64_t w, bool refine) {
  SegmentationMask first = segment(A, h, w, refine);
  const int64_t N = h * w;
  int64_t ones = 0;
  for (auto v : first.fg) ones += v;
  const uint8_t big = ones * 2 >= N ? 1 : 0;

  MultiSegmentation out;
  out.h = h;
  out.w = w;
  out.regions = 2;
  out.labels.resize((size_t)N);
  std::vector<int64_t> big_nodes;
  for (int64_t i = 0; i < N; ++i) {
    if (first.fg[(size_t)i] == big) {
      out.labels[(size_t)i] = 1;
      big_nodes.push_back(i);
    } else {
      out.labels[(size_t)i] = 0;
    }
  }
  const int64_t K = (int64_t)big_nodes.size();
  if (K < 4) return out;

  Tensor sub = Tensor::zeros({K, K});
  for (int64_t a = 0; a < K; ++a)
    for (int64_t b = 0; b < K; ++b)
      sub.data()[a * K + b] = A[big_nodes[(size_t)a] * N + big_nodes[(size_t)b]];
  try {
    Tensor L = normalized_laplacian(sub);
    FiedlerResult f = fiedler_vector(L, sqrt_degrees(sub));
    double mean = 0;
    for (double v : f.u2) mean += v;
    mean /= (double)K;
    double lo = f.u2[0], hi = f.u2[0];
    for (double v : f.u2) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    if (hi - lo < 1e-14) return out;
    for (int64_t a = 0; a < K; ++a)
      out.labels[(size_t)big_nodes[(size_t)a]] = f.u2[(size_t)a] > mean ? 2 : 1;
    out.regions = 3;
  } catch (const std::runtime_error&) {
    // degenerate sub-spectrum: keep the two-region result
  }
  return out;
}

}  // namespace meflow
