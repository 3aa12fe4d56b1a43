#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

// Minimal reverse-mode autodiff tape sized for this project: dense row-major
// double tensors, single-output ops, no broadcasting beyond 1-element
// scalar tensors. backward() walks the tape in reverse topological order
// exactly once, so gradient accumulation is deterministic.

namespace meflow {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string r = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) r += ",";
    r += std::to_string(s[i]);
  }
  return r + "]";
}

struct TensorImpl;
using TensorPtr = std::shared_ptr<TensorImpl>;

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // allocated on first use, zero-filled
  bool requires_grad = false;
  std::vector<TensorPtr> parents;
  std::function<void(TensorImpl&)> backfn;  // reads this->grad, accumulates into parents

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(TensorPtr p) : p_(std::move(p)) {}

  static Tensor zeros(Shape s, bool requires_grad = false) {
    auto p = std::make_shared<TensorImpl>();
    p->shape = std::move(s);
    p->data.assign(shape_numel(p->shape), 0.0);
    p->requires_grad = requires_grad;
    return Tensor(p);
  }
  static Tensor full(Shape s, double v, bool requires_grad = false) {
    Tensor t = zeros(std::move(s), requires_grad);
    for (double& x : t.p_->data) x = v;
    return t;
  }
  static Tensor from(Shape s, std::vector<double> v, bool requires_grad = false) {
    auto p = std::make_shared<TensorImpl>();
    if (shape_numel(s) != (int64_t)v.size())
      throw std::invalid_argument("tensor: data size " + std::to_string(v.size()) +
                                  " does not match shape " + shape_str(s));
    p->shape = std::move(s);
    p->data = std::move(v);
    p->requires_grad = requires_grad;
    return Tensor(p);
  }
  static Tensor scalar(double v, bool requires_grad = false) {
    return full({1}, v, requires_grad);
  }

  bool defined() const { return (bool)p_; }
  const Shape& shape() const { return p_->shape; }
  int64_t size() const { return (int64_t)p_->data.size(); }
  double* data() { return p_->data.data(); }
  const double* data() const { return p_->data.data(); }
  double& operator[](int64_t i) { return p_->data[(size_t)i]; }
  double operator[](int64_t i) const { return p_->data[(size_t)i]; }
  bool requires_grad() const { return p_->requires_grad; }
  double* grad() {
    p_->ensure_grad();
    return p_->grad.data();
  }
  void zero_grad() {
    p_->ensure_grad();
    std::fill(p_->grad.begin(), p_->grad.end(), 0.0);
  }
  double item() const {
    if (size() != 1)
      throw std::invalid_argument("item: tensor has " + std::to_string(size()) + " elements");
    return p_->data[0];
  }
  TensorPtr impl() const { return p_; }

 private:
  TensorPtr p_;
};

namespace detail {

inline Tensor make_out(Shape s, const std::vector<Tensor>& parents) {
  bool rg = false;
  for (const Tensor& t : parents) rg = rg || t.requires_grad();
  Tensor out = Tensor::zeros(std::move(s), rg);
  if (rg)
    for (const Tensor& t : parents) out.impl()->parents.push_back(t.impl());
  return out;
}

inline void set_backfn(Tensor& out, std::function<void(TensorImpl&)> fn) {
  if (out.requires_grad()) out.impl()->backfn = std::move(fn);
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
}

inline void check_scalar(const Tensor& s, const char* op) {
  if (s.size() != 1)
    throw std::invalid_argument(std::string(op) + ": expected 1-element tensor, got " +
                                shape_str(s.shape()));
}

}  // namespace detail

// ---- elementwise binary ----

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "add");
  Tensor out = detail::make_out(a.shape(), {a, b});
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (int64_t i = 0; i < out.size(); ++i) po[i] = pa[i] + pb[i];
  detail::set_backfn(out, [](TensorImpl& self) {
    for (int t = 0; t < 2; ++t) {
      TensorImpl& p = *self.parents[t];
      if (!p.requires_grad) continue;
      p.ensure_grad();
      for (size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += self.grad[i];
    }
  });
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "sub");
  Tensor out = detail::make_out(a.shape(), {a, b});
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (int64_t i = 0; i < out.size(); ++i) po[i] = pa[i] - pb[i];
  detail::set_backfn(out, [](TensorImpl& self) {
    TensorImpl& a = *self.parents[0];
    TensorImpl& b = *self.parents[1];
    if (a.requires_grad) {
      a.ensure_grad();
      for (size_t i = 0; i < a.grad.size(); ++i) a.grad[i] += self.grad[i];
    }
    if (b.requires_grad) {
      b.ensure_grad();
      for (size_t i = 0; i < b.grad.size(); ++i) b.grad[i] -= self.grad[i];
    }
  });
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "mul");
  Tensor out = detail::make_out(a.shape(), {a, b});
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (int64_t i = 0; i < out.size(); ++i) po[i] = pa[i] * pb[i];
  detail::set_backfn(out, [](TensorImpl& self) {
    TensorImpl& a = *self.parents[0];
    TensorImpl& b = *self.parents[1];
    if (a.requires_grad) {
      a.ensure_grad();
      for (size_t i = 0; i < a.grad.size(); ++i) a.grad[i] += self.grad[i] * b.data[i];
    }
    if (b.requires_grad) {
      b.ensure_grad();
      for (size_t i = 0; i < b.grad.size(); ++i) b.grad[i] += self.grad[i] * a.data[i];
    }
  });
  return out;
}

// ---- scalar-tensor (s is a 1-element tensor, possibly trainable) ----

inline Tensor add_scalar(const Tensor& a, const Tensor& s) {
  detail::check_scalar(s, "add_scalar");
  Tensor out = detail::make_out(a.shape(), {a, s});
  const double sv = s[0];
  const double* pa = a.data();
  double* po = out.data();
  for (int64_t i = 0; i < out.size(); ++i) po[i] = pa[i] + sv;
  detail::set_backfn(out, [](TensorImpl& self) {
    TensorImpl& a = *self.parents[0];
    TensorImpl& s = *self.parents[1];
    if (a.requires_grad) {
      a.ensure_grad();
      for (size_t i = 0; i < a.grad.size(); ++i) a.grad[i] += self.grad[i];
    }
    if (s.requires_grad) {
      s.ensure_grad();
      double acc = 0;
      for (size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i];
      s.grad[0] += acc;
    }
  });
  return out;
}

inline Tensor mul_scalar(const Tensor& a, const Tensor& s) {
  detail::check_scalar(s, "mul_scalar");
  Tensor out = detail::make_out(a.shape(), {a, s});
  const double sv = s[0];
  const double* pa = a.data();
  double* po = out.data();
  for (int64_t i = 0; i < out.size(); ++i) po[i] = pa[i] * sv;
  detail::set_backfn(out, [](TensorImpl& self) {
    TensorImpl& a = *self.parents[0];
    TensorImpl& s = *self.parents[1];
    if (a.requires_grad) {
      a.ensure_grad();
      const double sv = s.data[0];
      for (size_t i = 0; i < a.grad.size(); ++i) a.grad[i] += self.grad[i] * sv;
    }
    if (s.requires_grad) {
      s.ensure_grad();
      double acc = 0;
      for (size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * a.data[i];
      s.grad[0] += acc;
    }
  });
  return out;
}

// ---- constant variants ----

inline Tensor add_const(const Tensor& a, double c) {
  Tensor out = detail::make_out(a.shape(), {a});
  for (int64_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] + c;
  detail::set_backfn(out, [](TensorImpl& self) {
    TensorImpl& a = *self.parents[0];
    a.ensure_grad();
    for (size_t i = 0; i < a.grad.size(); ++i) a.grad[i] += self.grad[i];
  });
  return out;
}

inline Tensor mul_const(const Tensor& a, double c) {
  Tensor out = detail::make_out(a.shape(), {a});
  for (int64_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] * c;
  detail::set_backfn(out, [c](TensorImpl& self) {
    TensorImpl& a = *self.parents[0];
    a.ensure_grad();
    for (size_t i = 0; i < a.grad.size(); ++i) a.grad[i] += self.grad[i] * c;
  });
  return out;
}

// ---- elementwise unary ----

namespace detail {
template <class F, class DF>
inline Tensor unary_op(const Tensor& a, F f, DF df) {
  Tensor out = make_out(a.shape(), {a});
  const double* pa = a.data();
  double* po = out.data();
  for (int64_t i = 0; i < out.size(); ++i) po[i] = f(pa[i]);
  set_backfn(out, [df](TensorImpl& self) {
    TensorImpl& a = *self.parents[0];
    a.ensure_grad();
    for (size_t i = 0; i < a.grad.size(); ++i)
      a.grad[i] += self.grad[i] * df(a.data[i], self.data[i]);
  });
  return out;
}
}  // namespace detail

inline Tensor neg(const Tensor& a) {
  return detail::unary_op(a, [](double x) { return -x; },
                          [](double, double) { return -1.0; });
}
inline Tensor square(const Tensor& a) {
  return detail::unary_op(a, [](double x) { return x * x; },
                          [](double x, double) { return 2.0 * x; });
}
inline Tensor sqrt_t(const Tensor& a) {
  return detail::unary_op(a, [](double x) { return std::sqrt(x); },
                          [](double, double y) { return 0.5 / y; });
}
inline Tensor exp_t(const Tensor& a) {
  return detail::unary_op(a, [](double x) { return std::exp(x); },
                          [](double, double y) { return y; });
}
inline Tensor cos_t(const Tensor& a) {
  return detail::unary_op(a, [](double x) { return std::cos(x); },
                          [](double x, double) { return -std::sin(x); });
}
inline Tensor sin_t(const Tensor& a) {
  return detail::unary_op(a, [](double x) { return std::sin(x); },
                          [](double x, double) { return std::cos(x); });
}
inline Tensor recip(const Tensor& a) {
  return detail::unary_op(a, [](double x) { return 1.0 / x; },
                          [](double, double y) { return -y * y; });
}
inline Tensor rsqrt(const Tensor& a) {
  return detail::unary_op(a, [](double x) { return 1.0 / std::sqrt(x); },
                          [](double x, double y) { return -0.5 * y / x; });
}
inline Tensor relu(const Tensor& a) {
  return detail::unary_op(a, [](double x) { return x > 0 ? x : 0.0; },
                          [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}
inline Tensor sigmoid(const Tensor& a) {
  return detail::unary_op(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                          [](double, double y) { return y * (1.0 - y); });
}
inline Tensor tanh_t(const Tensor& a) {
  return detail::unary_op(a, [](double x) { return std::tanh(x); },
                          [](double, double y) { return 1.0 - y * y; });
}

// ---- reductions ----

inline Tensor sum_all(const Tensor& a) {
  Tensor out = detail::make_out({1}, {a});
  double acc = 0;
  const double* pa = a.data();
  for (int64_t i = 0; i < a.size(); ++i) acc += pa[i];
  out.data()[0] = acc;
  detail::set_backfn(out, [](TensorImpl& self) {
    TensorImpl& a = *self.parents[0];
    a.ensure_grad();
    const double g = self.grad[0];
    for (size_t i = 0; i < a.grad.size(); ++i) a.grad[i] += g;
  });
  return out;
}

inline Tensor mean_all(const Tensor& a) { return mul_const(sum_all(a), 1.0 / (double)a.size()); }

// y[i] = sum_j x[i,j] for a 2-d tensor
inline Tensor row_sum(const Tensor& a) {
  if (a.shape().size() != 2)
    throw std::invalid_argument("row_sum: expected 2-d tensor, got " + shape_str(a.shape()));
  const int64_t n = a.shape()[0], m = a.shape()[1];
  Tensor out = detail::make_out({n}, {a});
  for (int64_t i = 0; i < n; ++i) {
    double acc = 0;
    const double* r = a.data() + i * m;
    for (int64_t j = 0; j < m; ++j) acc += r[j];
    out.data()[i] = acc;
  }
  detail::set_backfn(out, [n, m](TensorImpl& self) {
    TensorImpl& a = *self.parents[0];
    a.ensure_grad();
    for (int64_t i = 0; i < n; ++i) {
      const double g = self.grad[(size_t)i];
      double* r = a.grad.data() + i * m;
      for (int64_t j = 0; j < m; ++j) r[j] += g;
    }
  });
  return out;
}

// ---- shape ----

inline Tensor reshape(const Tensor& a, Shape s) {
  if (shape_numel(s) != a.size())
    throw std::invalid_argument("reshape: cannot view " + shape_str(a.shape()) + " as " +
                                shape_str(s));
  Tensor out = detail::make_out(std::move(s), {a});
  std::copy(a.data(), a.data() + a.size(), out.data());
  detail::set_backfn(out, [](TensorImpl& self) {
    TensorImpl& a = *self.parents[0];
    a.ensure_grad();
    for (size_t i = 0; i < a.grad.size(); ++i) a.grad[i] += self.grad[i];
  });
  return out;
}

// concat along the last dimension; all leading dims must match
inline Tensor concat_last(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != sb.size() || sa.empty())
    throw std::invalid_argument("concat_last: rank mismatch " + shape_str(sa) + " vs " +
                                shape_str(sb));
  for (size_t i = 0; i + 1 < sa.size(); ++i)
    if (sa[i] != sb[i])
      throw std::invalid_argument("concat_last: leading dims differ " + shape_str(sa) + " vs " +
                                  shape_str(sb));
  const int64_t ca = sa.back(), cb = sb.back();
  const int64_t rows = shape_numel(sa) / ca;
  Shape so = sa;
  so.back() = ca + cb;
  Tensor out = detail::make_out(std::move(so), {a, b});
  for (int64_t r = 0; r < rows; ++r) {
    std::copy(a.data() + r * ca, a.data() + (r + 1) * ca, out.data() + r * (ca + cb));
    std::copy(b.data() + r * cb, b.data() + (r + 1) * cb, out.data() + r * (ca + cb) + ca);
  }
  detail::set_backfn(out, [rows, ca, cb](TensorImpl& self) {
    TensorImpl& a = *self.parents[0];
    TensorImpl& b = *self.parents[1];
    if (a.requires_grad) {
      a.ensure_grad();
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t j = 0; j < ca; ++j) a.grad[r * ca + j] += self.grad[r * (ca + cb) + j];
    }
    if (b.requires_grad) {
      b.ensure_grad();
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t j = 0; j < cb; ++j) b.grad[r * cb + j] += self.grad[r * (ca + cb) + ca + j];
    }
  });
  return out;
}

// stack n 1-d tensors of length r as the columns of an [r, n] matrix
inline Tensor stack_columns(const std::vector<Tensor>& cols) {
  if (cols.empty()) throw std::invalid_argument("stack_columns: empty input");
  const int64_t r = cols[0].size();
  const int64_t n = (int64_t)cols.size();
  for (const Tensor& c : cols)
    if (c.size() != r)
      throw std::invalid_argument("stack_columns: column length mismatch " + shape_str(c.shape()));
  Tensor out = detail::make_out({r, n}, cols);
  for (int64_t j = 0; j < n; ++j) {
    const double* src = cols[(size_t)j].data();
    for (int64_t i = 0; i < r; ++i) out.data()[i * n + j] = src[i];
  }
  detail::set_backfn(out, [r, n](TensorImpl& self) {
    for (int64_t j = 0; j < n; ++j) {
      TensorImpl& p = *self.parents[(size_t)j];
      if (!p.requires_grad) continue;
      p.ensure_grad();
      for (int64_t i = 0; i < r; ++i) p.grad[(size_t)i] += self.grad[i * n + j];
    }
  });
  return out;
}

// stack n 1-d tensors of length c as the rows of an [n, c] matrix
inline Tensor stack_rows(const std::vector<Tensor>& rows) {
  if (rows.empty()) throw std::invalid_argument("stack_rows: empty input");
  const int64_t c = rows[0].size();
  const int64_t n = (int64_t)rows.size();
  for (const Tensor& t : rows)
    if (t.size() != c)
      throw std::invalid_argument("stack_rows: row length mismatch " + shape_str(t.shape()));
  Tensor out = detail::make_out({n, c}, rows);
  for (int64_t i = 0; i < n; ++i)
    std::copy(rows[(size_t)i].data(), rows[(size_t)i].data() + c, out.data() + i * c);
  detail::set_backfn(out, [c, n](TensorImpl& self) {
    for (int64_t i = 0; i < n; ++i) {
      TensorImpl& p = *self.parents[(size_t)i];
      if (!p.requires_grad) continue;
      p.ensure_grad();
      for (int64_t j = 0; j < c; ++j) p.grad[(size_t)j] += self.grad[i * c + j];
    }
  });
  return out;
}

inline Tensor slice1d(const Tensor& a, int64_t i) {
  if (a.shape().size() != 1 || i < 0 || i >= a.size())
    throw std::invalid_argument("slice1d: index " + std::to_string(i) + " out of " +
                                shape_str(a.shape()));
  Tensor out = detail::make_out({1}, {a});
  out.data()[0] = a.data()[i];
  detail::set_backfn(out, [i](TensorImpl& self) {
    TensorImpl& a = *self.parents[0];
    a.ensure_grad();
    a.grad[(size_t)i] += self.grad[0];
  });
  return out;
}

// ---- backward ----

inline void backward(const Tensor& loss) {
  if (loss.size() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(loss.shape()));
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS; order is fixed by construction order of parents.
  std::vector<TensorImpl*> topo;
  std::unordered_set<TensorImpl*> seen;
  struct Frame {
    TensorImpl* node;
    size_t next;
  };
  std::vector<Frame> stack;
  stack.push_back({loss.impl().get(), 0});
  seen.insert(loss.impl().get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next < f.node->parents.size()) {
      TensorImpl* p = f.node->parents[f.next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      topo.push_back(f.node);
      stack.pop_back();
    }
  }

  loss.impl()->ensure_grad();
  loss.impl()->grad[0] += 1.0;
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    TensorImpl* n = *it;
    if (n->backfn) {
      n->ensure_grad();
      n->backfn(*n);
    }
  }
}

}  // namespace meflow
