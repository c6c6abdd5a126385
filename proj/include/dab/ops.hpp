#pragma once

// Differentiable op menu over Tensor/Tape.
//
// Every op validates shapes up front (errors name both shapes), computes its
// result eagerly, rejects non-finite results, and records a backward rule
// only when an operand is attached to a tape. Elementwise binary ops accept
// equal shapes or a trailing-shape operand broadcast over the leading batch
// dimension; nothing else broadcasts.
//
// Loss ops reduce sum-over-features, mean-over-batch unless stated otherwise.
// Targets of the classification losses are treated as constants.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dab/tensor.hpp"

namespace dab {

namespace detail {

inline void check_finite(const Tensor& t, const char* op) {
  for (double v : t.values()) {
    if (!std::isfinite(v)) {
      throw DomainError(std::string(op) + ": non-finite value in result");
    }
  }
}

inline Tape* common_tape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.attached() && b.attached() && a.tape() != b.tape()) {
    throw Error(std::string(op) + ": operands live on different tapes");
  }
  return a.attached() ? a.tape() : (b.attached() ? b.tape() : nullptr);
}

inline void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a rank-2 tensor, got " + shape_str(t.shape()));
  }
}

inline double sigmoid_stable(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log(1 + exp(x)) without overflow.
inline double softplus(double x) { return std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0); }

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMapC = Eigen::Map<const EMat>;
using EMap = Eigen::Map<EMat>;

// Shared implementation for elementwise unary ops. dfdx(x, y) is the local
// derivative expressed through input and output values.
template <typename F, typename DF>
Tensor unary_map(const Tensor& x, const char* name, F f, DF dfdx) {
  std::vector<double> vals(x.size());
  const double* xd = x.data();
  for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = f(xd[i]);
  Tensor y(x.shape(), std::move(vals));
  check_finite(y, name);
  if (!x.attached()) return y;
  Tape& tp = *x.tape();
  const std::size_t xn = x.node();
  const std::size_t n = x.size();
  Tensor xs = x.detached();
  return tp.attach(y, {xn}, [xs, y, xn, n, dfdx](std::span<const double> u, GradSlots& slots) {
    auto& g = ensure_slot(slots, xn, n);
    const double* xv = xs.data();
    const double* yv = y.data();
    for (std::size_t i = 0; i < n; ++i) g[i] += u[i] * dfdx(xv[i], yv[i]);
  });
}

enum class Broadcast { none, a_batched, b_batched };

inline Broadcast broadcast_mode(const Shape& a, const Shape& b, const char* op) {
  if (a == b) return Broadcast::none;
  auto tail_matches = [](const Shape& big, const Shape& small) {
    return big.size() == small.size() + 1 &&
           std::equal(big.begin() + 1, big.end(), small.begin());
  };
  if (tail_matches(a, b)) return Broadcast::a_batched;
  if (tail_matches(b, a)) return Broadcast::b_batched;
  throw ShapeError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                   " neither match nor batch-broadcast");
}

// Shared implementation for elementwise binary ops with leading-batch
// broadcast. dfa/dfb(a, b, y) are the local derivatives.
template <typename F, typename DFA, typename DFB>
Tensor binary_map(const Tensor& a, const Tensor& b, const char* name, F f, DFA dfa, DFB dfb) {
  const Broadcast mode = broadcast_mode(a.shape(), b.shape(), name);
  const Tensor& big = (mode == Broadcast::b_batched) ? b : a;
  const Tensor& small = (mode == Broadcast::b_batched) ? a : b;
  const std::size_t stride = (mode == Broadcast::none) ? big.size() : small.size();

  std::vector<double> vals(big.size());
  const double* ad = a.data();
  const double* bd = b.data();
  for (std::size_t i = 0; i < vals.size(); ++i) {
    const std::size_t j = i % stride;
    const double av = (mode == Broadcast::b_batched) ? ad[j] : ad[i];
    const double bv = (mode == Broadcast::b_batched) ? bd[i] : bd[mode == Broadcast::none ? i : j];
    vals[i] = f(av, bv);
  }
  Tensor y(big.shape(), std::move(vals));
  check_finite(y, name);

  Tape* tp = common_tape(a, b, name);
  if (!tp) return y;
  const bool a_live = a.attached();
  const bool b_live = b.attached();
  std::vector<std::size_t> parents;
  if (a_live) parents.push_back(a.node());
  if (b_live) parents.push_back(b.node());
  Tensor as = a.detached();
  Tensor bs = b.detached();
  const std::size_t an = a_live ? a.node() : kNoNode;
  const std::size_t bn = b_live ? b.node() : kNoNode;
  const std::size_t asize = a.size();
  const std::size_t bsize = b.size();
  return tp->attach(
      y, std::move(parents),
      [as, bs, y, an, bn, asize, bsize, mode, stride, dfa, dfb](std::span<const double> u,
                                                                GradSlots& slots) {
        const double* av = as.data();
        const double* bv = bs.data();
        const double* yv = y.data();
        const std::size_t n = u.size();
        if (an != kNoNode) {
          auto& ga = ensure_slot(slots, an, asize);
          for (std::size_t i = 0; i < n; ++i) {
            const std::size_t j = i % stride;
            const std::size_t ia = (mode == Broadcast::b_batched) ? j : i;
            const std::size_t ib =
                (mode == Broadcast::b_batched) ? i : (mode == Broadcast::none ? i : j);
            ga[ia] += u[i] * dfa(av[ia], bv[ib], yv[i]);
          }
        }
        if (bn != kNoNode) {
          auto& gb = ensure_slot(slots, bn, bsize);
          for (std::size_t i = 0; i < n; ++i) {
            const std::size_t j = i % stride;
            const std::size_t ia = (mode == Broadcast::b_batched) ? j : i;
            const std::size_t ib =
                (mode == Broadcast::b_batched) ? i : (mode == Broadcast::none ? i : j);
            gb[ib] += u[i] * dfb(av[ia], bv[ib], yv[i]);
          }
        }
      });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise unary ops
// ---------------------------------------------------------------------------

inline Tensor relu(const Tensor& x) {
  return detail::unary_map(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Tensor elu(const Tensor& x) {
  return detail::unary_map(
      x, "elu", [](double v) { return v > 0.0 ? v : std::expm1(v); },
      [](double v, double y) { return v > 0.0 ? 1.0 : y + 1.0; });
}

inline Tensor tanh(const Tensor& x) {
  return detail::unary_map(
      x, "tanh", [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

inline Tensor sigmoid(const Tensor& x) {
  return detail::unary_map(
      x, "sigmoid", [](double v) { return detail::sigmoid_stable(v); },
      [](double, double y) { return y * (1.0 - y); });
}

inline Tensor exp(const Tensor& x) {
  return detail::unary_map(
      x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

inline Tensor log(const Tensor& x) {
  for (double v : x.values()) {
    if (!(v > 0.0)) throw DomainError("log: input must be strictly positive");
  }
  return detail::unary_map(
      x, "log", [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

inline Tensor square(const Tensor& x) {
  return detail::unary_map(
      x, "square", [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

inline Tensor abs(const Tensor& x) {
  return detail::unary_map(
      x, "abs", [](double v) { return std::abs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

inline Tensor sqrt(const Tensor& x) {
  for (double v : x.values()) {
    if (v < 0.0) throw DomainError("sqrt: input must be non-negative");
  }
  return detail::unary_map(
      x, "sqrt", [](double v) { return std::sqrt(v); },
      [](double, double y) { return 0.5 / y; });
}

// Elementwise Huber value 0.5 x^2 (|x| <= delta) / delta (|x| - 0.5 delta).
inline Tensor huber_elem(const Tensor& x, double delta) {
  if (!(delta > 0.0)) throw ConfigError("huber_elem: delta must be positive");
  return detail::unary_map(
      x, "huber_elem",
      [delta](double v) {
        const double a = std::abs(v);
        return a <= delta ? 0.5 * v * v : delta * (a - 0.5 * delta);
      },
      [delta](double v, double) {
        if (std::abs(v) <= delta) return v;
        return v > 0.0 ? delta : -delta;
      });
}

inline Tensor scale(const Tensor& x, double c) {
  return detail::unary_map(
      x, "scale", [c](double v) { return c * v; }, [c](double, double) { return c; });
}

inline Tensor add_scalar(const Tensor& x, double c) {
  return detail::unary_map(
      x, "add_scalar", [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

inline Tensor neg(const Tensor& x) { return scale(x, -1.0); }

// ---------------------------------------------------------------------------
// Elementwise binary ops (equal shapes, or leading-batch broadcast)
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary_map(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary_map(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary_map(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double, double bv, double) { return bv; }, [](double av, double, double) { return av; });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
  return detail::binary_map(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double, double bv, double) { return 1.0 / bv; },
      [](double, double bv, double y) { return -y / bv; });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

// ---------------------------------------------------------------------------
// Matrix product (Eigen-backed kernel; rank-2 operands only)
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank2(a, "matmul");
  detail::require_rank2(b, "matmul");
  if (a.shape()[1] != b.shape()[0]) {
    throw ShapeError("matmul: inner dimensions differ: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  const std::size_t m = a.shape()[0];
  const std::size_t k = a.shape()[1];
  const std::size_t n = b.shape()[1];
  Tensor y(Shape{m, n});
  detail::EMap(y.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n)).noalias() =
      detail::EMapC(a.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k)) *
      detail::EMapC(b.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
  detail::check_finite(y, "matmul");

  Tape* tp = detail::common_tape(a, b, "matmul");
  if (!tp) return y;
  const std::size_t an = a.attached() ? a.node() : kNoNode;
  const std::size_t bn = b.attached() ? b.node() : kNoNode;
  std::vector<std::size_t> parents;
  if (an != kNoNode) parents.push_back(an);
  if (bn != kNoNode) parents.push_back(bn);
  Tensor as = a.detached();
  Tensor bs = b.detached();
  return tp->attach(y, std::move(parents),
                    [as, bs, an, bn, m, k, n](std::span<const double> u, GradSlots& slots) {
                      const auto mi = static_cast<Eigen::Index>(m);
                      const auto ki = static_cast<Eigen::Index>(k);
                      const auto ni = static_cast<Eigen::Index>(n);
                      detail::EMapC um(u.data(), mi, ni);
                      if (an != kNoNode) {
                        auto& ga = ensure_slot(slots, an, m * k);
                        detail::EMap(ga.data(), mi, ki).noalias() +=
                            um * detail::EMapC(bs.data(), ki, ni).transpose();
                      }
                      if (bn != kNoNode) {
                        auto& gb = ensure_slot(slots, bn, k * n);
                        detail::EMap(gb.data(), ki, ni).noalias() +=
                            detail::EMapC(as.data(), mi, ki).transpose() * um;
                      }
                    });
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  Tensor y(std::move(shape), x.to_vector());
  if (!x.attached()) return y;
  Tape& tp = *x.tape();
  const std::size_t xn = x.node();
  const std::size_t sz = x.size();
  return tp.attach(y, {xn}, [xn, sz](std::span<const double> u, GradSlots& slots) {
    auto& g = ensure_slot(slots, xn, sz);
    for (std::size_t i = 0; i < sz; ++i) g[i] += u[i];
  });
}

// Concatenate two rank-2 tensors along columns.
inline Tensor concat_cols(const Tensor& a, const Tensor& b) {
  detail::require_rank2(a, "concat_cols");
  detail::require_rank2(b, "concat_cols");
  if (a.shape()[0] != b.shape()[0]) {
    throw ShapeError("concat_cols: row counts differ: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  const std::size_t r = a.shape()[0];
  const std::size_t ca = a.shape()[1];
  const std::size_t cb = b.shape()[1];
  std::vector<double> vals(r * (ca + cb));
  for (std::size_t i = 0; i < r; ++i) {
    std::copy_n(a.data() + i * ca, ca, vals.data() + i * (ca + cb));
    std::copy_n(b.data() + i * cb, cb, vals.data() + i * (ca + cb) + ca);
  }
  Tensor y(Shape{r, ca + cb}, std::move(vals));
  Tape* tp = detail::common_tape(a, b, "concat_cols");
  if (!tp) return y;
  const std::size_t an = a.attached() ? a.node() : kNoNode;
  const std::size_t bn = b.attached() ? b.node() : kNoNode;
  std::vector<std::size_t> parents;
  if (an != kNoNode) parents.push_back(an);
  if (bn != kNoNode) parents.push_back(bn);
  return tp->attach(y, std::move(parents),
                    [an, bn, r, ca, cb](std::span<const double> u, GradSlots& slots) {
                      if (an != kNoNode) {
                        auto& ga = ensure_slot(slots, an, r * ca);
                        for (std::size_t i = 0; i < r; ++i)
                          for (std::size_t j = 0; j < ca; ++j)
                            ga[i * ca + j] += u[i * (ca + cb) + j];
                      }
                      if (bn != kNoNode) {
                        auto& gb = ensure_slot(slots, bn, r * cb);
                        for (std::size_t i = 0; i < r; ++i)
                          for (std::size_t j = 0; j < cb; ++j)
                            gb[i * cb + j] += u[i * (ca + cb) + ca + j];
                      }
                    });
}

// Columns [lo, hi) of a rank-2 tensor.
inline Tensor slice_cols(const Tensor& x, std::size_t lo, std::size_t hi) {
  detail::require_rank2(x, "slice_cols");
  const std::size_t r = x.shape()[0];
  const std::size_t c = x.shape()[1];
  if (lo >= hi || hi > c) {
    throw ShapeError("slice_cols: range [" + std::to_string(lo) + "," + std::to_string(hi) +
                     ") invalid for shape " + shape_str(x.shape()));
  }
  const std::size_t w = hi - lo;
  std::vector<double> vals(r * w);
  for (std::size_t i = 0; i < r; ++i) std::copy_n(x.data() + i * c + lo, w, vals.data() + i * w);
  Tensor y(Shape{r, w}, std::move(vals));
  if (!x.attached()) return y;
  Tape& tp = *x.tape();
  const std::size_t xn = x.node();
  return tp.attach(y, {xn}, [xn, r, c, lo, w](std::span<const double> u, GradSlots& slots) {
    auto& g = ensure_slot(slots, xn, r * c);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < w; ++j) g[i * c + lo + j] += u[i * w + j];
  });
}

// Rows [lo, hi) of a rank-2 tensor.
inline Tensor slice_rows(const Tensor& x, std::size_t lo, std::size_t hi) {
  detail::require_rank2(x, "slice_rows");
  const std::size_t r = x.shape()[0];
  const std::size_t c = x.shape()[1];
  if (lo >= hi || hi > r) {
    throw ShapeError("slice_rows: range [" + std::to_string(lo) + "," + std::to_string(hi) +
                     ") invalid for shape " + shape_str(x.shape()));
  }
  const std::size_t h = hi - lo;
  std::vector<double> vals(x.data() + lo * c, x.data() + hi * c);
  Tensor y(Shape{h, c}, std::move(vals));
  if (!x.attached()) return y;
  Tape& tp = *x.tape();
  const std::size_t xn = x.node();
  return tp.attach(y, {xn}, [xn, r, c, lo, h](std::span<const double> u, GradSlots& slots) {
    auto& g = ensure_slot(slots, xn, r * c);
    for (std::size_t i = 0; i < h * c; ++i) g[lo * c + i] += u[i];
  });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Tensor sum_all(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  Tensor y = Tensor::scalar(s);
  detail::check_finite(y, "sum_all");
  if (!x.attached()) return y;
  Tape& tp = *x.tape();
  const std::size_t xn = x.node();
  const std::size_t n = x.size();
  return tp.attach(y, {xn}, [xn, n](std::span<const double> u, GradSlots& slots) {
    auto& g = ensure_slot(slots, xn, n);
    for (std::size_t i = 0; i < n; ++i) g[i] += u[0];
  });
}

inline Tensor mean_all(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  const double inv = 1.0 / static_cast<double>(x.size());
  Tensor y = Tensor::scalar(s * inv);
  detail::check_finite(y, "mean_all");
  if (!x.attached()) return y;
  Tape& tp = *x.tape();
  const std::size_t xn = x.node();
  const std::size_t n = x.size();
  return tp.attach(y, {xn}, [xn, n, inv](std::span<const double> u, GradSlots& slots) {
    auto& g = ensure_slot(slots, xn, n);
    for (std::size_t i = 0; i < n; ++i) g[i] += u[0] * inv;
  });
}

// Row sums of a rank-2 tensor: [r, c] -> [r].
inline Tensor row_sum(const Tensor& x) {
  detail::require_rank2(x, "row_sum");
  const std::size_t r = x.shape()[0];
  const std::size_t c = x.shape()[1];
  std::vector<double> vals(r, 0.0);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) vals[i] += x.data()[i * c + j];
  Tensor y(Shape{r}, std::move(vals));
  detail::check_finite(y, "row_sum");
  if (!x.attached()) return y;
  Tape& tp = *x.tape();
  const std::size_t xn = x.node();
  return tp.attach(y, {xn}, [xn, r, c](std::span<const double> u, GradSlots& slots) {
    auto& g = ensure_slot(slots, xn, r * c);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += u[i];
  });
}

// ---------------------------------------------------------------------------
// Softmax and losses
// ---------------------------------------------------------------------------

// Row-wise softmax of a rank-2 tensor (numerically stabilized).
inline Tensor softmax_rows(const Tensor& x) {
  detail::require_rank2(x, "softmax_rows");
  const std::size_t r = x.shape()[0];
  const std::size_t c = x.shape()[1];
  std::vector<double> vals(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = x.data() + i * c;
    double m = row[0];
    for (std::size_t j = 1; j < c; ++j) m = std::max(m, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      vals[i * c + j] = std::exp(row[j] - m);
      z += vals[i * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) vals[i * c + j] /= z;
  }
  Tensor y(x.shape(), std::move(vals));
  detail::check_finite(y, "softmax_rows");
  if (!x.attached()) return y;
  Tape& tp = *x.tape();
  const std::size_t xn = x.node();
  return tp.attach(y, {xn}, [y, xn, r, c](std::span<const double> u, GradSlots& slots) {
    auto& g = ensure_slot(slots, xn, r * c);
    const double* s = y.data();
    for (std::size_t i = 0; i < r; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += u[i * c + j] * s[i * c + j];
      for (std::size_t j = 0; j < c; ++j) {
        g[i * c + j] += s[i * c + j] * (u[i * c + j] - dot);
      }
    }
  });
}

// Mean squared error over all elements; differentiates through both sides.
inline Tensor mse_loss(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("mse_loss: shapes differ: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  const std::size_t n = a.size();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a.data()[i] - b.data()[i];
    s += d * d;
  }
  Tensor y = Tensor::scalar(s / static_cast<double>(n));
  detail::check_finite(y, "mse_loss");
  Tape* tp = detail::common_tape(a, b, "mse_loss");
  if (!tp) return y;
  const std::size_t an = a.attached() ? a.node() : kNoNode;
  const std::size_t bn = b.attached() ? b.node() : kNoNode;
  std::vector<std::size_t> parents;
  if (an != kNoNode) parents.push_back(an);
  if (bn != kNoNode) parents.push_back(bn);
  Tensor as = a.detached();
  Tensor bs = b.detached();
  return tp->attach(y, std::move(parents),
                    [as, bs, an, bn, n](std::span<const double> u, GradSlots& slots) {
                      const double coef = 2.0 * u[0] / static_cast<double>(n);
                      if (an != kNoNode) {
                        auto& ga = ensure_slot(slots, an, n);
                        for (std::size_t i = 0; i < n; ++i)
                          ga[i] += coef * (as.data()[i] - bs.data()[i]);
                      }
                      if (bn != kNoNode) {
                        auto& gb = ensure_slot(slots, bn, n);
                        for (std::size_t i = 0; i < n; ++i)
                          gb[i] -= coef * (as.data()[i] - bs.data()[i]);
                      }
                    });
}

// Binary cross-entropy on logits against {0,1} targets (constants).
// Sum over features, mean over batch rows (rank-1 counts as one row).
inline Tensor bce_with_logits(const Tensor& logits, const Tensor& targets) {
  if (logits.shape() != targets.shape()) {
    throw ShapeError("bce_with_logits: shapes differ: " + shape_str(logits.shape()) + " vs " +
                     shape_str(targets.shape()));
  }
  if (targets.attached()) throw Error("bce_with_logits: targets must be constants");
  const std::size_t rows = logits.rows();
  const std::size_t n = logits.size();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = logits.data()[i];
    const double t = targets.data()[i];
    s += std::max(x, 0.0) - x * t + std::log1p(std::exp(-std::abs(x)));
  }
  Tensor y = Tensor::scalar(s / static_cast<double>(rows));
  detail::check_finite(y, "bce_with_logits");
  if (!logits.attached()) return y;
  Tape& tp = *logits.tape();
  const std::size_t xn = logits.node();
  Tensor xs = logits.detached();
  Tensor ts = targets.detached();
  return tp.attach(y, {xn}, [xs, ts, xn, n, rows](std::span<const double> u, GradSlots& slots) {
    auto& g = ensure_slot(slots, xn, n);
    const double coef = u[0] / static_cast<double>(rows);
    for (std::size_t i = 0; i < n; ++i) {
      g[i] += coef * (detail::sigmoid_stable(xs.data()[i]) - ts.data()[i]);
    }
  });
}

// Cross-entropy between row-wise softmax of logits and one-hot (or soft)
// target rows (constants); mean over rows.
inline Tensor softmax_cross_entropy(const Tensor& logits, const Tensor& targets) {
  detail::require_rank2(logits, "softmax_cross_entropy");
  if (logits.shape() != targets.shape()) {
    throw ShapeError("softmax_cross_entropy: shapes differ: " + shape_str(logits.shape()) +
                     " vs " + shape_str(targets.shape()));
  }
  if (targets.attached()) throw Error("softmax_cross_entropy: targets must be constants");
  const std::size_t r = logits.shape()[0];
  const std::size_t c = logits.shape()[1];
  Tensor probs = softmax_rows(logits.detached());
  double s = 0.0;
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = logits.data() + i * c;
    double m = row[0];
    for (std::size_t j = 1; j < c; ++j) m = std::max(m, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - m);
    const double lse = m + std::log(z);
    for (std::size_t j = 0; j < c; ++j) {
      const double t = targets.data()[i * c + j];
      if (t != 0.0) s += t * (lse - row[j]);
    }
  }
  Tensor y = Tensor::scalar(s / static_cast<double>(r));
  detail::check_finite(y, "softmax_cross_entropy");
  if (!logits.attached()) return y;
  Tape& tp = *logits.tape();
  const std::size_t xn = logits.node();
  Tensor ts = targets.detached();
  return tp.attach(y, {xn}, [probs, ts, xn, r, c](std::span<const double> u, GradSlots& slots) {
    auto& g = ensure_slot(slots, xn, r * c);
    const double coef = u[0] / static_cast<double>(r);
    for (std::size_t i = 0; i < r * c; ++i) {
      g[i] += coef * (probs.data()[i] - ts.data()[i]);
    }
  });
}

// KL( Bernoulli(sigmoid(logits)) || Bernoulli(prior_p) ), elementwise closed
// form; sum over features, mean over batch rows. Always >= 0.
inline Tensor bernoulli_kl(const Tensor& logits, double prior_p) {
  if (!(prior_p > 0.0 && prior_p < 1.0)) {
    throw ConfigError("bernoulli_kl: prior probability must lie strictly inside (0,1)");
  }
  const std::size_t rows = logits.rows();
  const std::size_t n = logits.size();
  const double log_p = std::log(prior_p);
  const double log_1p = std::log1p(-prior_p);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = logits.data()[i];
    const double q = detail::sigmoid_stable(x);
    const double log_q = -detail::softplus(-x);
    const double log_1q = -detail::softplus(x);
    const double kl = q * (log_q - log_p) + (1.0 - q) * (log_1q - log_1p);
    s += std::max(kl, 0.0);
  }
  Tensor y = Tensor::scalar(s / static_cast<double>(rows));
  detail::check_finite(y, "bernoulli_kl");
  if (!logits.attached()) return y;
  Tape& tp = *logits.tape();
  const std::size_t xn = logits.node();
  Tensor xs = logits.detached();
  const double logit_p = std::log(prior_p) - std::log1p(-prior_p);
  return tp.attach(y, {xn},
                   [xs, xn, n, rows, logit_p](std::span<const double> u, GradSlots& slots) {
                     auto& g = ensure_slot(slots, xn, n);
                     const double coef = u[0] / static_cast<double>(rows);
                     for (std::size_t i = 0; i < n; ++i) {
                       const double x = xs.data()[i];
                       const double q = detail::sigmoid_stable(x);
                       g[i] += coef * q * (1.0 - q) * (x - logit_p);
                     }
                   });
}

// ---------------------------------------------------------------------------
// Plain-value helpers (no tape involvement)
// ---------------------------------------------------------------------------

inline std::size_t argmax_span(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

inline std::vector<std::size_t> argmax_rows(const Tensor& x) {
  detail::require_rank2(x, "argmax_rows");
  const std::size_t r = x.shape()[0];
  const std::size_t c = x.shape()[1];
  std::vector<std::size_t> out(r);
  for (std::size_t i = 0; i < r; ++i) out[i] = argmax_span({x.data() + i * c, c});
  return out;
}

}  // namespace dab
