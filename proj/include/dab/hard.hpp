#pragma once

// The non-differentiable functions a bridge layer can wrap.
//
// All of them are pure value transforms: they never touch a tape, and the
// stochastic ones (bernoulli sampling, k-means seeding) draw from a caller
// supplied Rng so runs stay reproducible. Row-wise ops treat a rank-1 tensor
// as a single row.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "dab/ops.hpp"
#include "dab/rng.hpp"
#include "dab/tensor.hpp"

namespace dab {

enum class HardOp {
  signum_margin,
  binary_mean_threshold,
  sort_rows,
  sort_rows_cols,
  top_k,
  kmeans_assign,
  bernoulli_sample,
};

inline const char* to_string(HardOp op) {
  switch (op) {
    case HardOp::signum_margin: return "signum";
    case HardOp::binary_mean_threshold: return "binary";
    case HardOp::sort_rows: return "sort";
    case HardOp::sort_rows_cols: return "sortrc";
    case HardOp::top_k: return "topk";
    case HardOp::kmeans_assign: return "kmeans";
    case HardOp::bernoulli_sample: return "bernoulli";
  }
  return "?";
}

// A hard function plus its parameters; the unit a bridge is built around.
struct HardKind {
  HardOp op = HardOp::signum_margin;
  double eps = 0.5;         // signum margin half-width
  std::size_t k = 1;        // top_k / kmeans_assign
  std::size_t iters = 10;   // kmeans_assign refinement iterations

  static HardKind signum(double eps) { return HardKind{HardOp::signum_margin, eps, 1, 10}; }
  static HardKind binary() { return HardKind{HardOp::binary_mean_threshold, 0, 1, 10}; }
  static HardKind sort() { return HardKind{HardOp::sort_rows, 0, 1, 10}; }
  static HardKind sortrc() { return HardKind{HardOp::sort_rows_cols, 0, 1, 10}; }
  static HardKind topk(std::size_t k) { return HardKind{HardOp::top_k, 0, k, 10}; }
  static HardKind kmeans(std::size_t k, std::size_t iters) {
    return HardKind{HardOp::kmeans_assign, 0, k, iters};
  }
  static HardKind bernoulli() { return HardKind{HardOp::bernoulli_sample, 0, 1, 10}; }
};

inline bool is_stochastic(const HardKind& kind) { return kind.op == HardOp::bernoulli_sample; }

// Whether output shape equals input shape (straight-through requires it).
inline bool shape_preserving(const HardKind& kind) {
  return kind.op != HardOp::sort_rows_cols && kind.op != HardOp::top_k;
}

inline Shape hard_output_shape(const HardKind& kind, const Shape& in) {
  switch (kind.op) {
    case HardOp::sort_rows_cols: {
      Shape out = in;
      out.back() *= 2;
      return out;
    }
    case HardOp::top_k: {
      Shape out = in;
      out.back() = kind.k;
      return out;
    }
    default:
      return in;
  }
}

// Signum with a dead zone: -1 below -eps, 0 inside [-eps, eps], +1 above.
inline double signum_margin(double v, double eps) {
  if (eps < 0.0) throw ConfigError("signum_margin: eps must be non-negative");
  return v < -eps ? -1.0 : (v > eps ? 1.0 : 0.0);
}

inline Tensor signum_margin(const Tensor& x, double eps) {
  if (eps < 0.0) throw ConfigError("signum_margin: eps must be non-negative");
  std::vector<double> vals(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i];
    vals[i] = v < -eps ? -1.0 : (v > eps ? 1.0 : 0.0);
  }
  return Tensor(x.shape(), std::move(vals));
}

// 1 where the element reaches its row mean, else 0.
inline Tensor binary_mean_threshold(const Tensor& x) {
  const std::size_t r = x.rows();
  const std::size_t c = x.cols();
  std::vector<double> vals(x.size());
  for (std::size_t i = 0; i < r; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < c; ++j) mean += x[i * c + j];
    mean /= static_cast<double>(c);
    for (std::size_t j = 0; j < c; ++j) vals[i * c + j] = x[i * c + j] >= mean ? 1.0 : 0.0;
  }
  return Tensor(x.shape(), std::move(vals));
}

// Stable ascending argsort of one row.
inline std::vector<std::size_t> stable_argsort(std::span<const double> row) {
  std::vector<std::size_t> idx(row.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&row](std::size_t a, std::size_t b) { return row[a] < row[b]; });
  return idx;
}

// Each row sorted ascending; also returns the permutation (flattened row by
// row) that produced it, so out[i][j] == in[i][perm[i*c+j]].
inline std::pair<Tensor, std::vector<std::size_t>> sort_rows_perm(const Tensor& x) {
  const std::size_t r = x.rows();
  const std::size_t c = x.cols();
  std::vector<double> vals(x.size());
  std::vector<std::size_t> perm(x.size());
  for (std::size_t i = 0; i < r; ++i) {
    const std::vector<std::size_t> idx = stable_argsort({x.data() + i * c, c});
    for (std::size_t j = 0; j < c; ++j) {
      perm[i * c + j] = idx[j];
      vals[i * c + j] = x[i * c + idx[j]];
    }
  }
  return {Tensor(x.shape(), std::move(vals)), std::move(perm)};
}

inline Tensor sort_rows(const Tensor& x) { return sort_rows_perm(x).first; }

// Row-sorted block next to column-sorted block: [r, c] -> [r, 2c].
inline Tensor sort_rows_cols(const Tensor& x) {
  detail::require_rank2(x, "sort_rows_cols");
  const std::size_t r = x.shape()[0];
  const std::size_t c = x.shape()[1];
  Tensor row_part = sort_rows(x);
  std::vector<double> col_part(x.size());
  std::vector<double> column(r);
  for (std::size_t j = 0; j < c; ++j) {
    for (std::size_t i = 0; i < r; ++i) column[i] = x[i * c + j];
    std::stable_sort(column.begin(), column.end());
    for (std::size_t i = 0; i < r; ++i) col_part[i * c + j] = column[i];
  }
  return concat_cols(row_part, Tensor(Shape{r, c}, std::move(col_part)));
}

// Largest k entries of each row, descending: [r, c] -> [r, k].
inline Tensor top_k(const Tensor& x, std::size_t k) {
  const std::size_t r = x.rows();
  const std::size_t c = x.cols();
  if (k == 0 || k > c) {
    throw ConfigError("top_k: k=" + std::to_string(k) + " invalid for row length " +
                      std::to_string(c));
  }
  Shape out_shape = x.shape();
  out_shape.back() = k;
  std::vector<double> vals(r * k);
  for (std::size_t i = 0; i < r; ++i) {
    std::vector<std::size_t> idx = stable_argsort({x.data() + i * c, c});
    for (std::size_t j = 0; j < k; ++j) vals[i * k + j] = x[i * c + idx[c - 1 - j]];
  }
  return Tensor(std::move(out_shape), std::move(vals));
}

// Per-row 1-d k-means: each value is replaced by its cluster centroid.
// Seeding is distance-weighted (k-means++ style) from `rng`, refinement is
// Lloyd iterations; a cluster that empties is re-seeded at the point
// farthest from its assigned centroid.
inline Tensor kmeans_assign(const Tensor& x, std::size_t k, std::size_t iters, Rng& rng) {
  const std::size_t r = x.rows();
  const std::size_t c = x.cols();
  if (k == 0 || k > c) {
    throw ConfigError("kmeans_assign: k=" + std::to_string(k) + " invalid for row length " +
                      std::to_string(c));
  }
  std::vector<double> vals(x.size());
  std::vector<double> centroid(k);
  std::vector<std::size_t> assign(c);
  std::vector<double> best_d2(c);
  for (std::size_t row = 0; row < r; ++row) {
    const double* p = x.data() + row * c;

    // seeding
    centroid[0] = p[rng.below(c)];
    for (std::size_t j = 1; j < k; ++j) {
      double total = 0.0;
      for (std::size_t i = 0; i < c; ++i) {
        double d2 = (p[i] - centroid[0]) * (p[i] - centroid[0]);
        for (std::size_t m = 1; m < j; ++m) {
          d2 = std::min(d2, (p[i] - centroid[m]) * (p[i] - centroid[m]));
        }
        best_d2[i] = d2;
        total += d2;
      }
      if (total <= 0.0) {
        centroid[j] = p[rng.below(c)];
        continue;
      }
      double u = rng.uniform() * total;
      std::size_t pick = c - 1;
      for (std::size_t i = 0; i < c; ++i) {
        u -= best_d2[i];
        if (u <= 0.0) {
          pick = i;
          break;
        }
      }
      centroid[j] = p[pick];
    }

    // Lloyd refinement
    for (std::size_t it = 0; it < iters; ++it) {
      for (std::size_t i = 0; i < c; ++i) {
        std::size_t best = 0;
        double bd = std::abs(p[i] - centroid[0]);
        for (std::size_t m = 1; m < k; ++m) {
          const double d = std::abs(p[i] - centroid[m]);
          if (d < bd) {
            bd = d;
            best = m;
          }
        }
        assign[i] = best;
      }
      for (std::size_t m = 0; m < k; ++m) {
        double sum = 0.0;
        std::size_t n = 0;
        for (std::size_t i = 0; i < c; ++i) {
          if (assign[i] == m) {
            sum += p[i];
            ++n;
          }
        }
        if (n > 0) {
          centroid[m] = sum / static_cast<double>(n);
        } else {
          // farthest point from its own centroid becomes the new seed
          std::size_t far = 0;
          double fd = -1.0;
          for (std::size_t i = 0; i < c; ++i) {
            const double d = std::abs(p[i] - centroid[assign[i]]);
            if (d > fd) {
              fd = d;
              far = i;
            }
          }
          centroid[m] = p[far];
        }
      }
    }
    for (std::size_t i = 0; i < c; ++i) {
      std::size_t best = 0;
      double bd = std::abs(p[i] - centroid[0]);
      for (std::size_t m = 1; m < k; ++m) {
        const double d = std::abs(p[i] - centroid[m]);
        if (d < bd) {
          bd = d;
          best = m;
        }
      }
      vals[row * c + i] = centroid[best];
    }
  }
  return Tensor(x.shape(), std::move(vals));
}

// One Bernoulli draw per element with success probability sigmoid(logit).
inline Tensor bernoulli_sample(const Tensor& logits, Rng& rng) {
  std::vector<double> vals(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    vals[i] = rng.bernoulli(detail::sigmoid_stable(logits[i])) ? 1.0 : 0.0;
  }
  return Tensor(logits.shape(), std::move(vals));
}

// Dispatch on kind. `rng` is required by the stochastic kinds only.
inline Tensor apply_hard(const HardKind& kind, const Tensor& x, Rng* rng = nullptr) {
  switch (kind.op) {
    case HardOp::signum_margin: return signum_margin(x, kind.eps);
    case HardOp::binary_mean_threshold: return binary_mean_threshold(x);
    case HardOp::sort_rows: return sort_rows(x);
    case HardOp::sort_rows_cols: return sort_rows_cols(x);
    case HardOp::top_k: return top_k(x, kind.k);
    case HardOp::kmeans_assign:
      if (!rng) throw ConfigError("kmeans_assign needs an rng");
      return kmeans_assign(x, kind.k, kind.iters, *rng);
    case HardOp::bernoulli_sample:
      if (!rng) throw ConfigError("bernoulli_sample needs an rng");
      return bernoulli_sample(x, *rng);
  }
  throw ConfigError("apply_hard: unknown op");
}

}  // namespace dab
