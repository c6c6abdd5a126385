#pragma once

// Central-difference gradient checking.
//
// The reverse-mode gradient of f at `point` is compared against
// (f(x + h e_i) - f(x - h e_i)) / 2h coordinate by coordinate; the reported
// error is |analytic - numeric| / max(1, |analytic|), so tiny gradients are
// judged on absolute error and large ones on relative error. Check inputs
// for ops with derivative kinks are drawn away from the kink, otherwise the
// central difference straddles it and reports a spurious mismatch.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "dab/ops.hpp"
#include "dab/rng.hpp"
#include "dab/tensor.hpp"

namespace dab {

// Function under test: maps an attached tensor to a scalar tensor. It must
// also accept plain (unattached) tensors, which every op in the menu does.
using ScalarFn = std::function<Tensor(const Tensor&)>;

struct FdReport {
  double max_rel_err = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

inline FdReport finite_difference_report(const ScalarFn& f, const Tensor& point,
                                         double h = 1e-4) {
  Tape tape;
  Tensor x = tape.leaf(point);
  Tensor loss = f(x);
  if (loss.size() != 1) throw ShapeError("finite_difference_check: f must return a scalar");
  tape.backward(loss);
  const std::vector<double> analytic = tape.grad_vec(x);

  FdReport rep;
  for (std::size_t i = 0; i < point.size(); ++i) {
    Tensor plus(point.shape(), point.to_vector());
    Tensor minus(point.shape(), point.to_vector());
    plus[i] += h;
    minus[i] -= h;
    const double numeric = (f(plus).value() - f(minus).value()) / (2.0 * h);
    double rel = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
    if (!std::isfinite(rel)) rel = std::numeric_limits<double>::infinity();
    if (rel >= rep.max_rel_err) {
      rep.max_rel_err = rel;
      rep.worst_index = i;
      rep.analytic = analytic[i];
      rep.numeric = numeric;
    }
  }
  return rep;
}

// Max error over all coordinates; the value gated by the op checks.
inline double finite_difference_check(const ScalarFn& f, const Tensor& point, double h = 1e-4) {
  return finite_difference_report(f, point, h).max_rel_err;
}

// One named entry of the gradient-check suite. `run` draws its own random
// inputs from the provided stream and returns the max error over its trials.
struct OpCheck {
  std::string name;
  double tolerance = 1e-4;
  std::function<double(Rng&)> run;
};

struct CheckResult {
  std::string name;
  double max_rel_err = 0.0;
  double tolerance = 1e-4;
  bool pass = false;
};

inline std::vector<CheckResult> run_op_checks(const std::vector<OpCheck>& checks,
                                              std::uint64_t seed) {
  std::vector<CheckResult> out;
  out.reserve(checks.size());
  for (const auto& c : checks) {
    Rng rng = Rng::stream(seed, "gradcheck/" + c.name);
    CheckResult r;
    r.name = c.name;
    r.tolerance = c.tolerance;
    r.max_rel_err = c.run(rng);
    r.pass = r.max_rel_err <= c.tolerance;
    out.push_back(std::move(r));
  }
  return out;
}

namespace detail {

// Uniform draw over [lo, hi] with every coordinate at least `margin` away
// from each kink location.
inline Tensor draw_away_from(Rng& rng, Shape shape, double lo, double hi,
                             const std::vector<double>& kinks, double margin = 0.02) {
  std::vector<double> vals(numel(shape));
  for (auto& v : vals) {
    for (;;) {
      v = rng.uniform(lo, hi);
      bool clear = true;
      for (double k : kinks) {
        if (std::abs(v - k) < margin) {
          clear = false;
          break;
        }
      }
      if (clear) break;
    }
  }
  return Tensor(std::move(shape), std::move(vals));
}

inline Tensor draw(Rng& rng, Shape shape, double lo, double hi) {
  return draw_away_from(rng, std::move(shape), lo, hi, {});
}

// Max finite-difference error of f over `trials` freshly drawn points.
template <typename MakePoint, typename MakeFn>
double trial_max(Rng& rng, int trials, MakePoint make_point, MakeFn make_fn) {
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) {
    Tensor point = make_point(rng);
    ScalarFn f = make_fn(rng);
    worst = std::max(worst, finite_difference_check(f, point));
  }
  return worst;
}

}  // namespace detail

// The standard per-op check menu used by tests and the gradcheck command.
inline std::vector<OpCheck> standard_op_checks(int trials = 8) {
  using detail::draw;
  using detail::draw_away_from;
  using detail::trial_max;
  std::vector<OpCheck> checks;
  auto sum_of = [](const Tensor& t) { return sum_all(t); };

  auto add_check = [&checks](std::string name, std::function<double(Rng&)> run) {
    checks.push_back(OpCheck{std::move(name), 1e-4, std::move(run)});
  };

  add_check("matmul_lhs", [trials, sum_of](Rng& rng) {
    return detail::trial_max(
        rng, trials, [](Rng& r) { return detail::draw(r, {3, 4}, -2, 2); },
        [sum_of](Rng& r) {
          Tensor c = detail::draw(r, {4, 5}, -2, 2);
          return ScalarFn([c, sum_of](const Tensor& x) { return sum_of(matmul(x, c)); });
        });
  });
  add_check("matmul_rhs", [trials, sum_of](Rng& rng) {
    return detail::trial_max(
        rng, trials, [](Rng& r) { return detail::draw(r, {4, 5}, -2, 2); },
        [sum_of](Rng& r) {
          Tensor c = detail::draw(r, {3, 4}, -2, 2);
          return ScalarFn([c, sum_of](const Tensor& x) { return sum_of(matmul(c, x)); });
        });
  });

  struct Elem {
    const char* name;
    Tensor (*op)(const Tensor&);
    double lo, hi;
    std::vector<double> kinks;
  };
  const std::vector<Elem> elems = {
      {"relu", &relu, -2, 2, {0.0}},         {"elu", &elu, -2, 2, {0.0}},
      {"tanh", &tanh, -2, 2, {}},            {"sigmoid", &sigmoid, -4, 4, {}},
      {"exp", &exp, -2, 2, {}},              {"log", &log, 0.1, 3, {}},
      {"square", &square, -2, 2, {}},        {"abs", &abs, -2, 2, {0.0}},
      {"sqrt", &sqrt, 0.1, 3, {}},
  };
  for (const auto& e : elems) {
    add_check(e.name, [e, trials, sum_of](Rng& rng) {
      return detail::trial_max(
          rng, trials,
          [e](Rng& r) { return detail::draw_away_from(r, {3, 4}, e.lo, e.hi, e.kinks); },
          [e, sum_of](Rng&) {
            auto op = e.op;
            return ScalarFn([op, sum_of](const Tensor& x) { return sum_of(op(x)); });
          });
    });
  }

  add_check("huber", [trials, sum_of](Rng& rng) {
    return detail::trial_max(
        rng, trials,
        [](Rng& r) { return detail::draw_away_from(r, {3, 4}, -3, 3, {-1.0, 1.0}); },
        [sum_of](Rng&) {
          return ScalarFn([sum_of](const Tensor& x) { return sum_of(huber_elem(x, 1.0)); });
        });
  });

  add_check("scale_add_scalar", [trials, sum_of](Rng& rng) {
    return detail::trial_max(
        rng, trials, [](Rng& r) { return detail::draw(r, {3, 4}, -2, 2); },
        [sum_of](Rng& r) {
          const double c = r.uniform(-2, 2);
          const double d = r.uniform(-2, 2);
          return ScalarFn(
              [c, d, sum_of](const Tensor& x) { return sum_of(add_scalar(scale(x, c), d)); });
        });
  });

  struct Bin {
    const char* name;
    Tensor (*op)(const Tensor&, const Tensor&);
    double lo, hi;
  };
  const std::vector<Bin> bins = {
      {"add", &add, -2, 2}, {"sub", &sub, -2, 2}, {"mul", &mul, -2, 2}};
  for (const auto& b : bins) {
    add_check(b.name, [b, trials, sum_of](Rng& rng) {
      auto op = b.op;
      // equal shapes, then batch-broadcast on the right operand
      const double eq = detail::trial_max(
          rng, trials, [b](Rng& r) { return detail::draw(r, {3, 4}, b.lo, b.hi); },
          [b, op, sum_of](Rng& r) {
            Tensor c = detail::draw(r, {3, 4}, b.lo, b.hi);
            return ScalarFn([c, op, sum_of](const Tensor& x) { return sum_of(op(x, c)); });
          });
      const double bc = detail::trial_max(
          rng, trials, [b](Rng& r) { return detail::draw(r, {4}, b.lo, b.hi); },
          [b, op, sum_of](Rng& r) {
            Tensor c = detail::draw(r, {3, 4}, b.lo, b.hi);
            return ScalarFn([c, op, sum_of](const Tensor& x) { return sum_of(op(c, x)); });
          });
      return std::max(eq, bc);
    });
  }
  add_check("div", [trials, sum_of](Rng& rng) {
    const double num = detail::trial_max(
        rng, trials, [](Rng& r) { return detail::draw(r, {3, 4}, -2, 2); },
        [sum_of](Rng& r) {
          Tensor c = detail::draw(r, {3, 4}, 0.5, 2);
          return ScalarFn([c, sum_of](const Tensor& x) { return sum_of(div(x, c)); });
        });
    const double den = detail::trial_max(
        rng, trials, [](Rng& r) { return detail::draw(r, {3, 4}, 0.5, 2); },
        [sum_of](Rng& r) {
          Tensor c = detail::draw(r, {3, 4}, -2, 2);
          return ScalarFn([c, sum_of](const Tensor& x) { return sum_of(div(c, x)); });
        });
    return std::max(num, den);
  });

  add_check("reshape_slice_concat", [trials, sum_of](Rng& rng) {
    return detail::trial_max(
        rng, trials, [](Rng& r) { return detail::draw(r, {3, 6}, -2, 2); },
        [sum_of](Rng& r) {
          Tensor c = detail::draw(r, {3, 2}, -2, 2);
          return ScalarFn([c, sum_of](const Tensor& x) {
            Tensor left = slice_cols(x, 0, 2);
            Tensor mid = slice_rows(x, 1, 3);
            Tensor joined = concat_cols(left, c);
            return add(add(sum_of(joined), sum_of(mid)), sum_of(reshape(x, {9, 2})));
          });
        });
  });

  add_check("reductions", [trials](Rng& rng) {
    return detail::trial_max(
        rng, trials, [](Rng& r) { return detail::draw(r, {3, 4}, -2, 2); },
        [](Rng& r) {
          Tensor w = detail::draw(r, {3}, -2, 2);
          return ScalarFn([w](const Tensor& x) {
            return add(mean_all(x), sum_all(mul(row_sum(x), w)));
          });
        });
  });

  add_check("softmax_rows", [trials](Rng& rng) {
    return detail::trial_max(
        rng, trials, [](Rng& r) { return detail::draw(r, {3, 5}, -3, 3); },
        [](Rng& r) {
          Tensor c = detail::draw(r, {3, 5}, -1, 1);
          return ScalarFn([c](const Tensor& x) { return sum_all(mul(softmax_rows(x), c)); });
        });
  });

  add_check("mse_loss", [trials](Rng& rng) {
    return detail::trial_max(
        rng, trials, [](Rng& r) { return detail::draw(r, {3, 4}, -2, 2); },
        [](Rng& r) {
          Tensor c = detail::draw(r, {3, 4}, -2, 2);
          return ScalarFn([c](const Tensor& x) { return mse_loss(x, c); });
        });
  });

  add_check("bce_with_logits", [trials](Rng& rng) {
    return detail::trial_max(
        rng, trials, [](Rng& r) { return detail::draw(r, {3, 4}, -3, 3); },
        [](Rng& r) {
          std::vector<double> t(12);
          for (auto& v : t) v = r.bernoulli(0.5) ? 1.0 : 0.0;
          Tensor targets(Shape{3, 4}, std::move(t));
          return ScalarFn([targets](const Tensor& x) { return bce_with_logits(x, targets); });
        });
  });

  add_check("softmax_cross_entropy", [trials](Rng& rng) {
    return detail::trial_max(
        rng, trials, [](Rng& r) { return detail::draw(r, {4, 5}, -3, 3); },
        [](Rng& r) {
          std::vector<double> t(20, 0.0);
          for (std::size_t i = 0; i < 4; ++i) t[i * 5 + r.below(5)] = 1.0;
          Tensor targets(Shape{4, 5}, std::move(t));
          return ScalarFn(
              [targets](const Tensor& x) { return softmax_cross_entropy(x, targets); });
        });
  });

  add_check("bernoulli_kl", [trials](Rng& rng) {
    return detail::trial_max(
        rng, trials, [](Rng& r) { return detail::draw(r, {3, 4}, -3, 3); },
        [](Rng&) {
          return ScalarFn([](const Tensor& x) { return bernoulli_kl(x, 0.3); });
        });
  });

  add_check("mlp_composite", [trials](Rng& rng) {
    return detail::trial_max(
        rng, trials, [](Rng& r) { return detail::draw_away_from(r, {2, 3}, -1, 1, {0.0}); },
        [](Rng& r) {
          Tensor w1 = detail::draw(r, {3, 6}, -0.8, 0.8);
          Tensor w2 = detail::draw(r, {6, 4}, -0.8, 0.8);
          Tensor b = detail::draw(r, {4}, -0.5, 0.5);
          return ScalarFn([w1, w2, b](const Tensor& x) {
            Tensor h = elu(matmul(x, w1));
            Tensor o = add(matmul(h, w2), b);
            return mean_all(square(tanh(o)));
          });
        });
  });

  return checks;
}

}  // namespace dab
