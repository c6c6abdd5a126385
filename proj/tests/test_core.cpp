// Core plumbing: rng streams, tape mechanics, frozen op values, the
// finite-difference suite, and the optimizer.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "dab/gradcheck.hpp"
#include "dab/nn.hpp"
#include "dab/optim.hpp"

using Catch::Approx;
using namespace dab;

TEST_CASE("rng streams are deterministic per (seed, name)", "[rng]") {
  Rng a = Rng::stream(42, "data");
  Rng b = Rng::stream(42, "data");
  for (int i = 0; i < 64; ++i) REQUIRE(a.next() == b.next());
}

TEST_CASE("rng streams with different names diverge", "[rng]") {
  Rng a = Rng::stream(42, "data");
  Rng b = Rng::stream(42, "init");
  Rng c = Rng::stream(43, "data");
  bool name_diff = false, seed_diff = false;
  for (int i = 0; i < 16; ++i) {
    const std::uint64_t va = a.next();
    if (va != b.next()) name_diff = true;
    if (va != c.next()) seed_diff = true;
  }
  REQUIRE(name_diff);
  REQUIRE(seed_diff);
}

TEST_CASE("rng uniform stays inside [0,1)", "[rng]") {
  Rng r = Rng::stream(7, "u");
  for (int i = 0; i < 10000; ++i) {
    const double v = r.uniform();
    REQUIRE(v >= 0.0);
    REQUIRE(v < 1.0);
  }
}

TEST_CASE("tape chain rule on a scalar composition", "[tape]") {
  // y = (3x)^2 at x = 2: y = 36, dy/dx = 18x = 36.
  Tape tape;
  Tensor x = tape.leaf(Tensor::scalar(2.0));
  Tensor y = square(scale(x, 3.0));
  REQUIRE(y.value() == Approx(36.0));
  tape.backward(sum_all(y));
  REQUIRE(tape.grad_vec(x)[0] == Approx(36.0));
}

TEST_CASE("tape accumulates through repeated use of one tensor", "[tape]") {
  // y = x * x: both parents are the same node; dy/dx = 2x.
  Tape tape;
  Tensor x = tape.leaf(Tensor(Shape{2}, {3.0, -1.5}));
  Tensor y = mul(x, x);
  tape.backward(sum_all(y));
  const std::vector<double> g = tape.grad_vec(x);
  REQUIRE(g[0] == Approx(6.0));
  REQUIRE(g[1] == Approx(-3.0));
}

TEST_CASE("tape is single use and validates its inputs", "[tape]") {
  Tape tape;
  Tensor x = tape.leaf(Tensor::scalar(1.0));
  Tensor y = square(x);
  REQUIRE_THROWS_AS(tape.grad_vec(x), Error);  // before backward
  tape.backward(y);
  REQUIRE_THROWS_AS(tape.backward(y), Error);  // twice

  Tape other;
  Tensor z = other.leaf(Tensor(Shape{2}, {1.0, 2.0}));
  REQUIRE_THROWS_AS(tape.leaf(z), Error);                    // foreign tensor
  REQUIRE_THROWS_AS(other.backward(z), ShapeError);          // non-scalar loss
  Tensor w = Tensor::scalar(5.0);
  REQUIRE_THROWS_AS(other.backward(w), Error);               // unattached loss
}

TEST_CASE("vjp replays a sub-graph without consuming the tape", "[tape]") {
  Tape tape;
  Tensor x = tape.leaf(Tensor::scalar(2.0));
  Tensor z = scale(x, 3.0);
  Tensor y = square(z);  // dy/dx = 18x = 36
  const std::vector<double> up{1.0};
  const std::vector<double> g1 = tape.vjp(y.node(), x.node(), up);
  const std::vector<double> g2 = tape.vjp(y.node(), x.node(), up);
  REQUIRE(g1[0] == Approx(36.0));
  REQUIRE(g2[0] == g1[0]);  // repeatable
  // Upstream scaling is linear.
  const std::vector<double> up2{2.0};
  REQUIRE(tape.vjp(y.node(), x.node(), up2)[0] == Approx(72.0));
  // A node later than the output receives nothing.
  Tensor later = scale(y, 1.0);
  REQUIRE(tape.vjp(y.node(), later.node(), up) == std::vector<double>{0.0});
  // The tape is still usable for its one full sweep afterwards.
  tape.backward(y);
  REQUIRE(tape.grad_vec(x)[0] == Approx(36.0));
}

TEST_CASE("detached tensors drop out of the graph", "[tape]") {
  Tape tape;
  Tensor x = tape.leaf(Tensor::scalar(3.0));
  Tensor y = mul(x, x.detached());  // treated as x * const
  tape.backward(sum_all(y));
  REQUIRE(tape.grad_vec(x)[0] == Approx(3.0));
}

TEST_CASE("softmax rows matches the frozen reference value", "[ops]") {
  Tensor x(Shape{1, 2}, {2.0, 0.0});
  Tensor p = softmax_rows(x);
  REQUIRE(p[0] == Approx(0.880797077977882).margin(1e-12));
  REQUIRE(p[1] == Approx(0.119202922022118).margin(1e-12));
}

TEST_CASE("bernoulli kl is zero at the prior and matches a hand value", "[ops]") {
  Tensor at_prior(Shape{1, 1}, {0.0});
  REQUIRE(bernoulli_kl(at_prior, 0.5).value() == Approx(0.0).margin(1e-15));
  // q = sigmoid(0) = 0.5 against p = 0.25:
  // 0.5*ln(0.5/0.25) + 0.5*ln(0.5/0.75) = 0.14384103622589046.
  REQUIRE(bernoulli_kl(at_prior, 0.25).value() == Approx(0.14384103622589046).margin(1e-12));
  Rng rng = Rng::stream(5, "kl");
  for (int i = 0; i < 50; ++i) {
    Tensor logits(Shape{1, 4}, {rng.uniform(-6, 6), rng.uniform(-6, 6), rng.uniform(-6, 6),
                                rng.uniform(-6, 6)});
    REQUIRE(bernoulli_kl(logits, rng.uniform(0.05, 0.95)).value() >= 0.0);
  }
}

TEST_CASE("loss reductions: mse over elements, bce and ce over rows", "[ops]") {
  REQUIRE(mse_loss(Tensor(Shape{2}, {0.0, 0.0}), Tensor(Shape{2}, {1.0, 3.0})).value() ==
          Approx(5.0));
  // Each zero-logit element contributes ln 2; summed over features.
  Tensor logits(Shape{1, 2}, {0.0, 0.0});
  Tensor targets(Shape{1, 2}, {0.0, 1.0});
  REQUIRE(bce_with_logits(logits, targets).value() == Approx(2.0 * std::log(2.0)).margin(1e-12));
  Tensor onehot(Shape{1, 2}, {1.0, 0.0});
  REQUIRE(softmax_cross_entropy(logits, onehot).value() == Approx(std::log(2.0)).margin(1e-12));
}

TEST_CASE("matmul matches a hand-computed product", "[ops]") {
  Tensor a(Shape{2, 2}, {1.0, 2.0, 3.0, 4.0});
  Tensor b(Shape{2, 1}, {5.0, 6.0});
  Tensor c = matmul(a, b);
  REQUIRE((c.shape() == Shape{2, 1}));
  REQUIRE(c[0] == Approx(17.0));
  REQUIRE(c[1] == Approx(39.0));
}

TEST_CASE("shape ops are value-preserving inverses", "[ops]") {
  Tensor x(Shape{2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor r = reshape(x, {3, 2});
  REQUIRE((r.shape() == Shape{3, 2}));
  REQUIRE(r.to_vector() == x.to_vector());
  Tensor left = slice_cols(x, 0, 1);
  Tensor right = slice_cols(x, 1, 3);
  Tensor back = concat_cols(left, right);
  REQUIRE(back.to_vector() == x.to_vector());
  REQUIRE_THROWS_AS((reshape(x, {4, 2})), ShapeError);
}

TEST_CASE("finite-difference suite passes for every registered op", "[gradcheck]") {
  const auto results = run_op_checks(standard_op_checks(4), 123);
  REQUIRE_FALSE(results.empty());
  for (const auto& r : results) {
    INFO(r.name << " max_rel_err " << r.max_rel_err << " tol " << r.tolerance);
    CHECK(r.pass);
  }
}

TEST_CASE("finite differences expose a corrupted backward rule", "[gradcheck]") {
  // Forward computes sum(x^2) but the hand-written backward claims 3x.
  ScalarFn broken = [](const Tensor& x) {
    double s = 0.0;
    std::vector<double> vals(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      vals[i] = x[i] * x[i];
      s += vals[i];
    }
    Tensor y = Tensor::scalar(s);
    if (!x.attached()) return y;
    Tensor xs = x.detached();
    const std::size_t xn = x.node();
    return x.tape()->attach(y, {xn}, [xs, xn](std::span<const double> u, GradSlots& slots) {
      auto& g = ensure_slot(slots, xn, xs.size());
      for (std::size_t i = 0; i < xs.size(); ++i) g[i] += u[0] * 3.0 * xs[i];
    });
  };
  const double err = finite_difference_check(broken, Tensor(Shape{3}, {0.5, -1.0, 2.0}));
  REQUIRE(err > 0.3);  // analytic is off by half of itself

  OpCheck check{"corrupted_square", 1e-4,
                [&broken](Rng& rng) {
                  return finite_difference_check(broken, Tensor(Shape{1}, {rng.uniform(1, 2)}));
                }};
  const auto results = run_op_checks({check}, 9);
  REQUIRE(results.size() == 1);
  REQUIRE(results[0].name == "corrupted_square");
  REQUIRE_FALSE(results[0].pass);
}

TEST_CASE("adam takes the textbook first step", "[optim]") {
  ParamSet params;
  params.declare("w", Tensor(Shape{1}, {0.0}));
  params.set_grad("w", {1.0});
  OptimConfig oc;
  oc.lr = 0.1;
  Adam adam(oc);
  adam.step(params);
  // First step with g = 1: -lr * mhat / (sqrt(vhat) + eps) = -0.099999999.
  REQUIRE(params.value("w")[0] == Approx(-0.099999999).margin(1e-9));
  REQUIRE(adam.step_count() == 1);
}

TEST_CASE("adam rejects missing and non-finite gradients", "[optim]") {
  ParamSet params;
  params.declare("w", Tensor(Shape{1}, {0.0}));
  OptimConfig oc;
  oc.lr = 0.1;
  Adam adam(oc);
  REQUIRE_THROWS_AS(adam.step(params), Error);  // no grad set
  params.set_grad("w", {std::numeric_limits<double>::quiet_NaN()});
  REQUIRE_THROWS_AS(adam.step(params), DomainError);
  REQUIRE_THROWS_AS((params.set_grad("w", {1.0, 2.0})), ShapeError);  // wrong length
}

TEST_CASE("adam global-norm clip rescales the applied step", "[optim]") {
  // With clip_norm = 1 and grad norm 2, the applied gradient halves; the
  // direction (and hence Adam's normalized first step) is unchanged, but the
  // second moments differ, so compare against an explicit twin run.
  auto run = [](std::optional<double> clip, double g) {
    ParamSet params;
    params.declare("w", Tensor(Shape{1}, {0.0}));
    params.set_grad("w", {g});
    OptimConfig cfg;
    cfg.lr = 0.1;
    cfg.clip_norm = clip;
    Adam adam(cfg);
    adam.step(params);
    return params.value("w")[0];
  };
  REQUIRE(run(std::optional<double>(1.0), 2.0) == Approx(run(std::nullopt, 1.0)));
  // Below the threshold the clip is inert.
  REQUIRE(run(std::optional<double>(10.0), 2.0) == Approx(run(std::nullopt, 2.0)));
}

TEST_CASE("adam restricted to one group leaves the other untouched", "[optim]") {
  ParamSet params;
  params.declare("model/w", Tensor(Shape{1}, {1.0}), ParamGroup::model);
  params.declare("approx/w", Tensor(Shape{1}, {1.0}), ParamGroup::approximator);
  params.set_grad("model/w", {1.0});
  params.set_grad("approx/w", {1.0});
  OptimConfig oc;
  oc.lr = 0.1;
  Adam adam(oc);
  adam.step(params, ParamGroup::approximator);
  REQUIRE(params.value("model/w")[0] == Approx(1.0));
  REQUIRE(params.value("approx/w")[0] != Approx(1.0));
}

TEST_CASE("watched parameters receive gradients through pull_grads", "[optim]") {
  ParamSet params;
  params.declare("w", Tensor(Shape{2}, {1.0, 2.0}));
  Tape tape;
  Watched watched = watch_params(tape, params);
  Ctx ctx = Ctx::train(tape, params, watched);
  Tensor loss = sum_all(square(ctx.p("w")));
  tape.backward(loss);
  pull_grads(tape, watched, params);
  const std::vector<double>* g = params.grad("w");
  REQUIRE(g != nullptr);
  REQUIRE((*g)[0] == Approx(2.0));
  REQUIRE((*g)[1] == Approx(4.0));
}
