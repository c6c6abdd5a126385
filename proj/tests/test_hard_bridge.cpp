// Hard-function properties and the bridge semantics: exact forward values,
// routed backward, regularizer coupling, straight-through limits.

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "dab/bridge.hpp"
#include "dab/optim.hpp"

using Catch::Approx;
using namespace dab;

namespace {

Tensor random_matrix(Rng& rng, std::size_t r, std::size_t c, double lo = -2.0, double hi = 2.0) {
  std::vector<double> vals(r * c);
  for (auto& v : vals) v = rng.uniform(lo, hi);
  return Tensor(Shape{r, c}, std::move(vals));
}

std::vector<double> sorted_copy(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v;
}

}  // namespace

TEST_CASE("sort rows returns an ascending permutation of each row", "[hard]") {
  Rng rng = Rng::stream(11, "sort");
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = random_matrix(rng, 4, 7);
    Tensor y = sort_rows(x);
    REQUIRE(y.shape() == x.shape());
    for (std::size_t i = 0; i < 4; ++i) {
      std::vector<double> in_row(x.data() + i * 7, x.data() + (i + 1) * 7);
      std::vector<double> out_row(y.data() + i * 7, y.data() + (i + 1) * 7);
      REQUIRE(std::is_sorted(out_row.begin(), out_row.end()));
      REQUIRE(sorted_copy(in_row) == out_row);  // same multiset
    }
  }
}

TEST_CASE("sort rows+cols doubles the width and sorts both blocks", "[hard]") {
  Rng rng = Rng::stream(12, "sortrc");
  Tensor x = random_matrix(rng, 5, 3);
  Tensor y = sort_rows_cols(x);
  REQUIRE((y.shape() == Shape{5, 6}));
  for (std::size_t i = 0; i < 5; ++i) {
    std::vector<double> row_block(y.data() + i * 6, y.data() + i * 6 + 3);
    REQUIRE(std::is_sorted(row_block.begin(), row_block.end()));
  }
  for (std::size_t j = 0; j < 3; ++j) {
    std::vector<double> col_in(5), col_out(5);
    for (std::size_t i = 0; i < 5; ++i) {
      col_in[i] = x.at(i, j);
      col_out[i] = y.at(i, 3 + j);
    }
    REQUIRE(std::is_sorted(col_out.begin(), col_out.end()));
    REQUIRE(sorted_copy(col_in) == col_out);
  }
}

TEST_CASE("top k keeps the k largest entries in descending order", "[hard]") {
  Tensor x(Shape{2, 4}, {0.1, -3.0, 2.5, 0.7, 1.0, 1.0, -1.0, 4.0});
  Tensor y = top_k(x, 2);
  REQUIRE((y.shape() == Shape{2, 2}));
  REQUIRE(y.at(0, 0) == Approx(2.5));
  REQUIRE(y.at(0, 1) == Approx(0.7));
  REQUIRE(y.at(1, 0) == Approx(4.0));
  REQUIRE(y.at(1, 1) == Approx(1.0));
  REQUIRE_THROWS_AS(top_k(x, 0), ConfigError);
  REQUIRE_THROWS_AS(top_k(x, 5), ConfigError);
}

TEST_CASE("signum with margin: codomain, dead zone, odd symmetry, idempotence", "[hard]") {
  const double eps = 0.5;
  Rng rng = Rng::stream(13, "signum");
  Tensor x = random_matrix(rng, 3, 5, -2.0, 2.0);
  Tensor y = signum_margin(x, eps);
  for (std::size_t i = 0; i < y.size(); ++i) {
    REQUIRE((y[i] == -1.0 || y[i] == 0.0 || y[i] == 1.0));
  }
  // dead zone and the exact boundary (closed interval maps to 0)
  REQUIRE(signum_margin(0.49, eps) == 0.0);
  REQUIRE(signum_margin(0.5, eps) == 0.0);
  REQUIRE(signum_margin(0.51, eps) == 1.0);
  REQUIRE(signum_margin(-0.51, eps) == -1.0);
  // odd symmetry
  Tensor ny = signum_margin(scale(x, -1.0), eps);
  for (std::size_t i = 0; i < y.size(); ++i) REQUIRE(ny[i] == -y[i]);
  // idempotence for eps < 1: outputs live outside the open dead zone
  Tensor yy = signum_margin(y, eps);
  REQUIRE(yy.to_vector() == y.to_vector());
  REQUIRE_THROWS_AS(signum_margin(x, -0.1), ConfigError);
}

TEST_CASE("binary mean threshold marks entries at or above the row mean", "[hard]") {
  Tensor x(Shape{2, 4}, {1.0, 2.0, 3.0, 4.0, 5.0, 5.0, 5.0, 5.0});
  Tensor y = binary_mean_threshold(x);
  REQUIRE(y.to_vector() == std::vector<double>{0, 0, 1, 1, 1, 1, 1, 1});
}

TEST_CASE("kmeans snaps values to centroids on separated data", "[hard]") {
  Rng rng = Rng::stream(14, "kmeans");
  Tensor a(Shape{1, 4}, {0.0, 1.0, 9.0, 10.0});
  Tensor out_a = kmeans_assign(a, 2, 10, rng);
  REQUIRE(out_a.to_vector() == std::vector<double>{0.5, 0.5, 9.5, 9.5});
  Tensor b(Shape{1, 2}, {0.0, 10.0});
  Tensor out_b = kmeans_assign(b, 2, 10, rng);
  REQUIRE(out_b.to_vector() == std::vector<double>{0.0, 10.0});
}

TEST_CASE("kmeans scatter never exceeds the one-cluster scatter", "[hard]") {
  Rng rng = Rng::stream(15, "kmeans-var");
  for (int trial = 0; trial < 10; ++trial) {
    Tensor x = random_matrix(rng, 1, 12);
    auto scatter = [&x](const Tensor& snapped) {
      double s = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) {
        s += (x[i] - snapped[i]) * (x[i] - snapped[i]);
      }
      return s;
    };
    const double base = scatter(kmeans_assign(x, 1, 10, rng));
    for (std::size_t k = 2; k <= 4; ++k) {
      REQUIRE(scatter(kmeans_assign(x, k, 10, rng)) <= base + 1e-12);
    }
  }
}

TEST_CASE("bernoulli sampling matches its logit-implied rate", "[hard]") {
  Rng rng = Rng::stream(16, "bern");
  const std::size_t n = 100000;
  Tensor logits = Tensor::zeros(Shape{n});
  Tensor draws = bernoulli_sample(logits, rng);
  double ones = 0.0;
  std::size_t off_codomain = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (draws[i] != 0.0 && draws[i] != 1.0) ++off_codomain;
    ones += draws[i];
  }
  REQUIRE(off_codomain == 0);
  REQUIRE(ones / static_cast<double>(n) == Approx(0.5).margin(0.01));
  Tensor sure = bernoulli_sample(Tensor::full(Shape{1000}, 10.0), rng);
  REQUIRE(sum_all(sure).value() > 990.0);
}

TEST_CASE("apply_hard demands an rng only for stochastic kinds", "[hard]") {
  Tensor x(Shape{1, 4}, {0.3, -0.9, 1.4, 0.0});
  REQUIRE_THROWS_AS(apply_hard(HardKind::bernoulli(), x, nullptr), ConfigError);
  REQUIRE_THROWS_AS(apply_hard(HardKind::kmeans(2, 5), x, nullptr), ConfigError);
  Tensor y = apply_hard(HardKind::signum(0.5), x, nullptr);
  REQUIRE(y.to_vector() == signum_margin(x, 0.5).to_vector());
}

TEST_CASE("bridge backward matches the assembled jacobian product", "[bridge]") {
  for (std::uint64_t seed : {1ull, 7ull, 23ull}) {
    REQUIRE(bridge_oracle_error(seed) <= 1e-12);
  }
}

TEST_CASE("bridge forwards exact hard values, identical to eval mode", "[bridge]") {
  ParamSet params;
  Rng init = Rng::stream(3, "init-dab");
  DabNetConfig nc;
  nc.hidden = {8};
  Bridge b = add_bridge(params, "dab", 4, HardKind::signum(0.5), nc, init);

  Rng draw = Rng::stream(3, "data");
  Tensor z1_val = random_matrix(draw, 3, 4);
  Tensor expected = signum_margin(z1_val, 0.5);

  Tape tape;
  Watched watched = watch_params(tape, params);
  Ctx ctx = Ctx::train(tape, params, watched);
  Tensor z1 = tape.leaf(z1_val);
  auto [out, rec] = bridge_forward(ctx, b, z1);
  REQUIRE(out.to_vector() == expected.to_vector());          // train == hard
  REQUIRE(bridge_eval(b, z1_val).to_vector() == expected.to_vector());  // eval == hard
  REQUIRE(rec.valid);
  REQUIRE(rec.z_hard.to_vector() == expected.to_vector());
  REQUIRE(rec.z_soft.size() == out.size());
}

TEST_CASE("bridge with a linear approximator routes exactly W^T upstream", "[bridge]") {
  // One linear layer 1 -> 1: z_soft = w * z1 + b, so d(out)/d(z1) must be w.
  ParamSet params;
  Rng init = Rng::stream(5, "init-dab");
  DabNetConfig nc;
  nc.hidden = {};  // no hidden layers: a single dense map
  Bridge b = add_bridge(params, "dab", 1, HardKind::signum(0.25), nc, init);
  const double w = params.value("dab/l0/w")[0];

  Tape tape;
  Watched watched = watch_params(tape, params);
  Ctx ctx = Ctx::train(tape, params, watched);
  Tensor z1 = tape.leaf(Tensor(Shape{1, 1}, {0.8}));
  auto [out, rec] = bridge_forward(ctx, b, z1);
  REQUIRE(out.value() == 1.0);  // 0.8 > eps
  tape.backward(sum_all(out));
  REQUIRE(tape.grad_vec(z1)[0] == Approx(w).margin(1e-14));
}

TEST_CASE("task loss reaches the approximator only through the regularizer", "[bridge]") {
  ParamSet params;
  Rng init = Rng::stream(9, "init-dab");
  DabNetConfig nc;
  nc.hidden = {6};
  Bridge b = add_bridge(params, "dab", 3, HardKind::signum(0.5), nc, init);
  params.declare("net/w", Tensor(Shape{1, 3}, {0.4, -0.2, 0.9}), ParamGroup::model);

  auto run_step = [&](double gamma) {
    Tape tape;
    Watched watched = watch_params(tape, params);
    Ctx ctx = Ctx::train(tape, params, watched);
    Tensor z1 = ctx.p("net/w");  // stands in for an upstream activation
    auto [out, rec] = bridge_forward(ctx, b, z1);
    Tensor task = mse_loss(out, Tensor::ones(Shape{1, 3}));
    Tensor loss = gamma == 0.0 ? task : add(task, dab_regularizer(rec, gamma));
    tape.backward(loss);
    pull_grads(tape, watched, params);
    double approx_norm = 0.0;
    for (const auto& name : params.names(ParamGroup::approximator)) {
      for (double v : *params.grad(name)) approx_norm += v * v;
    }
    std::vector<double> z1_grad = *params.grad("net/w");
    params.clear_grads();
    return std::make_pair(approx_norm, z1_grad);
  };

  auto [norm_off, z1_off] = run_step(0.0);
  REQUIRE(norm_off == 0.0);  // nothing flows into the approximator from the task
  auto [norm_on, z1_on] = run_step(10.0);
  REQUIRE(norm_on > 0.0);    // the regularizer does reach it
  REQUIRE(z1_on != z1_off);  // and its z1 path is live too
}

TEST_CASE("bridge supports dimension-changing hard functions", "[bridge]") {
  ParamSet params;
  Rng init = Rng::stream(21, "init-dab");
  DabNetConfig nc;
  nc.hidden = {8};
  Bridge b = add_bridge(params, "dab", 3, HardKind::sortrc(), nc, init);
  REQUIRE(b.out == 6);

  Tape tape;
  Watched watched = watch_params(tape, params);
  Ctx ctx = Ctx::train(tape, params, watched);
  Rng draw = Rng::stream(21, "data");
  Tensor z1 = tape.leaf(random_matrix(draw, 2, 3));
  auto [out, rec] = bridge_forward(ctx, b, z1);
  REQUIRE((out.shape() == Shape{2, 6}));
  tape.backward(sum_all(out));
  for (double v : tape.grad_vec(z1)) REQUIRE(std::isfinite(v));
}

TEST_CASE("straight-through copies the gradient and rejects dimension changes", "[bridge]") {
  Tape tape;
  Tensor z1 = tape.leaf(Tensor(Shape{1, 3}, {0.2, -0.8, 0.9}));
  Tensor out = ste_forward(z1, HardKind::signum(0.5));
  REQUIRE(out.to_vector() == std::vector<double>{0.0, -1.0, 1.0});
  tape.backward(sum_all(scale(out, 2.0)));
  REQUIRE(tape.grad_vec(z1) == std::vector<double>{2.0, 2.0, 2.0});  // identity backward

  Tape tape2;
  Tensor z2 = tape2.leaf(Tensor(Shape{1, 3}, {0.2, -0.8, 0.9}));
  REQUIRE_THROWS_AS(ste_forward(z2, HardKind::sortrc()), ConfigError);
  REQUIRE_THROWS_AS(ste_forward(z2, HardKind::topk(2)), ConfigError);
}

TEST_CASE("gumbel softmax: relaxed rows are stochastic simplices, hard rows one-hot",
          "[bridge]") {
  Rng rng = Rng::stream(31, "gumbel");
  Tape tape;
  Tensor logits = tape.leaf(Tensor(Shape{4, 3}, {0.5, -0.2, 0.1, 2.0, 0.0, -1.0, 0.3, 0.3, 0.3,
                                                 -2.0, 1.0, 0.5}));
  Tensor relaxed = gumbel_softmax(logits, 1.0, rng, /*hard=*/false);
  for (std::size_t i = 0; i < 4; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 3; ++j) {
      const double v = relaxed.at(i, j);
      REQUIRE(v > 0.0);
      REQUIRE(v < 1.0);
      s += v;
    }
    REQUIRE(s == Approx(1.0).margin(1e-12));
  }

  Tensor hard = gumbel_softmax(logits, 1.0, rng, /*hard=*/true);
  for (std::size_t i = 0; i < 4; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 3; ++j) {
      const double v = hard.at(i, j);
      REQUIRE((v == 0.0 || v == 1.0));
      s += v;
    }
    REQUIRE(s == 1.0);
  }
  tape.backward(sum_all(mul(hard, hard.detached())));
  bool any_nonzero = false;
  for (double v : tape.grad_vec(logits)) {
    REQUIRE(std::isfinite(v));
    if (v != 0.0) any_nonzero = true;
  }
  REQUIRE(any_nonzero);  // straight-through path is live
  REQUIRE_THROWS_AS(gumbel_softmax(logits.detached(), 0.0, rng, false), ConfigError);
}

TEST_CASE("gumbel temperature schedule decays to its floor", "[bridge]") {
  GumbelSchedule sched{2.0, 0.5, 0.99};
  REQUIRE(sched.at_step(0) == Approx(2.0));
  double prev = sched.at_step(0);
  for (long s = 1; s <= 400; ++s) {
    const double cur = sched.at_step(s);
    REQUIRE(cur <= prev + 1e-15);
    REQUIRE(cur >= 0.5);
    prev = cur;
  }
  REQUIRE(sched.at_step(100000) == Approx(0.5));
}

TEST_CASE("bridge parameters land in the approximator group", "[bridge]") {
  ParamSet params;
  Rng init = Rng::stream(2, "init-dab");
  add_bridge(params, "dab", 4, HardKind::sort(), DabNetConfig{}, init);
  const auto approx = params.names(ParamGroup::approximator);
  REQUIRE_FALSE(approx.empty());
  REQUIRE(approx.size() == params.count());  // nothing leaked into the model group
}
