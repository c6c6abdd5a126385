#pragma once

// One-dimensional signum demo: a small elu net learns the three-level
// eps-margin step y = sgn_eps(x) on x ~ U(-1,1) through a bridged signum
// bottleneck, with a least-squares task loss. Snapshots at three training
// stages dump, over a fixed 401-point grid, the model's (hard) prediction and
// the derivative of that prediction w.r.t. x as training sees it — the
// gradient routed through the approximator, which is what makes the flat step
// trainable at all.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dab/bridge.hpp"
#include "dab/checkpoint.hpp"
#include "dab/data.hpp"
#include "dab/report.hpp"

namespace dab {

struct DemoConfig {
  std::size_t hidden = 64;  // two hidden elu layers of this width, then 1
  std::size_t steps = 4000;
  std::size_t batch = 256;
  double lr = 1e-3;
  // Kept deliberately gentle: a heavy regularizer weight lets the
  // approximator flatten before the task can push z1 out of the dead zone,
  // and its z1-path then herds the code back inside it.
  double gamma = 1.0;
  double eps = 0.5;
  double lo = -1.0;
  double hi = 1.0;
  std::size_t grid_n = 401;
  std::uint64_t seed = 1;
  DabNetConfig dabnet;
  DemoConfig() { dabnet.hidden = {64, 64}; }  // a 1-d fit needs no width-256 net
};

inline nlohmann::ordered_json to_json(const DemoConfig& c) {
  nlohmann::ordered_json j;
  j["hidden"] = c.hidden;
  j["steps"] = c.steps;
  j["batch"] = c.batch;
  j["lr"] = c.lr;
  j["gamma"] = c.gamma;
  j["eps"] = c.eps;
  j["lo"] = c.lo;
  j["hi"] = c.hi;
  j["grid_n"] = c.grid_n;
  j["seed"] = c.seed;
  j["dabnet_hidden"] = c.dabnet.hidden;
  j["dabnet_act"] = to_string(c.dabnet.act);
  j["dabnet_reg"] = to_string(c.dabnet.reg);
  return j;
}

struct DemoModel {
  DemoConfig cfg;
  ParamSet params;
  Mlp net;  // 1 -> hidden -> hidden -> 1
  Bridge bridge;
};

inline DemoModel build_demo_model(const DemoConfig& cfg) {
  DemoModel m;
  m.cfg = cfg;
  Rng init = Rng::stream(cfg.seed, "init");
  Rng init_dab = Rng::stream(cfg.seed, "init-dab");
  m.net = add_mlp(m.params, "net", {1, cfg.hidden, cfg.hidden, 1}, Act::elu, ParamGroup::model,
                  init);
  m.bridge = add_bridge(m.params, "dab", 1, HardKind::signum(cfg.eps), cfg.dabnet, init_dab);
  return m;
}

struct DemoSnapshot {
  std::string stage;
  std::size_t step = 0;
  std::vector<double> x;           // grid
  std::vector<double> prediction;  // hard forward output on the grid
  std::vector<double> dprediction_dx;  // bridged gradient d prediction / d x
  double grid_mse = 0.0;               // vs true step targets on the grid
};

struct DemoResult {
  DemoConfig cfg;
  std::vector<DemoSnapshot> snapshots;  // early, middle, final
  double final_mse = 0.0;
  double pred_at_lo = 0.0;  // prediction at the left grid edge
  double pred_at_hi = 0.0;
  double wall_sec = 0.0;
  ParamSet params;
};

inline std::vector<double> demo_grid(const DemoConfig& cfg) {
  std::vector<double> g(cfg.grid_n);
  for (std::size_t i = 0; i < cfg.grid_n; ++i) {
    g[i] = cfg.lo + (cfg.hi - cfg.lo) * static_cast<double>(i) /
                        static_cast<double>(cfg.grid_n - 1);
  }
  return g;
}

// Grid snapshot. Prediction comes from the eval-mode hard forward; the
// derivative column needs a training-mode tape with the grid itself as a
// leaf, so the upstream of each row routes through the approximator Jacobian
// back to x. Rows are independent, so one sweep yields every d pred_i / d x_i.
inline DemoSnapshot demo_snapshot(const DemoModel& m, const std::vector<double>& grid,
                                  std::string stage, std::size_t step) {
  DemoSnapshot snap;
  snap.stage = std::move(stage);
  snap.step = step;
  snap.x = grid;

  Tape tape;
  Watched watched = watch_params(tape, m.params);
  Ctx ctx = Ctx::train(tape, m.params, watched);
  Tensor xg = tape.leaf(Tensor(Shape{grid.size(), 1}, grid));
  Tensor z1 = mlp_forward(ctx, m.net, xg);
  auto [z, rec] = bridge_forward(ctx, m.bridge, z1);
  tape.backward(sum_all(z));
  Tensor dx = tape.grad_tensor(xg);

  snap.prediction.assign(z.data(), z.data() + z.size());
  snap.dprediction_dx.assign(dx.data(), dx.data() + dx.size());
  double se = 0.0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double target = signum_margin(grid[i], m.cfg.eps);
    const double d = snap.prediction[i] - target;
    se += d * d;
  }
  snap.grid_mse = se / static_cast<double>(grid.size());
  return snap;
}

inline DemoResult run_demo(const DemoConfig& cfg) {
  if (cfg.steps == 0 || cfg.grid_n < 2) throw ConfigError("demo-signum: need steps > 0, grid >= 2");
  const auto t0 = std::chrono::steady_clock::now();
  DemoModel model = build_demo_model(cfg);
  Adam adam(OptimConfig{cfg.lr, 0.9, 0.999, 1e-8, std::nullopt});
  Rng data_rng = Rng::stream(cfg.seed, "data");
  const std::vector<double> grid = demo_grid(cfg);

  DemoResult result;
  result.cfg = cfg;
  const std::size_t early = std::max<std::size_t>(1, cfg.steps / 100);
  const std::size_t middle = std::max<std::size_t>(early + 1, cfg.steps / 4);

  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    Tensor x = gen_uniform(data_rng, {cfg.batch, 1}, cfg.lo, cfg.hi);
    std::vector<double> tv(cfg.batch);
    for (std::size_t i = 0; i < cfg.batch; ++i) tv[i] = signum_margin(x.data()[i], cfg.eps);
    Tensor y(Shape{cfg.batch, 1}, std::move(tv));

    Tape tape;
    Watched watched = watch_params(tape, model.params);
    Ctx ctx = Ctx::train(tape, model.params, watched);
    Tensor z1 = mlp_forward(ctx, model.net, tape.leaf(x));
    auto [z, rec] = bridge_forward(ctx, model.bridge, z1);
    Tensor loss = add(mse_loss(z, y),
                      dab_regularizer(rec, cfg.gamma, cfg.dabnet.reg, cfg.dabnet.huber_delta));
    tape.backward(loss);
    pull_grads(tape, watched, model.params);
    adam.step(model.params);

    if (step == early) result.snapshots.push_back(demo_snapshot(model, grid, "early", step));
    if (step == middle) result.snapshots.push_back(demo_snapshot(model, grid, "middle", step));
  }
  result.snapshots.push_back(demo_snapshot(model, grid, "final", cfg.steps));
  const DemoSnapshot& fin = result.snapshots.back();
  result.final_mse = fin.grid_mse;
  result.pred_at_lo = fin.prediction.front();
  result.pred_at_hi = fin.prediction.back();
  result.wall_sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  result.params = std::move(model.params);
  return result;
}

// Approximator-only fit: z1 is drawn directly from U(lo,hi) (no upstream
// net), and only the approximator group trains, driven purely by the
// regularizer. Returns the mean squared z_hard-vs-z_soft gap on the fixed
// grid after each epoch — the curve callers check for monotone descent.
inline std::vector<double> phi_only_fit_curve(const DemoConfig& cfg, std::size_t epochs,
                                              std::size_t steps_per_epoch = 20) {
  DemoModel model = build_demo_model(cfg);
  Adam adam(OptimConfig{cfg.lr, 0.9, 0.999, 1e-8, std::nullopt});
  Rng data_rng = Rng::stream(cfg.seed, "data");
  const std::vector<double> grid = demo_grid(cfg);
  const Tensor grid_t(Shape{grid.size(), 1}, grid);

  auto eval_gap = [&]() {
    Tape tape;
    Watched watched = watch_params(tape, model.params);
    Ctx ctx = Ctx::train(tape, model.params, watched);
    auto [z, rec] = bridge_forward(ctx, model.bridge, tape.leaf(grid_t));
    (void)z;
    double se = 0.0;
    for (std::size_t i = 0; i < rec.z_soft.size(); ++i) {
      const double d = rec.z_soft.data()[i] - rec.z_hard.data()[i];
      se += d * d;
    }
    return se / static_cast<double>(rec.z_soft.size());
  };

  std::vector<double> curve;
  for (std::size_t e = 0; e < epochs; ++e) {
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      Tensor z1v = gen_uniform(data_rng, {cfg.batch, 1}, cfg.lo, cfg.hi);
      Tape tape;
      Watched watched = watch_params(tape, model.params);
      Ctx ctx = Ctx::train(tape, model.params, watched);
      auto [z, rec] = bridge_forward(ctx, model.bridge, tape.leaf(z1v));
      (void)z;
      tape.backward(dab_regularizer(rec, cfg.gamma, cfg.dabnet.reg, cfg.dabnet.huber_delta));
      pull_grads(tape, watched, model.params);
      adam.step(model.params, ParamGroup::approximator);
    }
    curve.push_back(eval_gap());
  }
  return curve;
}

inline const std::vector<std::string>& demo_csv_header() {
  static const std::vector<std::string> h = {"stage", "x", "prediction", "dprediction_dx"};
  return h;
}

inline void write_demo_outputs(const DemoResult& r, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  CsvWriter csv(out_dir + "/predictions.csv", demo_csv_header());
  for (const auto& snap : r.snapshots) {
    for (std::size_t i = 0; i < snap.x.size(); ++i) {
      csv.row({snap.stage, fmt_num(snap.x[i]), fmt_num(snap.prediction[i]),
               fmt_num(snap.dprediction_dx[i])});
    }
  }
  csv.flush();

  nlohmann::ordered_json summary;
  summary["command"] = "demo-signum";
  summary["build_id"] = build_id();
  summary["config"] = to_json(r.cfg);
  summary["wall_clock_sec"] = r.wall_sec;
  nlohmann::ordered_json stages = nlohmann::ordered_json::array();
  for (const auto& snap : r.snapshots) {
    stages.push_back({{"stage", snap.stage}, {"step", snap.step}, {"grid_mse", snap.grid_mse}});
  }
  summary["stages"] = stages;
  summary["final"] = {{"mse", r.final_mse},
                      {"prediction_at_lo", r.pred_at_lo},
                      {"prediction_at_hi", r.pred_at_hi}};
  write_json(out_dir + "/summary.json", summary);
  save_checkpoint(r.params, out_dir + "/checkpoint.json");
}

}  // namespace dab
