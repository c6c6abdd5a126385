#pragma once

// Estimator comparison on a sorted-feature classifier.
//
// A small dense classifier over the synthetic shapes corpus whose hidden code
// z1 passes through a full ascending sort of its features — a shape-preserving
// hard function, so both the bridged backward and the straight-through
// identity backward apply to the identical forward graph. Arms share seeds:
// model parameters come from the same named stream regardless of estimator,
// so the first forward pass (and its loss) is bit-identical between arms, and
// everything after the first update is attributable to the backward rule.
//
// The per-epoch emd column tracks how strongly training conditions z1 toward
// its own sorted output: the mean over feature positions of the 1-D
// Wasserstein distance between that position's values across the test set and
// the sorted code's values at the same position. (Pooling all positions
// together would always read zero — sorting permutes within a row, so the
// pooled multisets match by construction.)

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dab/bridge.hpp"
#include "dab/checkpoint.hpp"
#include "dab/data.hpp"
#include "dab/metrics.hpp"
#include "dab/nn.hpp"
#include "dab/report.hpp"

namespace dab {

struct ShapesTaskConfig {
  std::size_t hidden = 128;
  std::size_t code = 64;  // width of the sorted feature vector z1
  // 0 = linear readout directly on the sorted code. A hidden decode layer
  // learns around backward-rule bias on this small task and washes out the
  // estimator contrast the experiment exists to measure.
  std::size_t decoder_hidden = 0;
  EstimatorMode est = EstimatorMode::dab;
  // Gentler than the training labs' 10: the regularizer's z1-path herds a
  // 64-wide code toward easily-approximated configurations when it dwarfs
  // the task term, which stalls the dab arm outright at desk scale.
  double gamma = 1.0;
  double lr = 1e-3;
  std::size_t epochs = 30;
  std::size_t batch = 128;
  std::size_t n_train = 1024;
  std::size_t n_test = 512;
  std::uint64_t seed = 1;
  DabNetConfig dabnet;
};

inline nlohmann::ordered_json to_json(const ShapesTaskConfig& c) {
  nlohmann::ordered_json j;
  j["hidden"] = c.hidden;
  j["code"] = c.code;
  j["decoder_hidden"] = c.decoder_hidden;
  j["estimator"] = to_string(c.est);
  j["gamma"] = c.gamma;
  j["lr"] = c.lr;
  j["epochs"] = c.epochs;
  j["batch"] = c.batch;
  j["n_train"] = c.n_train;
  j["n_test"] = c.n_test;
  j["seed"] = c.seed;
  j["dabnet_hidden"] = c.dabnet.hidden;
  j["dabnet_act"] = to_string(c.dabnet.act);
  j["dabnet_reg"] = to_string(c.dabnet.reg);
  return j;
}

inline void validate(const ShapesTaskConfig& cfg) {
  if (cfg.est == EstimatorMode::gumbel) {
    throw ConfigError("compare-ste: the sort bottleneck admits dab or ste only");
  }
}

struct ShapesModel {
  ShapesTaskConfig cfg;
  ParamSet params;
  DenseLayer enc1, enc2, dec1, head;
  std::optional<Bridge> bridge;
  HardKind hard = HardKind::sort();
};

inline ShapesModel build_shapes_model(const ShapesTaskConfig& cfg, std::size_t input_dim,
                                      std::size_t num_classes) {
  validate(cfg);
  ShapesModel m;
  m.cfg = cfg;
  Rng init = Rng::stream(cfg.seed, "init");
  Rng init_dab = Rng::stream(cfg.seed, "init-dab");
  m.enc1 = add_dense(m.params, "enc1", input_dim, cfg.hidden, ParamGroup::model, init);
  m.enc2 = add_dense(m.params, "enc2", cfg.hidden, cfg.code, ParamGroup::model, init);
  if (cfg.est == EstimatorMode::dab) {
    m.bridge = add_bridge(m.params, "dab", cfg.code, m.hard, cfg.dabnet, init_dab);
  }
  if (cfg.decoder_hidden > 0) {
    m.dec1 = add_dense(m.params, "dec1", cfg.code, cfg.decoder_hidden, ParamGroup::model, init);
    m.head = add_dense(m.params, "head", cfg.decoder_hidden, num_classes, ParamGroup::model, init);
  } else {
    m.head = add_dense(m.params, "head", cfg.code, num_classes, ParamGroup::model, init);
  }
  return m;
}

struct ShapesStepOut {
  Tensor logits;
  Tensor z1;
  Tensor zb;
  BridgeRecord rec;
};

inline ShapesStepOut shapes_forward(const ShapesModel& m, const Ctx& ctx, const Tensor& x) {
  ShapesStepOut out;
  out.z1 = dense(ctx, m.enc2, elu(dense(ctx, m.enc1, x)));
  if (ctx.training()) {
    if (m.cfg.est == EstimatorMode::dab) {
      auto [zb, rec] = bridge_forward(ctx, *m.bridge, out.z1);
      out.zb = zb;
      out.rec = rec;
    } else {
      out.zb = ste_forward(out.z1, m.hard);
    }
  } else {
    out.zb = apply_hard(m.hard, out.z1.detached());
  }
  Tensor h = m.cfg.decoder_hidden > 0 ? elu(dense(ctx, m.dec1, out.zb)) : out.zb;
  out.logits = dense(ctx, m.head, h);
  return out;
}

struct ShapesEpochRow {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double dab_loss = 0.0;
  double train_acc = 0.0;
  double test_acc = 0.0;
  double emd = 0.0;
};

struct ShapesRunResult {
  ShapesTaskConfig cfg;
  std::vector<ShapesEpochRow> rows;
  // Task cross-entropy of epoch 1's first minibatch, before any update:
  // bit-identical across estimators at matched seed.
  double first_forward_loss = 0.0;
  double best_test_acc = 0.0;
  std::size_t best_epoch = 0;
  double final_test_acc = 0.0;
  double emd_first = 0.0;
  double emd_final = 0.0;
  double wall_sec = 0.0;
  ParamSet params;
};

inline double shapes_eval(const ShapesModel& m, const Tensor& images,
                          const std::vector<int>& labels, std::size_t eval_batch = 512,
                          std::vector<double>* z1_pool = nullptr,
                          std::vector<double>* zb_pool = nullptr) {
  Ctx ctx = Ctx::eval(m.params);
  const std::size_t n = images.shape()[0];
  double hits = 0.0;
  for (std::size_t lo = 0; lo < n; lo += eval_batch) {
    const std::size_t hi = std::min(n, lo + eval_batch);
    Tensor x = detail::take_rows(images, lo, hi);
    ShapesStepOut out = shapes_forward(m, ctx, x);
    const std::vector<std::size_t> pred = argmax_rows(out.logits);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (static_cast<int>(pred[i]) == labels[lo + i]) hits += 1.0;
    }
    if (z1_pool) {
      z1_pool->insert(z1_pool->end(), out.z1.data(), out.z1.data() + out.z1.size());
      zb_pool->insert(zb_pool->end(), out.zb.data(), out.zb.data() + out.zb.size());
    }
  }
  return hits / static_cast<double>(n);
}

inline Tensor one_hot_labels(const std::vector<int>& labels, std::size_t lo, std::size_t hi,
                             const std::vector<std::size_t>& order, std::size_t num_classes) {
  std::vector<double> vals((hi - lo) * num_classes, 0.0);
  for (std::size_t i = lo; i < hi; ++i) {
    vals[(i - lo) * num_classes + static_cast<std::size_t>(labels[order[i]])] = 1.0;
  }
  return Tensor(Shape{hi - lo, num_classes}, std::move(vals));
}

inline ShapesRunResult train_shapes(const ShapesTaskConfig& cfg, const LabeledImages& train,
                                    const LabeledImages& test) {
  validate(cfg);
  if (cfg.batch == 0) throw ConfigError("train_shapes: batch must be positive");
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t n_train = std::min(cfg.n_train, train.count());
  const std::size_t n_test = std::min(cfg.n_test, test.count());
  const Tensor train_x = detail::take_rows(train.images, 0, n_train);
  const Tensor test_x = detail::take_rows(test.images, 0, n_test);
  const std::vector<int> train_y(train.labels.begin(), train.labels.begin() + n_train);
  const std::vector<int> test_y(test.labels.begin(), test.labels.begin() + n_test);

  ShapesModel model = build_shapes_model(cfg, train.dim(), train.num_classes);
  Adam adam(OptimConfig{cfg.lr, 0.9, 0.999, 1e-8, std::nullopt});
  Rng shuffle_rng = Rng::stream(cfg.seed, "shuffle");

  ShapesRunResult result;
  result.cfg = cfg;
  std::vector<std::size_t> order(n_train);
  std::iota(order.begin(), order.end(), 0);
  bool first_batch = true;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    detail::shuffle_indices(order, shuffle_rng);
    double loss_sum = 0.0, reg_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t lo = 0; lo < n_train; lo += cfg.batch) {
      const std::size_t hi = std::min(n_train, lo + cfg.batch);
      Tensor x = detail::gather_rows(train_x, order, lo, hi);
      Tensor y = one_hot_labels(train_y, lo, hi, order, train.num_classes);

      Tape tape;
      Watched watched = watch_params(tape, model.params);
      Ctx ctx = Ctx::train(tape, model.params, watched);
      ShapesStepOut out = shapes_forward(model, ctx, x);
      Tensor task = softmax_cross_entropy(out.logits, y);
      if (first_batch) {
        result.first_forward_loss = task.value();
        first_batch = false;
      }
      Tensor reg = cfg.est == EstimatorMode::dab
                       ? dab_regularizer(out.rec, cfg.gamma, cfg.dabnet.reg,
                                         cfg.dabnet.huber_delta)
                       : Tensor::scalar(0.0);
      Tensor loss = add(task, reg);
      tape.backward(loss);
      pull_grads(tape, watched, model.params);
      adam.step(model.params);
      loss_sum += task.value() * static_cast<double>(hi - lo);
      reg_sum += reg.value() * static_cast<double>(hi - lo);
      seen += hi - lo;
    }

    ShapesEpochRow row;
    row.epoch = epoch;
    row.train_loss = loss_sum / static_cast<double>(seen);
    row.dab_loss = reg_sum / static_cast<double>(seen);
    row.train_acc = shapes_eval(model, train_x, train_y);
    std::vector<double> z1_pool, zb_pool;
    row.test_acc = shapes_eval(model, test_x, test_y, 512, &z1_pool, &zb_pool);
    row.emd = per_position_emd(z1_pool, zb_pool, cfg.code);
    result.rows.push_back(row);
    if (row.test_acc > result.best_test_acc || result.best_epoch == 0) {
      result.best_test_acc = row.test_acc;
      result.best_epoch = epoch;
    }
  }
  if (!result.rows.empty()) {
    result.final_test_acc = result.rows.back().test_acc;
    result.emd_first = result.rows.front().emd;
    result.emd_final = result.rows.back().emd;
  }
  result.wall_sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  result.params = std::move(model.params);
  return result;
}

inline const std::vector<std::string>& shapes_csv_header() {
  static const std::vector<std::string> h = {"epoch",     "train_loss", "dab_loss",
                                             "train_acc", "test_acc",   "emd"};
  return h;
}

inline void write_shapes_outputs(const ShapesRunResult& r, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  CsvWriter csv(out_dir + "/metrics.csv", shapes_csv_header());
  for (const auto& row : r.rows) {
    csv.row({std::to_string(row.epoch), fmt_num(row.train_loss), fmt_num(row.dab_loss),
             fmt_num(row.train_acc), fmt_num(row.test_acc), fmt_num(row.emd)});
  }
  csv.flush();

  nlohmann::ordered_json summary;
  summary["command"] = "compare-ste";
  summary["build_id"] = build_id();
  summary["config"] = to_json(r.cfg);
  summary["epochs_run"] = r.rows.size();
  summary["first_forward_loss"] = r.first_forward_loss;
  summary["wall_clock_sec"] = r.wall_sec;
  if (!r.rows.empty()) {
    summary["best"] = {{"test_acc", r.best_test_acc}, {"epoch", r.best_epoch}};
    summary["final"] = {{"test_acc", r.final_test_acc},
                        {"emd_first", r.emd_first},
                        {"emd_final", r.emd_final}};
  } else {
    summary["best"] = nullptr;
    summary["final"] = nullptr;
    summary["note"] = "no epochs";
  }
  write_json(out_dir + "/summary.json", summary);
  save_checkpoint(r.params, out_dir + "/checkpoint.json");
}

// Conditioning run: the companion experiment to the paired comparison. One
// dab-only run with the regularizer at full training-lab strength and a
// hidden decode layer; its per-epoch emd column is the quantity of interest
// (the code drifts toward its own sorted order), with accuracy along for the
// ride. The paired arms keep the gentler settings where the backward-rule
// contrast is visible instead.
inline ShapesTaskConfig conditioning_config(const ShapesTaskConfig& base) {
  ShapesTaskConfig cfg = base;
  cfg.est = EstimatorMode::dab;
  cfg.gamma = 10.0;
  cfg.decoder_hidden = 128;
  cfg.epochs = std::max<std::size_t>(base.epochs, 40);
  return cfg;
}

// ---------------------------------------------------------------------------
// Paired comparison across seeds
// ---------------------------------------------------------------------------

struct CompareSeedRow {
  std::uint64_t seed = 0;
  double dab_acc = 0.0;  // final test accuracy
  double ste_acc = 0.0;
  double dab_first_loss = 0.0;  // bit-identical across arms at matched seed
  double ste_first_loss = 0.0;
  double dab_emd_first = 0.0;
  double dab_emd_final = 0.0;
};

struct CompareResult {
  ShapesTaskConfig base;  // estimator field ignored; both arms run
  std::vector<std::uint64_t> seeds;
  std::vector<CompareSeedRow> per_seed;
  double mean_dab = 0.0;
  double mean_ste = 0.0;
  // conditioning companion run (first seed)
  double cond_emd_first = 0.0;
  double cond_emd_final = 0.0;
  double cond_test_acc = 0.0;
  double wall_sec = 0.0;
};

inline CompareResult compare_ste(const ShapesTaskConfig& base,
                                 const std::vector<std::uint64_t>& seeds,
                                 const std::string& out_dir = "") {
  if (seeds.empty()) throw ConfigError("compare-ste: need at least one seed");
  const auto t0 = std::chrono::steady_clock::now();
  CompareResult result;
  result.base = base;
  result.seeds = seeds;
  for (std::uint64_t seed : seeds) {
    ShapesTaskConfig cfg = base;
    cfg.seed = seed;
    // the corpus is a function of the seed, shared by both arms
    Rng data_rng = Rng::stream(seed, "data");
    LabeledImages train = gen_shapes(data_rng, cfg.n_train);
    LabeledImages test = gen_shapes(data_rng, cfg.n_test);

    cfg.est = EstimatorMode::dab;
    ShapesRunResult dab_run = train_shapes(cfg, train, test);
    cfg.est = EstimatorMode::ste;
    ShapesRunResult ste_run = train_shapes(cfg, train, test);
    if (!out_dir.empty()) {
      write_shapes_outputs(dab_run, out_dir + "/dab-seed" + std::to_string(seed));
      write_shapes_outputs(ste_run, out_dir + "/ste-seed" + std::to_string(seed));
    }

    CompareSeedRow row;
    row.seed = seed;
    row.dab_acc = dab_run.final_test_acc;
    row.ste_acc = ste_run.final_test_acc;
    row.dab_first_loss = dab_run.first_forward_loss;
    row.ste_first_loss = ste_run.first_forward_loss;
    row.dab_emd_first = dab_run.emd_first;
    row.dab_emd_final = dab_run.emd_final;
    result.per_seed.push_back(row);
    result.mean_dab += row.dab_acc;
    result.mean_ste += row.ste_acc;
  }
  result.mean_dab /= static_cast<double>(seeds.size());
  result.mean_ste /= static_cast<double>(seeds.size());

  {
    ShapesTaskConfig cond = conditioning_config(base);
    cond.seed = seeds.front();
    Rng data_rng = Rng::stream(cond.seed, "data");
    LabeledImages train = gen_shapes(data_rng, cond.n_train);
    LabeledImages test = gen_shapes(data_rng, cond.n_test);
    ShapesRunResult run = train_shapes(cond, train, test);
    if (!out_dir.empty()) write_shapes_outputs(run, out_dir + "/conditioning");
    result.cond_emd_first = run.emd_first;
    result.cond_emd_final = run.emd_final;
    result.cond_test_acc = run.final_test_acc;
  }

  result.wall_sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    CsvWriter csv(out_dir + "/delta.csv",
                  {"seed", "dab_test_acc", "ste_test_acc", "delta", "first_loss_dab",
                   "first_loss_ste", "dab_emd_first", "dab_emd_final"});
    for (const auto& row : result.per_seed) {
      csv.row({std::to_string(row.seed), fmt_num(row.dab_acc), fmt_num(row.ste_acc),
               fmt_num(row.dab_acc - row.ste_acc), fmt_num(row.dab_first_loss),
               fmt_num(row.ste_first_loss), fmt_num(row.dab_emd_first),
               fmt_num(row.dab_emd_final)});
    }
    csv.flush();

    nlohmann::ordered_json summary;
    summary["command"] = "compare-ste";
    summary["build_id"] = build_id();
    summary["config"] = to_json(result.base);
    nlohmann::ordered_json per_seed = nlohmann::ordered_json::array();
    for (const auto& row : result.per_seed) {
      per_seed.push_back({{"seed", row.seed},
                          {"dab_test_acc", row.dab_acc},
                          {"ste_test_acc", row.ste_acc},
                          {"delta", row.dab_acc - row.ste_acc},
                          {"first_loss_dab", row.dab_first_loss},
                          {"first_loss_ste", row.ste_first_loss},
                          {"dab_emd_first", row.dab_emd_first},
                          {"dab_emd_final", row.dab_emd_final}});
    }
    summary["per_seed"] = per_seed;
    summary["mean"] = {{"dab", result.mean_dab},
                       {"ste", result.mean_ste},
                       {"delta", result.mean_dab - result.mean_ste}};
    summary["conditioning"] = {{"emd_first", result.cond_emd_first},
                               {"emd_final", result.cond_emd_final},
                               {"test_acc", result.cond_test_acc}};
    summary["wall_clock_sec"] = result.wall_sec;
    write_json(out_dir + "/delta.json", summary);
  }
  return result;
}

}  // namespace dab
