#pragma once

// Discrete-latent VAE with a bridged bottleneck.
//
// Encoder emits latent logits z1; the bottleneck turns them into a discrete
// code via a bridged hard function, a straight-through estimator, or a
// Gumbel-softmax relaxation (binary case as 2-class logits); the decoder
// reconstructs the binarized input. Loss = reconstruction BCE + KL to a
// Bernoulli prior + the bridge regularizer. The reported ELBO is
// reconstruction log-likelihood minus KL and never includes the regularizer.
// A signum bottleneck has no Bernoulli reading, so its KL is skipped and
// flagged.

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

struct VaeConfig {
  std::size_t latent = 32;
  std::size_t hidden = 256;
  double prior_p = 0.5;
  EstimatorMode est = EstimatorMode::dab;
  HardOp hard_op = HardOp::bernoulli_sample;  // dab/ste bottleneck flavor
  double signum_eps = 0.5;                    // signum flavor only
  double gamma = 10.0;
  double lr = 3e-4;
  std::size_t epochs = 100;
  std::size_t batch = 128;
  std::size_t n_train = 2048;
  std::size_t n_test = 1024;
  std::uint64_t seed = 1;
  GumbelSchedule gumbel;
  DabNetConfig dabnet;
  ProbeConfig probe;
};

inline nlohmann::ordered_json to_json(const VaeConfig& c) {
  nlohmann::ordered_json j;
  j["latent"] = c.latent;
  j["hidden"] = c.hidden;
  j["prior_p"] = c.prior_p;
  j["estimator"] = to_string(c.est);
  j["hard"] = to_string(c.hard_op);
  j["signum_eps"] = c.signum_eps;
  j["gamma"] = c.gamma;
  j["lr"] = c.lr;
  j["epochs"] = c.epochs;
  j["batch"] = c.batch;
  j["n_train"] = c.n_train;
  j["n_test"] = c.n_test;
  j["seed"] = c.seed;
  j["gumbel_tau0"] = c.gumbel.tau0;
  j["gumbel_tau_min"] = c.gumbel.tau_min;
  j["gumbel_decay"] = c.gumbel.decay;
  j["dabnet_hidden"] = c.dabnet.hidden;
  j["dabnet_act"] = to_string(c.dabnet.act);
  j["dabnet_reg"] = to_string(c.dabnet.reg);
  return j;
}

inline HardOp parse_vae_hard(const std::string& s) {
  if (s == "bernoulli") return HardOp::bernoulli_sample;
  if (s == "binary") return HardOp::binary_mean_threshold;
  if (s == "signum") return HardOp::signum_margin;
  throw ConfigError("unknown vae bottleneck op: " + s + " (expected bernoulli|binary|signum)");
}

inline HardKind vae_hard_kind(const VaeConfig& cfg) {
  switch (cfg.hard_op) {
    case HardOp::bernoulli_sample: return HardKind::bernoulli();
    case HardOp::binary_mean_threshold: return HardKind::binary();
    case HardOp::signum_margin: return HardKind::signum(cfg.signum_eps);
    default:
      throw ConfigError(std::string("train-vae: unsupported bottleneck hard op: ") +
                        to_string(cfg.hard_op));
  }
}

// KL needs a Bernoulli reading of the code; signum has none.
inline bool vae_kl_applicable(const VaeConfig& cfg) {
  return cfg.hard_op != HardOp::signum_margin;
}

inline void validate(const VaeConfig& cfg) {
  if (cfg.est == EstimatorMode::gumbel && cfg.hard_op != HardOp::bernoulli_sample) {
    throw ConfigError("train-vae: the gumbel estimator only models Bernoulli sampling");
  }
  vae_hard_kind(cfg);
  if (!(cfg.prior_p > 0.0 && cfg.prior_p < 1.0)) {
    throw ConfigError("train-vae: prior_p must lie strictly inside (0,1)");
  }
}

struct VaeModel {
  VaeConfig cfg;
  std::size_t input_dim = 0;
  ParamSet params;
  DenseLayer enc1, enc2, dec1, dec2;
  std::optional<Bridge> bridge;
  HardKind hard;
};

inline VaeModel build_vae_model(const VaeConfig& cfg, std::size_t input_dim) {
  validate(cfg);
  VaeModel m;
  m.cfg = cfg;
  m.input_dim = input_dim;
  m.hard = vae_hard_kind(cfg);
  Rng init = Rng::stream(cfg.seed, "init");
  Rng init_dab = Rng::stream(cfg.seed, "init-dab");
  m.enc1 = add_dense(m.params, "enc1", input_dim, cfg.hidden, ParamGroup::model, init);
  m.enc2 = add_dense(m.params, "enc2", cfg.hidden, cfg.latent, ParamGroup::model, init);
  if (cfg.est == EstimatorMode::dab) {
    m.bridge = add_bridge(m.params, "dab", cfg.latent, m.hard, cfg.dabnet, init_dab);
  }
  m.dec1 = add_dense(m.params, "dec1", cfg.latent, cfg.hidden, ParamGroup::model, init);
  m.dec2 = add_dense(m.params, "dec2", cfg.hidden, input_dim, ParamGroup::model, init);
  return m;
}

inline Tensor vae_encode(const VaeModel& m, const Ctx& ctx, const Tensor& x) {
  return dense(ctx, m.enc2, relu(dense(ctx, m.enc1, x)));
}

inline Tensor vae_decode(const VaeModel& m, const Ctx& ctx, const Tensor& z) {
  return dense(ctx, m.dec2, relu(dense(ctx, m.dec1, z)));
}

// The decoder only ever sees values from the hard codomain, train and eval
// alike; violations are internal bugs, checked per batch.
inline void require_codomain(const Tensor& z, HardOp op) {
  const bool signed_code = op == HardOp::signum_margin;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double v = z.data()[i];
    const bool ok = v == 0.0 || v == 1.0 || (signed_code && v == -1.0);
    if (!ok) {
      throw DomainError("vae bottleneck emitted " + fmt_num(v) +
                        ", outside the hard codomain of " + to_string(op));
    }
  }
}

// Training-mode bottleneck. For gumbel the per-latent binary choice is posed
// as 2-class logits [z1, 0] (softmax of which is sigmoid of z1), sampled
// straight-through at the scheduled temperature: the forward value is the
// one-hot winner's first column, so the decoder still sees {0,1}, while the
// backward pass uses the relaxed softmax Jacobian.
struct VaeBottleneckOut {
  Tensor z;
  BridgeRecord rec;  // dab only
};

inline VaeBottleneckOut vae_bottleneck_train(const VaeModel& m, const Ctx& ctx, const Tensor& z1,
                                             Rng& hard_rng, Rng& gumbel_rng, double tau) {
  VaeBottleneckOut out;
  switch (m.cfg.est) {
    case EstimatorMode::dab: {
      auto [z, rec] = bridge_forward(ctx, *m.bridge, z1, &hard_rng);
      out.z = z;
      out.rec = rec;
      break;
    }
    case EstimatorMode::ste:
      out.z = ste_forward(z1, m.hard, &hard_rng);
      break;
    case EstimatorMode::gumbel: {
      const std::size_t b = z1.shape()[0];
      const std::size_t l = z1.shape()[1];
      Tensor flat = reshape(z1, {b * l, 1});
      Tensor two_class = concat_cols(flat, Tensor::zeros({b * l, 1}));
      Tensor one_hot = gumbel_softmax(two_class, tau, gumbel_rng, /*hard=*/true);
      out.z = reshape(slice_cols(one_hot, 0, 1), {b, l});
      break;
    }
  }
  require_codomain(out.z, m.cfg.hard_op);
  return out;
}

// Eval-mode code: the discrete latent every estimator is judged on. The
// bridge approximator plays no part here.
inline Tensor vae_code_eval(const VaeModel& m, const Tensor& z1, Rng& eval_rng) {
  if (m.cfg.est == EstimatorMode::gumbel) {
    return bernoulli_sample(z1.detached(), eval_rng);
  }
  return apply_hard(m.hard, z1.detached(), &eval_rng);
}

// KL argument per estimator: the bridge's approximator logits define q for
// dab; the encoder logits do for ste/gumbel.
inline Tensor vae_kl_logits(const VaeModel& m, const Ctx& ctx, const Tensor& z1,
                            const VaeBottleneckOut& bn) {
  if (m.cfg.est == EstimatorMode::dab) {
    return ctx.training() ? bn.rec.z_soft : mlp_forward(ctx, m.bridge->net, z1);
  }
  return z1;
}

struct ElboReport {
  double recon_ll = 0.0;  // mean log-likelihood, nats (<= 0)
  double kl = 0.0;
  double elbo = 0.0;
  bool kl_applicable = true;
};

// Batched eval: hard code forward, reconstruction + KL in nats. Optionally
// pools the discrete codes for the probe.
inline ElboReport vae_elbo_eval(const VaeModel& m, const Tensor& images, Rng& eval_rng,
                                std::size_t eval_batch = 512,
                                std::vector<double>* code_pool = nullptr) {
  Ctx ctx = Ctx::eval(m.params);
  const std::size_t n = images.shape()[0];
  double recon_sum = 0.0;
  double kl_sum = 0.0;
  const bool kl_on = vae_kl_applicable(m.cfg);
  for (std::size_t lo = 0; lo < n; lo += eval_batch) {
    const std::size_t hi = std::min(n, lo + eval_batch);
    Tensor x = detail::take_rows(images, lo, hi);
    Tensor z1 = vae_encode(m, ctx, x);
    Tensor z = vae_code_eval(m, z1, eval_rng);
    require_codomain(z, m.cfg.hard_op);
    if (code_pool) code_pool->insert(code_pool->end(), z.data(), z.data() + z.size());
    Tensor logits = vae_decode(m, ctx, z);
    recon_sum += bce_with_logits(logits, x).value() * static_cast<double>(hi - lo);
    if (kl_on) {
      Tensor klq = vae_kl_logits(m, ctx, z1, VaeBottleneckOut{});
      kl_sum += bernoulli_kl(klq, m.cfg.prior_p).value() * static_cast<double>(hi - lo);
    }
  }
  ElboReport rep;
  rep.recon_ll = -recon_sum / static_cast<double>(n);
  rep.kl = kl_on ? kl_sum / static_cast<double>(n) : 0.0;
  rep.kl_applicable = kl_on;
  rep.elbo = rep.recon_ll - rep.kl;
  return rep;
}

struct VaeEpochRow {
  std::size_t epoch = 0;
  double recon = 0.0;  // train-split reconstruction log-likelihood (nats)
  double kl = 0.0;
  double elbo_train = 0.0;
  double elbo_test = 0.0;
  double dab_loss = 0.0;
  std::optional<double> probe_acc;  // final epoch only
};

struct VaeRunResult {
  VaeConfig cfg;
  std::vector<VaeEpochRow> rows;
  double best_elbo_test = 0.0;
  std::size_t best_epoch = 0;
  double final_elbo_train = 0.0;
  double final_elbo_test = 0.0;
  double final_gap = 0.0;  // elbo_train - elbo_test at the final epoch
  double probe_acc = 0.0;
  bool kl_applicable = true;
  double wall_sec = 0.0;
  ParamSet params;
};

inline VaeRunResult train_vae(const VaeConfig& cfg, const LabeledImages& train,
                              const LabeledImages& test) {
  validate(cfg);
  if (train.count() == 0 || test.count() == 0) throw ConfigError("train_vae: empty dataset");
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t n_train = std::min(cfg.n_train, train.count());
  const std::size_t n_test = std::min(cfg.n_test, test.count());
  const Tensor train_x = detail::take_rows(train.images, 0, n_train);
  const Tensor test_x = detail::take_rows(test.images, 0, n_test);

  VaeModel model = build_vae_model(cfg, train.dim());
  Adam adam(OptimConfig{cfg.lr, 0.9, 0.999, 1e-8, std::nullopt});
  Rng shuffle_rng = Rng::stream(cfg.seed, "shuffle");
  Rng hard_rng = Rng::stream(cfg.seed, "bernoulli");
  Rng gumbel_rng = Rng::stream(cfg.seed, "gumbel");

  VaeRunResult result;
  result.cfg = cfg;
  result.kl_applicable = vae_kl_applicable(cfg);
  std::vector<std::size_t> order(n_train);
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    detail::shuffle_indices(order, shuffle_rng);
    double reg_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t lo = 0; lo < n_train; lo += cfg.batch) {
      const std::size_t hi = std::min(n_train, lo + cfg.batch);
      Tensor x = detail::gather_rows(train_x, order, lo, hi);
      const std::size_t b = hi - lo;

      Tape tape;
      Watched watched = watch_params(tape, model.params);
      Ctx ctx = Ctx::train(tape, model.params, watched);
      Tensor z1 = vae_encode(model, ctx, x);
      const double tau = cfg.gumbel.at_step(adam.step_count());
      VaeBottleneckOut bn = vae_bottleneck_train(model, ctx, z1, hard_rng, gumbel_rng, tau);
      Tensor recon_logits = vae_decode(model, ctx, bn.z);
      Tensor loss = bce_with_logits(recon_logits, x);
      if (vae_kl_applicable(cfg)) {
        loss = add(loss, bernoulli_kl(vae_kl_logits(model, ctx, z1, bn), cfg.prior_p));
      }
      Tensor reg = cfg.est == EstimatorMode::dab
                       ? dab_regularizer(bn.rec, cfg.gamma, cfg.dabnet.reg, cfg.dabnet.huber_delta)
                       : Tensor::scalar(0.0);
      loss = add(loss, reg);
      tape.backward(loss);
      pull_grads(tape, watched, model.params);
      adam.step(model.params);
      reg_sum += reg.value() * static_cast<double>(b);
      seen += b;
    }

    // fresh eval stream per epoch: sampling noise is fixed per epoch index
    Rng eval_rng = Rng::stream(cfg.seed + epoch, "eval");
    VaeEpochRow row;
    row.epoch = epoch;
    row.dab_loss = reg_sum / static_cast<double>(seen);
    const bool last = epoch == cfg.epochs;
    std::vector<double> train_codes, test_codes;
    ElboReport on_train =
        vae_elbo_eval(model, train_x, eval_rng, 512, last ? &train_codes : nullptr);
    ElboReport on_test = vae_elbo_eval(model, test_x, eval_rng, 512, last ? &test_codes : nullptr);
    row.recon = on_train.recon_ll;
    row.kl = on_train.kl;
    row.elbo_train = on_train.elbo;
    row.elbo_test = on_test.elbo;
    if (last) {
      Tensor ztr(Shape{n_train, cfg.latent}, std::move(train_codes));
      Tensor zte(Shape{n_test, cfg.latent}, std::move(test_codes));
      std::vector<int> ytr(train.labels.begin(), train.labels.begin() + n_train);
      std::vector<int> yte(test.labels.begin(), test.labels.begin() + n_test);
      row.probe_acc = linear_probe_accuracy(ztr, ytr, zte, yte, train.num_classes, cfg.probe);
      result.probe_acc = *row.probe_acc;
    }
    result.rows.push_back(row);
    if (row.elbo_test > result.best_elbo_test || result.best_epoch == 0) {
      result.best_elbo_test = row.elbo_test;
      result.best_epoch = epoch;
    }
  }
  if (!result.rows.empty()) {
    result.final_elbo_train = result.rows.back().elbo_train;
    result.final_elbo_test = result.rows.back().elbo_test;
    result.final_gap = result.final_elbo_train - result.final_elbo_test;
  }
  result.wall_sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  result.params = std::move(model.params);
  return result;
}

inline const std::vector<std::string>& vae_csv_header() {
  static const std::vector<std::string> h = {"epoch",     "recon",    "kl",       "elbo_train",
                                             "elbo_test", "dab_loss", "probe_acc"};
  return h;
}

inline void write_vae_outputs(const VaeRunResult& r, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  CsvWriter csv(out_dir + "/metrics.csv", vae_csv_header());
  for (const auto& row : r.rows) {
    csv.row({std::to_string(row.epoch), fmt_num(row.recon), fmt_num(row.kl),
             fmt_num(row.elbo_train), fmt_num(row.elbo_test), fmt_num(row.dab_loss),
             row.probe_acc ? fmt_num(*row.probe_acc) : ""});
  }
  csv.flush();

  nlohmann::ordered_json summary;
  summary["command"] = "train-vae";
  summary["build_id"] = build_id();
  summary["config"] = to_json(r.cfg);
  summary["epochs_run"] = r.rows.size();
  summary["kl_applicable"] = r.kl_applicable;
  summary["wall_clock_sec"] = r.wall_sec;
  if (!r.rows.empty()) {
    summary["best"] = {{"elbo_test", r.best_elbo_test}, {"epoch", r.best_epoch}};
    summary["final"] = {{"elbo_train", r.final_elbo_train},
                        {"elbo_test", r.final_elbo_test},
                        {"gap", r.final_gap},
                        {"probe_acc", r.probe_acc}};
  } else {
    summary["best"] = nullptr;
    summary["final"] = nullptr;
    summary["note"] = "no epochs";
  }
  write_json(out_dir + "/summary.json", summary);
  save_checkpoint(r.params, out_dir + "/checkpoint.json");
}

}  // namespace dab
