// dab — command-line front end for the bridged-gradient experiment library.
//
// Subcommands: gradcheck, demo-signum, train-sort, train-vae, compare-ste.
// Configuration precedence: CLI flags > --config JSON file > built-in
// defaults. Exit codes: 0 success, 1 check/runtime failure, 2 configuration
// error.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dab/compare_lab.hpp"
#include "dab/demo.hpp"
#include "dab/gradcheck.hpp"
#include "dab/sorting_lab.hpp"
#include "dab/vae_lab.hpp"

namespace {

using nlohmann::json;

json read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw dab::ConfigError("cannot open config file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw dab::ConfigError("config file " + path + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw dab::ConfigError("config file " + path + " must hold a JSON object");
  return j;
}

void reject_unknown_keys(const json& j, const std::set<std::string>& allowed,
                         const std::string& command) {
  for (const auto& item : j.items()) {
    if (!allowed.count(item.key())) {
      throw dab::ConfigError(command + " config: unknown key \"" + item.key() + "\"");
    }
  }
}

// Re-apply a CLI flag over whatever the JSON config set.
template <typename T, typename U>
void override_if(const CLI::Option* opt, T& dst, const U& src) {
  if (opt && opt->count() > 0) dst = static_cast<T>(src);
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

int cmd_gradcheck(std::uint64_t seed, int trials) {
  const std::vector<dab::OpCheck> checks = dab::standard_op_checks(trials);
  const std::vector<dab::CheckResult> results = dab::run_op_checks(checks, seed);
  std::size_t failures = 0;
  std::printf("%-28s %12s %10s  %s\n", "check", "max_rel_err", "tolerance", "status");
  for (const auto& r : results) {
    std::printf("%-28s %12.3e %10.0e  %s\n", r.name.c_str(), r.max_rel_err, r.tolerance,
                r.pass ? "pass" : "FAIL");
    if (!r.pass) ++failures;
  }
  const double oracle = dab::bridge_oracle_error(seed);
  const bool oracle_pass = oracle <= 1e-12;
  std::printf("%-28s %12.3e %10.0e  %s\n", "bridge-backward-oracle", oracle, 1e-12,
              oracle_pass ? "pass" : "FAIL");
  if (!oracle_pass) ++failures;
  std::printf("%zu/%zu checks passed\n", results.size() + 1 - failures, results.size() + 1);
  return failures == 0 ? 0 : 1;
}

// ---------------------------------------------------------------------------
// demo-signum
// ---------------------------------------------------------------------------

void apply_json(dab::DemoConfig& cfg, const json& j) {
  reject_unknown_keys(j,
                      {"hidden", "steps", "batch", "lr", "gamma", "eps", "lo", "hi", "grid_n",
                       "seed", "dabnet_hidden", "dabnet_act", "dabnet_reg"},
                      "demo-signum");
  cfg.hidden = j.value("hidden", cfg.hidden);
  cfg.steps = j.value("steps", cfg.steps);
  cfg.batch = j.value("batch", cfg.batch);
  cfg.lr = j.value("lr", cfg.lr);
  cfg.gamma = j.value("gamma", cfg.gamma);
  cfg.eps = j.value("eps", cfg.eps);
  cfg.lo = j.value("lo", cfg.lo);
  cfg.hi = j.value("hi", cfg.hi);
  cfg.grid_n = j.value("grid_n", cfg.grid_n);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.dabnet.hidden = j.value("dabnet_hidden", cfg.dabnet.hidden);
  if (j.contains("dabnet_act")) cfg.dabnet.act = dab::parse_act(j["dabnet_act"]);
  if (j.contains("dabnet_reg")) cfg.dabnet.reg = dab::parse_reg_kind(j["dabnet_reg"]);
}

// ---------------------------------------------------------------------------
// train-sort
// ---------------------------------------------------------------------------

void apply_json(dab::SortTaskConfig& cfg, const json& j) {
  reject_unknown_keys(
      j, {"t", "model", "estimator", "cell", "ponder", "hidden", "epochs", "batch", "n_train",
          "n_test", "lr", "lr_min_frac", "gamma", "signum_eps", "seed", "grad_clip", "stop_aon",
          "dabnet_hidden", "dabnet_act", "dabnet_reg"},
      "train-sort");
  cfg.t = j.value("t", cfg.t);
  if (j.contains("model")) cfg.model = dab::parse_sort_model(j["model"]);
  if (j.contains("estimator")) cfg.bottleneck = dab::parse_sort_bottleneck(j["estimator"]);
  if (j.contains("cell")) cfg.cell = dab::parse_cell(j["cell"]);
  cfg.ponder = j.value("ponder", cfg.ponder);
  cfg.hidden = j.value("hidden", cfg.hidden);
  cfg.epochs = j.value("epochs", cfg.epochs);
  cfg.batch = j.value("batch", cfg.batch);
  cfg.n_train = j.value("n_train", cfg.n_train);
  cfg.n_test = j.value("n_test", cfg.n_test);
  cfg.lr = j.value("lr", cfg.lr);
  cfg.lr_min_frac = j.value("lr_min_frac", cfg.lr_min_frac);
  cfg.gamma = j.value("gamma", cfg.gamma);
  cfg.signum_eps = j.value("signum_eps", cfg.signum_eps);
  cfg.seed = j.value("seed", cfg.seed);
  if (j.contains("grad_clip")) {
    if (j["grad_clip"].is_null()) {
      cfg.grad_clip = std::nullopt;
    } else {
      cfg.grad_clip = j["grad_clip"].get<double>();
    }
  }
  if (j.contains("stop_aon")) {
    if (j["stop_aon"].is_null()) {
      cfg.stop_aon = std::nullopt;
    } else {
      cfg.stop_aon = j["stop_aon"].get<double>();
    }
  }
  cfg.dabnet.hidden = j.value("dabnet_hidden", cfg.dabnet.hidden);
  if (j.contains("dabnet_act")) cfg.dabnet.act = dab::parse_act(j["dabnet_act"]);
  if (j.contains("dabnet_reg")) cfg.dabnet.reg = dab::parse_reg_kind(j["dabnet_reg"]);
}

// ---------------------------------------------------------------------------
// train-vae
// ---------------------------------------------------------------------------

void apply_json(dab::VaeConfig& cfg, const json& j) {
  reject_unknown_keys(j,
                      {"latent", "hidden", "prior_p", "estimator", "hard", "signum_eps", "gamma",
                       "lr", "epochs", "batch", "n_train", "n_test", "seed", "gumbel_tau0",
                       "gumbel_tau_min", "gumbel_decay", "dabnet_hidden", "dabnet_act",
                       "dabnet_reg"},
                      "train-vae");
  cfg.latent = j.value("latent", cfg.latent);
  cfg.hidden = j.value("hidden", cfg.hidden);
  cfg.prior_p = j.value("prior_p", cfg.prior_p);
  if (j.contains("estimator")) cfg.est = dab::parse_estimator(j["estimator"]);
  if (j.contains("hard")) cfg.hard_op = dab::parse_vae_hard(j["hard"]);
  cfg.signum_eps = j.value("signum_eps", cfg.signum_eps);
  cfg.gamma = j.value("gamma", cfg.gamma);
  cfg.lr = j.value("lr", cfg.lr);
  cfg.epochs = j.value("epochs", cfg.epochs);
  cfg.batch = j.value("batch", cfg.batch);
  cfg.n_train = j.value("n_train", cfg.n_train);
  cfg.n_test = j.value("n_test", cfg.n_test);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.gumbel.tau0 = j.value("gumbel_tau0", cfg.gumbel.tau0);
  cfg.gumbel.tau_min = j.value("gumbel_tau_min", cfg.gumbel.tau_min);
  cfg.gumbel.decay = j.value("gumbel_decay", cfg.gumbel.decay);
  cfg.dabnet.hidden = j.value("dabnet_hidden", cfg.dabnet.hidden);
  if (j.contains("dabnet_act")) cfg.dabnet.act = dab::parse_act(j["dabnet_act"]);
  if (j.contains("dabnet_reg")) cfg.dabnet.reg = dab::parse_reg_kind(j["dabnet_reg"]);
}

std::pair<dab::LabeledImages, dab::LabeledImages> vae_data(const std::string& data_spec,
                                                           const dab::VaeConfig& cfg) {
  if (data_spec == "synthetic") {
    dab::Rng data_rng = dab::Rng::stream(cfg.seed, "data");
    dab::LabeledImages train = dab::gen_shapes(data_rng, cfg.n_train);
    dab::LabeledImages test = dab::gen_shapes(data_rng, cfg.n_test);
    return {std::move(train), std::move(test)};
  }
  if (data_spec.rfind("idx:", 0) == 0) {
    const std::string dir = data_spec.substr(4);
    auto need = [&dir](const char* name) {
      const std::string path = dir + "/" + name;
      if (!std::filesystem::exists(path)) {
        throw dab::ConfigError("dataset not present: expected " + path);
      }
      return path;
    };
    const std::string train_images = need("train-images-idx3-ubyte");
    const std::string train_labels = need("train-labels-idx1-ubyte");
    const std::string test_images = need("t10k-images-idx3-ubyte");
    const std::string test_labels = need("t10k-labels-idx1-ubyte");
    dab::LabeledImages train = dab::load_idx_pair(train_images, train_labels);
    dab::LabeledImages test = dab::load_idx_pair(test_images, test_labels);
    return {std::move(train), std::move(test)};
  }
  throw dab::ConfigError("--data must be \"synthetic\" or \"idx:DIR\", got \"" + data_spec + "\"");
}

// ---------------------------------------------------------------------------
// compare-ste
// ---------------------------------------------------------------------------

void apply_json(dab::ShapesTaskConfig& cfg, const json& j) {
  reject_unknown_keys(j,
                      {"hidden", "code", "decoder_hidden", "gamma", "lr", "epochs", "batch",
                       "n_train", "n_test", "dabnet_hidden", "dabnet_act", "dabnet_reg"},
                      "compare-ste");
  cfg.hidden = j.value("hidden", cfg.hidden);
  cfg.code = j.value("code", cfg.code);
  cfg.decoder_hidden = j.value("decoder_hidden", cfg.decoder_hidden);
  cfg.gamma = j.value("gamma", cfg.gamma);
  cfg.lr = j.value("lr", cfg.lr);
  cfg.epochs = j.value("epochs", cfg.epochs);
  cfg.batch = j.value("batch", cfg.batch);
  cfg.n_train = j.value("n_train", cfg.n_train);
  cfg.n_test = j.value("n_test", cfg.n_test);
  cfg.dabnet.hidden = j.value("dabnet_hidden", cfg.dabnet.hidden);
  if (j.contains("dabnet_act")) cfg.dabnet.act = dab::parse_act(j["dabnet_act"]);
  if (j.contains("dabnet_reg")) cfg.dabnet.reg = dab::parse_reg_kind(j["dabnet_reg"]);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bridged-gradient experiments: hard forward passes, smooth backward passes"};
  app.require_subcommand(1);

  // ---- gradcheck ----
  auto* gc = app.add_subcommand("gradcheck", "finite-difference suite + bridge backward oracle");
  std::uint64_t gc_seed = 1;
  int gc_trials = 8;
  gc->add_option("--seed", gc_seed, "rng seed for check points");
  gc->add_option("--trials", gc_trials, "random points per op")->check(CLI::PositiveNumber);

  // ---- demo-signum ----
  auto* dm = app.add_subcommand("demo-signum", "1-d step-function demo: predictions + gradients");
  dab::DemoConfig dm_cfg;
  std::string dm_out, dm_config;
  std::uint64_t dm_seed = dm_cfg.seed;
  std::size_t dm_steps = dm_cfg.steps, dm_batch = dm_cfg.batch, dm_hidden = dm_cfg.hidden,
              dm_grid = dm_cfg.grid_n;
  double dm_lr = dm_cfg.lr, dm_gamma = dm_cfg.gamma, dm_eps = dm_cfg.eps;
  auto* dm_o_steps = dm->add_option("--steps", dm_steps, "optimizer steps");
  auto* dm_o_batch = dm->add_option("--batch", dm_batch, "minibatch size");
  auto* dm_o_hidden = dm->add_option("--hidden", dm_hidden, "model hidden width");
  auto* dm_o_grid = dm->add_option("--grid", dm_grid, "snapshot grid points");
  auto* dm_o_lr = dm->add_option("--lr", dm_lr, "learning rate");
  auto* dm_o_gamma = dm->add_option("--gamma", dm_gamma, "regularizer weight");
  auto* dm_o_eps = dm->add_option("--eps", dm_eps, "signum margin");
  auto* dm_o_seed = dm->add_option("--seed", dm_seed, "seed");
  dm->add_option("--config", dm_config, "JSON config file");
  dm->add_option("--out", dm_out, "output directory")->required();

  // ---- train-sort ----
  auto* ts = app.add_subcommand("train-sort", "sequence sorting with a discrete bottleneck");
  dab::SortTaskConfig ts_cfg;
  std::string ts_out, ts_config, ts_model = "dense", ts_est = "dab", ts_cell = "gru";
  std::uint64_t ts_seed = ts_cfg.seed;
  std::size_t ts_t = ts_cfg.t, ts_ponder = ts_cfg.ponder, ts_hidden = ts_cfg.hidden,
              ts_epochs = ts_cfg.epochs, ts_batch = ts_cfg.batch, ts_ntrain = ts_cfg.n_train,
              ts_ntest = ts_cfg.n_test;
  double ts_lr = ts_cfg.lr, ts_lrfrac = ts_cfg.lr_min_frac, ts_gamma = ts_cfg.gamma,
         ts_eps = ts_cfg.signum_eps, ts_clip = 0.0, ts_stop = 0.0;
  auto* ts_o_t = ts->add_option("--t", ts_t, "sequence length");
  auto* ts_o_model = ts->add_option("--model", ts_model, "dense|rnn");
  auto* ts_o_est = ts->add_option("--estimator", ts_est, "dab|ste|tanh|elu");
  auto* ts_o_cell = ts->add_option("--cell", ts_cell, "gru|lstm (rnn model)");
  auto* ts_o_ponder = ts->add_option("--ponder", ts_ponder, "extra zero-input steps (rnn)");
  auto* ts_o_hidden = ts->add_option("--hidden", ts_hidden, "hidden width");
  auto* ts_o_epochs = ts->add_option("--epochs", ts_epochs, "training epochs");
  auto* ts_o_batch = ts->add_option("--batch", ts_batch, "minibatch size");
  auto* ts_o_ntrain = ts->add_option("--n-train", ts_ntrain, "training samples");
  auto* ts_o_ntest = ts->add_option("--n-test", ts_ntest, "test samples");
  auto* ts_o_lr = ts->add_option("--lr", ts_lr, "learning rate");
  auto* ts_o_lrfrac =
      ts->add_option("--lr-min-frac", ts_lrfrac, "cosine floor as a fraction of lr (1 = constant)");
  auto* ts_o_gamma = ts->add_option("--gamma", ts_gamma, "regularizer weight");
  auto* ts_o_eps = ts->add_option("--eps", ts_eps, "signum margin");
  auto* ts_o_clip = ts->add_option("--grad-clip", ts_clip, "global-norm clip (0 = off)");
  auto* ts_o_stop = ts->add_option("--stop-aon", ts_stop, "stop once test accuracy reaches this");
  auto* ts_o_seed = ts->add_option("--seed", ts_seed, "seed");
  ts->add_option("--config", ts_config, "JSON config file");
  ts->add_option("--out", ts_out, "output directory")->required();

  // ---- train-vae ----
  auto* tv = app.add_subcommand("train-vae", "discrete-latent VAE");
  dab::VaeConfig tv_cfg;
  std::string tv_out, tv_config, tv_data = "synthetic", tv_est = "dab", tv_hard = "bernoulli";
  std::uint64_t tv_seed = tv_cfg.seed;
  std::size_t tv_latent = tv_cfg.latent, tv_hidden = tv_cfg.hidden, tv_epochs = tv_cfg.epochs,
              tv_batch = tv_cfg.batch, tv_ntrain = tv_cfg.n_train, tv_ntest = tv_cfg.n_test;
  double tv_prior = tv_cfg.prior_p, tv_gamma = tv_cfg.gamma, tv_lr = tv_cfg.lr,
         tv_eps = tv_cfg.signum_eps;
  auto* tv_o_data = tv->add_option("--data", tv_data, "synthetic | idx:DIR");
  auto* tv_o_latent = tv->add_option("--latent", tv_latent, "latent code width");
  auto* tv_o_hidden = tv->add_option("--hidden", tv_hidden, "hidden width");
  auto* tv_o_est = tv->add_option("--estimator", tv_est, "dab|ste|gumbel");
  auto* tv_o_hard = tv->add_option("--hard", tv_hard, "bernoulli|binary|signum");
  auto* tv_o_prior = tv->add_option("--prior-p", tv_prior, "Bernoulli prior probability");
  auto* tv_o_gamma = tv->add_option("--gamma", tv_gamma, "regularizer weight");
  auto* tv_o_lr = tv->add_option("--lr", tv_lr, "learning rate");
  auto* tv_o_epochs = tv->add_option("--epochs", tv_epochs, "training epochs");
  auto* tv_o_batch = tv->add_option("--batch", tv_batch, "minibatch size");
  auto* tv_o_ntrain = tv->add_option("--n-train", tv_ntrain, "training samples");
  auto* tv_o_ntest = tv->add_option("--n-test", tv_ntest, "test samples");
  auto* tv_o_eps = tv->add_option("--eps", tv_eps, "signum margin (hard=signum)");
  auto* tv_o_seed = tv->add_option("--seed", tv_seed, "seed");
  tv->add_option("--config", tv_config, "JSON config file");
  tv->add_option("--out", tv_out, "output directory")->required();

  // ---- compare-ste ----
  auto* cs = app.add_subcommand("compare-ste",
                                "paired dab/ste arms on the sorted-feature classifier");
  dab::ShapesTaskConfig cs_cfg;
  std::string cs_out, cs_config;
  std::vector<std::uint64_t> cs_seeds = {1, 2, 3};
  std::size_t cs_hidden = cs_cfg.hidden, cs_code = cs_cfg.code, cs_dec = cs_cfg.decoder_hidden,
              cs_epochs = cs_cfg.epochs, cs_batch = cs_cfg.batch, cs_ntrain = cs_cfg.n_train,
              cs_ntest = cs_cfg.n_test;
  double cs_gamma = cs_cfg.gamma, cs_lr = cs_cfg.lr;
  cs->add_option("--seeds", cs_seeds, "matched seeds for both arms");
  auto* cs_o_hidden = cs->add_option("--hidden", cs_hidden, "encoder hidden width");
  auto* cs_o_code = cs->add_option("--code", cs_code, "sorted code width");
  auto* cs_o_dec = cs->add_option("--decoder-hidden", cs_dec, "decode width (0 = linear head)");
  auto* cs_o_epochs = cs->add_option("--epochs", cs_epochs, "training epochs");
  auto* cs_o_batch = cs->add_option("--batch", cs_batch, "minibatch size");
  auto* cs_o_ntrain = cs->add_option("--n-train", cs_ntrain, "training samples");
  auto* cs_o_ntest = cs->add_option("--n-test", cs_ntest, "test samples");
  auto* cs_o_gamma = cs->add_option("--gamma", cs_gamma, "regularizer weight (paired arms)");
  auto* cs_o_lr = cs->add_option("--lr", cs_lr, "learning rate");
  cs->add_option("--config", cs_config, "JSON config file");
  cs->add_option("--out", cs_out, "output directory")->required();

  try {
    app.parse(argc, argv);

    if (gc->parsed()) {
      return cmd_gradcheck(gc_seed, gc_trials);
    }

    if (dm->parsed()) {
      if (!dm_config.empty()) apply_json(dm_cfg, read_config_file(dm_config));
      override_if(dm_o_steps, dm_cfg.steps, dm_steps);
      override_if(dm_o_batch, dm_cfg.batch, dm_batch);
      override_if(dm_o_hidden, dm_cfg.hidden, dm_hidden);
      override_if(dm_o_grid, dm_cfg.grid_n, dm_grid);
      override_if(dm_o_lr, dm_cfg.lr, dm_lr);
      override_if(dm_o_gamma, dm_cfg.gamma, dm_gamma);
      override_if(dm_o_eps, dm_cfg.eps, dm_eps);
      override_if(dm_o_seed, dm_cfg.seed, dm_seed);
      dab::DemoResult r = dab::run_demo(dm_cfg);
      dab::write_demo_outputs(r, dm_out);
      std::printf("demo-signum: final grid mse %s, predictions at edges %s / %s (%s s)\n",
                  dab::fmt_num(r.final_mse).c_str(), dab::fmt_num(r.pred_at_lo).c_str(),
                  dab::fmt_num(r.pred_at_hi).c_str(), dab::fmt_num(r.wall_sec).c_str());
      return 0;
    }

    if (ts->parsed()) {
      if (!ts_config.empty()) apply_json(ts_cfg, read_config_file(ts_config));
      if (ts_o_model->count() > 0) ts_cfg.model = dab::parse_sort_model(ts_model);
      if (ts_o_est->count() > 0) ts_cfg.bottleneck = dab::parse_sort_bottleneck(ts_est);
      if (ts_o_cell->count() > 0) ts_cfg.cell = dab::parse_cell(ts_cell);
      override_if(ts_o_t, ts_cfg.t, ts_t);
      override_if(ts_o_ponder, ts_cfg.ponder, ts_ponder);
      override_if(ts_o_hidden, ts_cfg.hidden, ts_hidden);
      override_if(ts_o_epochs, ts_cfg.epochs, ts_epochs);
      override_if(ts_o_batch, ts_cfg.batch, ts_batch);
      override_if(ts_o_ntrain, ts_cfg.n_train, ts_ntrain);
      override_if(ts_o_ntest, ts_cfg.n_test, ts_ntest);
      override_if(ts_o_lr, ts_cfg.lr, ts_lr);
      override_if(ts_o_lrfrac, ts_cfg.lr_min_frac, ts_lrfrac);
      override_if(ts_o_gamma, ts_cfg.gamma, ts_gamma);
      override_if(ts_o_eps, ts_cfg.signum_eps, ts_eps);
      override_if(ts_o_seed, ts_cfg.seed, ts_seed);
      if (ts_o_clip->count() > 0) {
        ts_cfg.grad_clip = ts_clip > 0.0 ? std::optional<double>(ts_clip) : std::nullopt;
      }
      if (ts_o_stop->count() > 0) {
        ts_cfg.stop_aon = ts_stop > 0.0 ? std::optional<double>(ts_stop) : std::nullopt;
      }
      dab::SortRunResult r = dab::train_sort(ts_cfg);
      dab::write_sort_outputs(r, ts_out);
      if (r.rows.empty()) {
        std::printf("train-sort: no epochs\n");
      } else {
        std::printf("train-sort: best test all-or-none %s at epoch %zu (%s s)\n",
                    dab::fmt_num(r.best_test_aon).c_str(), r.best_epoch,
                    dab::fmt_num(r.wall_sec).c_str());
      }
      return 0;
    }

    if (tv->parsed()) {
      if (!tv_config.empty()) apply_json(tv_cfg, read_config_file(tv_config));
      if (tv_o_est->count() > 0) tv_cfg.est = dab::parse_estimator(tv_est);
      if (tv_o_hard->count() > 0) tv_cfg.hard_op = dab::parse_vae_hard(tv_hard);
      override_if(tv_o_latent, tv_cfg.latent, tv_latent);
      override_if(tv_o_hidden, tv_cfg.hidden, tv_hidden);
      override_if(tv_o_prior, tv_cfg.prior_p, tv_prior);
      override_if(tv_o_gamma, tv_cfg.gamma, tv_gamma);
      override_if(tv_o_lr, tv_cfg.lr, tv_lr);
      override_if(tv_o_epochs, tv_cfg.epochs, tv_epochs);
      override_if(tv_o_batch, tv_cfg.batch, tv_batch);
      override_if(tv_o_ntrain, tv_cfg.n_train, tv_ntrain);
      override_if(tv_o_ntest, tv_cfg.n_test, tv_ntest);
      override_if(tv_o_eps, tv_cfg.signum_eps, tv_eps);
      override_if(tv_o_seed, tv_cfg.seed, tv_seed);
      (void)tv_o_data;
      dab::validate(tv_cfg);
      auto [train, test] = vae_data(tv_data, tv_cfg);
      dab::VaeRunResult r = dab::train_vae(tv_cfg, train, test);
      dab::write_vae_outputs(r, tv_out);
      if (r.rows.empty()) {
        std::printf("train-vae: no epochs\n");
      } else {
        std::printf("train-vae: final test elbo %s nats, probe %s (%s s)\n",
                    dab::fmt_num(r.final_elbo_test).c_str(), dab::fmt_num(r.probe_acc).c_str(),
                    dab::fmt_num(r.wall_sec).c_str());
      }
      return 0;
    }

    if (cs->parsed()) {
      if (!cs_config.empty()) apply_json(cs_cfg, read_config_file(cs_config));
      override_if(cs_o_hidden, cs_cfg.hidden, cs_hidden);
      override_if(cs_o_code, cs_cfg.code, cs_code);
      override_if(cs_o_dec, cs_cfg.decoder_hidden, cs_dec);
      override_if(cs_o_epochs, cs_cfg.epochs, cs_epochs);
      override_if(cs_o_batch, cs_cfg.batch, cs_batch);
      override_if(cs_o_ntrain, cs_cfg.n_train, cs_ntrain);
      override_if(cs_o_ntest, cs_cfg.n_test, cs_ntest);
      override_if(cs_o_gamma, cs_cfg.gamma, cs_gamma);
      override_if(cs_o_lr, cs_cfg.lr, cs_lr);
      dab::CompareResult r = dab::compare_ste(cs_cfg, cs_seeds, cs_out);
      std::printf("compare-ste: mean test accuracy dab %s vs ste %s over %zu seeds; "
                  "conditioning emd %s -> %s\n",
                  dab::fmt_num(r.mean_dab).c_str(), dab::fmt_num(r.mean_ste).c_str(),
                  r.seeds.size(), dab::fmt_num(r.cond_emd_first).c_str(),
                  dab::fmt_num(r.cond_emd_final).c_str());
      return 0;
    }

    std::fprintf(stderr, "no subcommand selected\n");
    return 2;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);  // prints help, exits 0
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);  // prints the message
    return 2;
  } catch (const dab::ConfigError& e) {
    std::fprintf(stderr, "configuration error: %s\n", e.what());
    return 2;
  } catch (const dab::ParseError& e) {
    std::fprintf(stderr, "input error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
