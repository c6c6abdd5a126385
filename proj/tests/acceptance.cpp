// Acceptance gates, one printed line per criterion. Each line reports the
// measured value against the pinned threshold; the process exits nonzero if
// any gate fails. Pass the CLI binary's path as argv[1]; it is used for the
// reproducibility gate, everything else runs in process.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "dab/compare_lab.hpp"
#include "dab/demo.hpp"
#include "dab/gradcheck.hpp"
#include "dab/report.hpp"
#include "dab/sorting_lab.hpp"
#include "dab/vae_lab.hpp"

using namespace dab;

namespace {

int g_failures = 0;

void report(int criterion, bool pass, const std::string& what) {
  std::printf("%s  criterion %2d: %s\n", pass ? "PASS" : "FAIL", criterion, what.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

std::string num(double v) { return fmt_num(v); }

double wall_since(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// 1. gradient correctness
// ---------------------------------------------------------------------------

void criterion_gradcheck() {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<OpCheck> checks = standard_op_checks(20);
  std::vector<CheckResult> results = run_op_checks(checks, 20260818);
  double worst = 0.0;
  bool all_ok = true;
  for (const auto& r : results) {
    worst = std::max(worst, r.max_rel_err);
    all_ok = all_ok && r.pass;
  }
  const double bridge_err = bridge_oracle_error(20260818);
  const bool pass = all_ok && bridge_err <= 1e-12;
  report(1, pass,
         "gradients vs central differences: worst rel err " + num(worst) +
             " (tol 1e-4 per op), bridge backward vs oracle " + num(bridge_err) +
             " (tol 1e-12), " + num(wall_since(t0)) + " s");
}

// ---------------------------------------------------------------------------
// 2. step-function demo
// ---------------------------------------------------------------------------

void criterion_demo() {
  DemoResult r = run_demo(DemoConfig{});
  const bool pass = r.final_mse <= 0.05 && r.wall_sec <= 120.0;
  report(2, pass,
         "demo final grid MSE " + num(r.final_mse) + " (target <= 0.05) in " + num(r.wall_sec) +
             " s (budget 120 s)");
}

// ---------------------------------------------------------------------------
// 3 & 4. dense sorting at T=5 and T=10
// ---------------------------------------------------------------------------

double mean_best_sort(SortTaskConfig base, const std::vector<std::uint64_t>& seeds) {
  double sum = 0.0;
  for (std::uint64_t seed : seeds) {
    SortTaskConfig cfg = base;
    cfg.seed = seed;
    SortRunResult r = train_sort(cfg);
    std::string arm = std::string(to_string(cfg.model)) + " " + to_string(cfg.bottleneck);
    if (cfg.model == SortModelKind::rnn) arm += " ponder " + std::to_string(cfg.ponder);
    std::printf("      t=%zu %s seed %llu: best test all-or-none %.4f at epoch %zu (%.0f s)\n",
                cfg.t, arm.c_str(), static_cast<unsigned long long>(seed), r.best_test_aon,
                r.best_epoch, r.wall_sec);
    std::fflush(stdout);
    sum += r.best_test_aon;
  }
  return sum / static_cast<double>(seeds.size());
}

void criterion_sort_t5() {
  const auto t0 = std::chrono::steady_clock::now();
  SortTaskConfig cfg;  // tuned defaults; 200-epoch budget, batch 256
  cfg.t = 5;
  cfg.stop_aon = 0.95;
  const double dab_mean = mean_best_sort(cfg, {1, 2, 3});
  cfg.bottleneck = SortBottleneck::tanh_act;
  const double tanh_mean = mean_best_sort(cfg, {1, 2, 3});
  const double wall = wall_since(t0);
  const bool pass = dab_mean >= 0.95 && tanh_mean >= 0.95 && wall <= 900.0;
  report(3, pass,
         "T=5 mean best test all-or-none over 3 seeds: dab " + num(dab_mean) + ", tanh " +
             num(tanh_mean) + " (targets >= 0.95) in " + num(wall) + " s (budget 900 s)");
}

void criterion_sort_t10() {
  const auto t0 = std::chrono::steady_clock::now();
  SortTaskConfig cfg;
  cfg.t = 10;
  cfg.epochs = 300;  // within the 500-epoch allowance; the curve plateaus earlier
  cfg.stop_aon = 0.80;
  const double dab_mean = mean_best_sort(cfg, {1, 2, 3});
  const double wall = wall_since(t0);
  const bool pass = dab_mean >= 0.80 && wall <= 3600.0;
  report(4, pass,
         "T=10 mean best test all-or-none over 3 seeds: dab " + num(dab_mean) +
             " (target >= 0.80) in " + num(wall) + " s (budget 3600 s)");
}

// ---------------------------------------------------------------------------
// 5. recurrent model with pondering
// ---------------------------------------------------------------------------

void criterion_rnn_ponder() {
  const auto t0 = std::chrono::steady_clock::now();
  SortTaskConfig base;
  base.t = 10;
  base.model = SortModelKind::rnn;
  base.epochs = 30;
  base.n_train = 4096;

  auto arm_mean = [&](std::size_t ponder) {
    SortTaskConfig cfg = base;
    cfg.ponder = ponder;
    return mean_best_sort(cfg, {1, 2, 3});
  };
  const double p0 = arm_mean(0);
  const double p5 = arm_mean(5);
  const bool pass = p5 >= p0 - 0.01;
  report(5, pass,
         "rnn T=10 mean best accuracy: ponder 5 " + num(p5) + " vs ponder 0 " + num(p0) +
             " (target: ponder 5 >= ponder 0 - 0.01) in " + num(wall_since(t0)) + " s");
}

// ---------------------------------------------------------------------------
// 6 & 7. estimator comparison and distance conditioning
// ---------------------------------------------------------------------------

void criterion_compare() {
  ShapesTaskConfig base;
  CompareResult r = compare_ste(base, {1, 2, 3});
  for (const auto& row : r.per_seed) {
    std::printf("      compare seed %llu: dab %.4f ste %.4f\n",
                static_cast<unsigned long long>(row.seed), row.dab_acc, row.ste_acc);
  }
  report(6, r.mean_dab >= r.mean_ste,
         "matched-seed test accuracy: dab " + num(r.mean_dab) + " vs ste " + num(r.mean_ste) +
             " (target: dab >= ste) in " + num(r.wall_sec) + " s");
  report(7, r.cond_emd_final < r.cond_emd_first,
         "sort-activation distance: final epoch " + num(r.cond_emd_final) + " < first epoch " +
             num(r.cond_emd_first));
}

// ---------------------------------------------------------------------------
// 8. discrete-latent autoencoder
// ---------------------------------------------------------------------------

void criterion_vae() {
  const auto t0 = std::chrono::steady_clock::now();

  // The reported bound must be exactly reconstruction minus KL — the
  // regularizer weight has no way into the evaluation path.
  bool elbo_identity = true;
  {
    VaeConfig tiny;
    tiny.latent = 8;
    tiny.hidden = 16;
    Rng img_rng(11);
    LabeledImages imgs = gen_shapes(img_rng, 16);
    VaeModel m = build_vae_model(tiny, imgs.dim());
    Rng eval_rng(12);
    ElboReport rep = vae_elbo_eval(m, imgs.images, eval_rng);
    elbo_identity = rep.elbo == rep.recon_ll - rep.kl && rep.kl >= 0.0;
  }

  auto run_est = [&](EstimatorMode est, std::uint64_t seed) {
    VaeConfig cfg;
    cfg.est = est;
    cfg.seed = seed;
    Rng data_rng = Rng::stream(seed, "data");
    LabeledImages train = gen_shapes(data_rng, cfg.n_train);
    LabeledImages test = gen_shapes(data_rng, cfg.n_test);
    VaeRunResult r = train_vae(cfg, train, test);
    std::printf("      vae %s seed %llu: test elbo %.2f (gap %.2f, probe %.3f)\n", to_string(est),
                static_cast<unsigned long long>(seed), r.final_elbo_test, r.final_gap,
                r.probe_acc);
    std::fflush(stdout);
    return r;
  };

  double dab_elbo = 0.0, gum_elbo = 0.0, dab_gap = 0.0, gum_gap = 0.0, dab_probe = 0.0;
  double dab_kl_min = std::numeric_limits<double>::infinity();
  for (std::uint64_t seed : {1, 2, 3}) {
    VaeRunResult d = run_est(EstimatorMode::dab, seed);
    dab_elbo += d.final_elbo_test / 3.0;
    dab_gap += d.final_gap / 3.0;
    dab_probe += d.probe_acc / 3.0;
    for (const auto& row : d.rows) dab_kl_min = std::min(dab_kl_min, row.kl);
    VaeRunResult g = run_est(EstimatorMode::gumbel, seed);
    gum_elbo += g.final_elbo_test / 3.0;
    gum_gap += g.final_gap / 3.0;
  }

  const bool kl_ok = dab_kl_min >= 0.0 && elbo_identity;
  report(8, kl_ok && dab_elbo >= gum_elbo - 15.0 && dab_gap <= gum_gap + 2.0 &&
                 dab_probe >= 0.50,
         "vae means over 3 seeds: test elbo dab " + num(dab_elbo) + " vs gumbel " +
             num(gum_elbo) + " (target: within 15 nats), train/test gap " + num(dab_gap) +
             " vs " + num(gum_gap) + " (target: within 2 nats), probe " + num(dab_probe) +
             " (target >= 0.50), min kl " + num(dab_kl_min) + " (target >= 0), bound identity " +
             (elbo_identity ? "exact" : "BROKEN") + " in " + num(wall_since(t0)) + " s");
}

// ---------------------------------------------------------------------------
// 9. bit-level reproducibility through the CLI
// ---------------------------------------------------------------------------

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in.good()) return "<missing:" + path + ">";
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void criterion_reproducible(const std::string& cli) {
  namespace fs = std::filesystem;
  const fs::path base = fs::temp_directory_path() / "dab-acceptance-rerun";
  fs::remove_all(base);
  fs::create_directories(base);

  const std::string sort_args =
      " train-sort --t 3 --hidden 16 --epochs 2 --batch 32 --n-train 128 --n-test 64 --seed 9";
  const std::string vae_args =
      " train-vae --latent 8 --hidden 16 --epochs 2 --batch 32 --n-train 96 --n-test 64 --seed 9";

  bool pass = true;
  std::string detail;
  for (const auto& [tag, args] : std::vector<std::pair<std::string, std::string>>{
           {"sort", sort_args}, {"vae", vae_args}}) {
    const std::string out1 = (base / (tag + "-a")).string();
    const std::string out2 = (base / (tag + "-b")).string();
    const std::string cmd1 = cli + args + " --out " + out1 + " > /dev/null 2>&1";
    const std::string cmd2 = cli + args + " --out " + out2 + " > /dev/null 2>&1";
    if (std::system(cmd1.c_str()) != 0 || std::system(cmd2.c_str()) != 0) {
      pass = false;
      detail += tag + " run failed; ";
      continue;
    }
    const std::string a = slurp(out1 + "/metrics.csv");
    const std::string b = slurp(out2 + "/metrics.csv");
    if (a != b || a.empty()) {
      pass = false;
      detail += tag + " metrics.csv differs; ";
    } else {
      detail += tag + " metrics.csv identical (" + std::to_string(a.size()) + " bytes); ";
    }
  }
  fs::remove_all(base);
  report(9, pass, "same seed, same bytes through the CLI: " + detail);
}

// ---------------------------------------------------------------------------
// 10. hard-function property suite
// ---------------------------------------------------------------------------

void criterion_hard_properties() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(424242);
  bool pass = true;
  std::string detail;

  // sorted rows preserve the multiset and are ascending
  for (int trial = 0; trial < 20 && pass; ++trial) {
    std::vector<double> vals(28);
    for (double& v : vals) v = rng.uniform(-3.0, 3.0);
    Tensor x(Shape{4, 7}, std::move(vals));
    Tensor s = sort_rows(x);
    for (std::size_t r = 0; r < 4; ++r) {
      std::vector<double> a(x.data() + r * 7, x.data() + (r + 1) * 7);
      std::vector<double> b(s.data() + r * 7, s.data() + (r + 1) * 7);
      std::sort(a.begin(), a.end());
      for (std::size_t i = 0; i < 7; ++i) {
        if (a[i] != b[i]) pass = false;
        if (i > 0 && b[i] < b[i - 1]) pass = false;
      }
    }
  }
  if (!pass) detail += "row sort broke multiset/order; ";

  // dataset targets are valid permutation matrices
  {
    Rng drng(7);
    SortDataset d = make_sort_dataset(drng, 64, 5);
    for (std::size_t r = 0; r < d.n && pass; ++r) {
      for (std::size_t i = 0; i < 5; ++i) {
        double row_sum = 0.0, col_sum = 0.0;
        for (std::size_t j = 0; j < 5; ++j) {
          row_sum += d.y.data()[r * 25 + i * 5 + j];
          col_sum += d.y.data()[r * 25 + j * 5 + i];
        }
        if (row_sum != 1.0 || col_sum != 1.0) pass = false;
      }
    }
    if (!pass) detail += "dataset target not a permutation; ";
  }

  // signum is odd
  {
    bool odd = true;
    for (int i = 0; i < 2000; ++i) {
      const double v = rng.uniform(-2.0, 2.0);
      Tensor a(Shape{1, 1}, {v});
      Tensor b(Shape{1, 1}, {-v});
      odd = odd && signum_margin(a, 0.5).data()[0] == -signum_margin(b, 0.5).data()[0];
    }
    if (!odd) {
      pass = false;
      detail += "signum not odd; ";
    }
  }

  // bernoulli sampling matches its probability
  {
    Tensor logits = Tensor::zeros({100000, 1});
    Rng brng(99);
    Tensor draws = bernoulli_sample(logits, brng);
    double ones = 0.0;
    for (std::size_t i = 0; i < draws.size(); ++i) ones += draws.data()[i];
    const double rate = ones / static_cast<double>(draws.size());
    if (std::abs(rate - 0.5) > 0.01) {
      pass = false;
      detail += "bernoulli rate " + num(rate) + " off 0.5; ";
    }
  }

  // cluster assignment never increases within-cluster scatter vs one cluster
  {
    std::vector<double> vals(48);
    for (double& v : vals) v = rng.uniform(-5.0, 5.0);
    Tensor x(Shape{4, 12}, std::move(vals));
    auto scatter = [&](const Tensor& centers) {
      double s = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = x.data()[i] - centers.data()[i];
        s += d * d;
      }
      return s;
    };
    Rng krng(5);
    const double base = scatter(kmeans_assign(x, 1, 10, krng));
    for (std::size_t k = 2; k <= 4; ++k) {
      Rng krng2(5);
      if (scatter(kmeans_assign(x, k, 10, krng2)) > base + 1e-12) {
        pass = false;
        detail += "k=" + std::to_string(k) + " scatter above k=1; ";
      }
    }
  }

  if (pass) detail = "sort multiset/order, permutation targets, signum oddness, bernoulli rate, cluster scatter all hold";
  report(10, pass, detail + " (" + num(wall_since(t0)) + " s)");
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: acceptance <path-to-dab-cli>\n");
    return 2;
  }
  const std::string cli = argv[1];

  criterion_gradcheck();
  criterion_demo();
  criterion_sort_t5();
  criterion_sort_t10();
  criterion_rnn_ponder();
  criterion_compare();
  criterion_vae();
  criterion_reproducible(cli);
  criterion_hard_properties();

  std::printf("%d of 10 criteria failed\n", g_failures);
  return g_failures == 0 ? 0 : 1;
}
