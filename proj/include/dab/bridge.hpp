#pragma once

// The bridge layer: hard function forward, smooth approximator backward.
//
// In training mode the layer emits the hard function's exact output (same
// values the eval path produces), while its backward rule routes the
// upstream task gradient through the Jacobian of a jointly trained smooth
// approximator network into the pre-bridge activations. The approximator is
// pulled toward the hard function by a regularizer on its own output; the
// hard output enters that regularizer as a constant. Straight-through and
// Gumbel-softmax estimators live here too, as baselines.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dab/hard.hpp"
#include "dab/nn.hpp"
#include "dab/ops.hpp"
#include "dab/optim.hpp"
#include "dab/rng.hpp"
#include "dab/tensor.hpp"

namespace dab {

// Distance pulling the approximator toward the hard output.
enum class RegKind { l2, l1, huber, cosine, cross_entropy };

inline const char* to_string(RegKind k) {
  switch (k) {
    case RegKind::l2: return "l2";
    case RegKind::l1: return "l1";
    case RegKind::huber: return "huber";
    case RegKind::cosine: return "cosine";
    case RegKind::cross_entropy: return "cross_entropy";
  }
  return "?";
}

inline RegKind parse_reg_kind(const std::string& s) {
  if (s == "l2") return RegKind::l2;
  if (s == "l1") return RegKind::l1;
  if (s == "huber") return RegKind::huber;
  if (s == "cosine") return RegKind::cosine;
  if (s == "cross_entropy") return RegKind::cross_entropy;
  throw ConfigError("unknown regularizer kind: " + s);
}

// Approximator network shape and regularizer choice.
struct DabNetConfig {
  std::vector<std::size_t> hidden{256, 256};
  Act act = Act::elu;
  RegKind reg = RegKind::l2;
  double huber_delta = 1.0;
};

struct Bridge {
  HardKind kind;
  Mlp net;  // ParamGroup::approximator
  std::size_t in = 0, out = 0;
};

// Declare a bridge's approximator parameters. Output width follows the hard
// function (which may change dimension).
inline Bridge add_bridge(ParamSet& params, const std::string& name, std::size_t in_dim,
                         const HardKind& kind, const DabNetConfig& cfg, Rng& init) {
  Bridge b;
  b.kind = kind;
  b.in = in_dim;
  b.out = hard_output_shape(kind, Shape{1, in_dim}).back();
  std::vector<std::size_t> dims;
  dims.push_back(in_dim);
  dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
  dims.push_back(b.out);
  b.net = add_mlp(params, name, dims, cfg.act, ParamGroup::approximator, init);
  return b;
}

// Everything one training step needs to build the regularizer and to report
// how far the approximator sits from the hard function.
struct BridgeRecord {
  Tensor z1;      // pre-bridge activations (attached)
  Tensor z_hard;  // hard function output (plain values)
  Tensor z_soft;  // approximator output (attached)
  bool valid = false;
};

// Training-mode forward. The returned tensor carries the hard values and a
// backward rule that replays the approximator's recorded sub-graph to route
// the upstream gradient into z1. The approximator's own parameters receive
// nothing from the task loss; only the regularizer reaches them.
inline std::pair<Tensor, BridgeRecord> bridge_forward(const Ctx& ctx, const Bridge& b,
                                                      const Tensor& z1, Rng* hard_rng = nullptr) {
  if (!ctx.training()) throw Error("bridge_forward: needs a training context");
  if (!z1.attached()) throw Error("bridge_forward: z1 must be attached to the step tape");
  Tensor z_hard = apply_hard(b.kind, z1.detached(), hard_rng);
  Tensor z_soft = mlp_forward(ctx, b.net, z1);
  if (z_soft.shape() != z_hard.shape()) {
    throw ShapeError("bridge_forward: approximator output " + shape_str(z_soft.shape()) +
                     " does not match hard output " + shape_str(z_hard.shape()));
  }
  Tape& tp = *ctx.tape;
  const Tape* tape_ptr = &tp;
  const std::size_t z1_node = z1.node();
  const std::size_t soft_node = z_soft.node();
  const std::size_t z1_size = z1.size();
  Tensor out = tp.attach(
      z_hard, {z1_node},
      [tape_ptr, z1_node, soft_node, z1_size](std::span<const double> u, GradSlots& slots) {
        const std::vector<double> g = tape_ptr->vjp(soft_node, z1_node, u);
        auto& gz = ensure_slot(slots, z1_node, z1_size);
        for (std::size_t i = 0; i < z1_size; ++i) gz[i] += g[i];
      });
  return {out, BridgeRecord{z1, z_hard, z_soft, true}};
}

// Eval-mode forward: the hard function alone. The approximator is not
// evaluated, so eval cannot depend on it in any way.
inline Tensor bridge_eval(const Bridge& b, const Tensor& z1, Rng* hard_rng = nullptr) {
  return apply_hard(b.kind, z1.detached(), hard_rng);
}

// gamma * (sum over features, mean over batch) of the chosen distance
// between the approximator output and the (constant) hard output.
inline Tensor dab_regularizer(const BridgeRecord& rec, double gamma, RegKind kind = RegKind::l2,
                              double huber_delta = 1.0) {
  if (!rec.valid) throw Error("dab_regularizer: record is empty");
  if (gamma == 0.0) return Tensor::scalar(0.0);
  Tensor hard_const = rec.z_hard.detached();
  const double batch = static_cast<double>(hard_const.rows());
  switch (kind) {
    case RegKind::l2:
      return scale(sum_all(square(sub(rec.z_soft, hard_const))), gamma / batch);
    case RegKind::l1:
      return scale(sum_all(abs(sub(rec.z_soft, hard_const))), gamma / batch);
    case RegKind::huber:
      return scale(sum_all(huber_elem(sub(rec.z_soft, hard_const), huber_delta)), gamma / batch);
    case RegKind::cosine: {
      Tensor s = rec.z_soft.rank() == 2 ? rec.z_soft : reshape(rec.z_soft, {1, rec.z_soft.size()});
      Tensor h = hard_const.rank() == 2 ? hard_const : reshape(hard_const, {1, hard_const.size()});
      Tensor dots = row_sum(mul(s, h));
      Tensor sn = sqrt(add_scalar(row_sum(square(s)), 1e-12));
      Tensor hn = sqrt(add_scalar(row_sum(square(h)), 1e-12));
      Tensor cos = div(dots, mul(sn, hn));
      return scale(sum_all(add_scalar(neg(cos), 1.0)), gamma / batch);
    }
    case RegKind::cross_entropy: {
      for (double v : hard_const.values()) {
        if (v != 0.0 && v != 1.0) {
          throw ConfigError("cross_entropy regularizer needs a {0,1} hard output");
        }
      }
      return scale(bce_with_logits(rec.z_soft, hard_const), gamma);
    }
  }
  throw ConfigError("dab_regularizer: unknown kind");
}

// Straight-through estimator: hard values forward, identity backward.
// Rejects hard functions that change dimension (the copied-back gradient
// would not even have the right shape).
inline Tensor ste_forward(const Tensor& z1, const HardKind& kind, Rng* hard_rng = nullptr) {
  if (!shape_preserving(kind)) {
    throw ConfigError(std::string("ste_forward: straight-through cannot wrap the ") +
                      to_string(kind.op) + " op because it changes dimension");
  }
  Tensor z_hard = apply_hard(kind, z1.detached(), hard_rng);
  if (!z1.attached()) return z_hard;
  Tape& tp = *z1.tape();
  const std::size_t zn = z1.node();
  const std::size_t n = z1.size();
  return tp.attach(z_hard, {zn}, [zn, n](std::span<const double> u, GradSlots& slots) {
    auto& g = ensure_slot(slots, zn, n);
    for (std::size_t i = 0; i < n; ++i) g[i] += u[i];
  });
}

// Gumbel-softmax over rows of logits. Relaxed mode returns the tempered
// softmax of noisy logits; hard mode forwards the row-wise one-hot argmax
// with the relaxed gradient (straight-through on the relaxation).
inline Tensor gumbel_softmax(const Tensor& logits, double tau, Rng& rng, bool hard) {
  detail::require_rank2(logits, "gumbel_softmax");
  if (!(tau > 0.0)) throw ConfigError("gumbel_softmax: tau must be positive");
  Tensor noise(logits.shape());
  for (std::size_t i = 0; i < noise.size(); ++i) noise[i] = rng.gumbel();
  Tensor relaxed = softmax_rows(scale(add(logits, noise), 1.0 / tau));
  if (!hard) return relaxed;
  const std::size_t r = relaxed.shape()[0];
  const std::size_t c = relaxed.shape()[1];
  std::vector<double> onehot(r * c, 0.0);
  for (std::size_t i = 0; i < r; ++i) {
    onehot[i * c + argmax_span({relaxed.data() + i * c, c})] = 1.0;
  }
  Tensor hard_out(relaxed.shape(), std::move(onehot));
  if (!relaxed.attached()) return hard_out;
  Tape& tp = *relaxed.tape();
  const std::size_t rn = relaxed.node();
  const std::size_t n = relaxed.size();
  return tp.attach(hard_out, {rn}, [rn, n](std::span<const double> u, GradSlots& slots) {
    auto& g = ensure_slot(slots, rn, n);
    for (std::size_t i = 0; i < n; ++i) g[i] += u[i];
  });
}

// Per-step temperature: tau0 * decay^step, floored at tau_min.
struct GumbelSchedule {
  double tau0 = 1.0;
  double tau_min = 0.5;
  double decay = 0.9997;

  double at_step(long step) const {
    return std::max(tau_min, tau0 * std::pow(decay, static_cast<double>(step)));
  }
};

enum class EstimatorMode { dab, ste, gumbel };

inline const char* to_string(EstimatorMode m) {
  switch (m) {
    case EstimatorMode::dab: return "dab";
    case EstimatorMode::ste: return "ste";
    case EstimatorMode::gumbel: return "gumbel";
  }
  return "?";
}

inline EstimatorMode parse_estimator(const std::string& s) {
  if (s == "dab") return EstimatorMode::dab;
  if (s == "ste") return EstimatorMode::ste;
  if (s == "gumbel") return EstimatorMode::gumbel;
  throw ConfigError("unknown estimator: " + s);
}

// Independent cross-check of the bridge backward rule: for a known two-layer
// elu approximator, the routed input gradient must equal the explicitly
// assembled Jacobian-transpose product u^T W2^T diag(elu') W1^T. Returns the
// max abs difference over a few random draws; the gate is 1e-12.
inline double bridge_oracle_error(std::uint64_t seed, int trials = 5) {
  double worst = 0.0;
  for (int trial = 0; trial < trials; ++trial) {
    Rng rng = Rng::stream(seed + static_cast<std::uint64_t>(trial), "bridge-oracle");
    const std::size_t batch = 3, dim = 4, hid = 5;
    auto draw = [&rng](Shape s, double lim) {
      std::vector<double> v(numel(s));
      for (auto& x : v) x = rng.uniform(-lim, lim);
      return Tensor(std::move(s), std::move(v));
    };
    Tensor z1v = draw({batch, dim}, 2.0);
    Tensor w1 = draw({dim, hid}, 0.8);
    Tensor b1 = draw({hid}, 0.3);
    Tensor w2 = draw({hid, dim}, 0.8);
    Tensor b2 = draw({dim}, 0.3);
    Tensor upstream = draw({batch, dim}, 1.0);

    ParamSet params;
    params.declare("net/l0/w", w1, ParamGroup::approximator);
    params.declare("net/l0/b", b1, ParamGroup::approximator);
    params.declare("net/l1/w", w2, ParamGroup::approximator);
    params.declare("net/l1/b", b2, ParamGroup::approximator);
    Bridge bridge;
    bridge.kind = HardKind::signum(0.5);
    bridge.in = dim;
    bridge.out = dim;
    bridge.net.hidden_act = Act::elu;
    bridge.net.layers = {DenseLayer{"net/l0/w", "net/l0/b", dim, hid},
                         DenseLayer{"net/l1/w", "net/l1/b", hid, dim}};

    Tape tape;
    Watched watched = watch_params(tape, params);
    Ctx ctx = Ctx::train(tape, params, watched);
    Tensor z1 = tape.leaf(z1v);
    auto [bridged, rec] = bridge_forward(ctx, bridge, z1);
    Tensor loss = sum_all(mul(bridged, upstream));
    tape.backward(loss);
    const std::vector<double> routed = tape.grad_vec(z1);

    // hand-assembled reference
    std::vector<double> hpre(batch * hid, 0.0);
    for (std::size_t i = 0; i < batch; ++i)
      for (std::size_t j = 0; j < hid; ++j) {
        double s = b1[j];
        for (std::size_t k = 0; k < dim; ++k) s += z1v[i * dim + k] * w1[k * hid + j];
        hpre[i * hid + j] = s;
      }
    std::vector<double> ghid(batch * hid, 0.0);
    for (std::size_t i = 0; i < batch; ++i)
      for (std::size_t j = 0; j < hid; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < dim; ++k) s += upstream[i * dim + k] * w2[j * dim + k];
        const double d = hpre[i * hid + j] > 0.0 ? 1.0 : std::exp(hpre[i * hid + j]);
        ghid[i * hid + j] = s * d;
      }
    for (std::size_t i = 0; i < batch; ++i)
      for (std::size_t k = 0; k < dim; ++k) {
        double s = 0.0;
        for (std::size_t j = 0; j < hid; ++j) s += ghid[i * hid + j] * w1[k * hid + j];
        worst = std::max(worst, std::abs(s - routed[i * dim + k]));
      }

    // forward must be the exact hard output in both modes
    Tensor hard_ref = bridge_eval(bridge, z1v);
    for (std::size_t i = 0; i < hard_ref.size(); ++i) {
      worst = std::max(worst, std::abs(hard_ref[i] - bridged[i]));
    }
  }
  return worst;
}

}  // namespace dab
