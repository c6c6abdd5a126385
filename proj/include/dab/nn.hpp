#pragma once

// Layer builders over ParamSet + Tape.
//
// Layers are declared once against a ParamSet (drawing their init values
// from a named Rng stream) and applied per step through a Ctx, which reads
// parameters from the step's tape in training mode or straight from the
// ParamSet in eval mode. Weight init is Glorot-uniform; biases start at 0.

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "dab/ops.hpp"
#include "dab/optim.hpp"
#include "dab/rng.hpp"
#include "dab/tensor.hpp"

namespace dab {

enum class Act { identity, relu, elu, tanh, sigmoid };

inline const char* to_string(Act a) {
  switch (a) {
    case Act::identity: return "identity";
    case Act::relu: return "relu";
    case Act::elu: return "elu";
    case Act::tanh: return "tanh";
    case Act::sigmoid: return "sigmoid";
  }
  return "?";
}

inline Act parse_act(const std::string& s) {
  if (s == "identity") return Act::identity;
  if (s == "relu") return Act::relu;
  if (s == "elu") return Act::elu;
  if (s == "tanh") return Act::tanh;
  if (s == "sigmoid") return Act::sigmoid;
  throw ConfigError("unknown activation: " + s);
}

inline Tensor activate(Act a, const Tensor& x) {
  switch (a) {
    case Act::identity: return x;
    case Act::relu: return relu(x);
    case Act::elu: return elu(x);
    case Act::tanh: return tanh(x);
    case Act::sigmoid: return sigmoid(x);
  }
  throw ConfigError("activate: unknown activation");
}

// Forward-pass context: training mode carries the step's tape and watched
// parameter leaves; eval mode (tape == nullptr) reads raw parameter values,
// so nothing is recorded.
struct Ctx {
  Tape* tape = nullptr;
  const ParamSet* params = nullptr;
  const Watched* watched = nullptr;

  bool training() const { return tape != nullptr; }

  Tensor p(const std::string& name) const {
    if (training()) return watched->at(name);
    return params->value(name).detached();
  }

  static Ctx train(Tape& tape, const ParamSet& params, const Watched& watched) {
    return Ctx{&tape, &params, &watched};
  }
  static Ctx eval(const ParamSet& params) { return Ctx{nullptr, &params, nullptr}; }
};

// Glorot-uniform init: U(+-sqrt(6 / (fan_in + fan_out))), drawn row-major.
inline Tensor glorot_uniform(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> vals(fan_in * fan_out);
  for (auto& v : vals) v = rng.uniform(-limit, limit);
  return Tensor(Shape{fan_in, fan_out}, std::move(vals));
}

struct DenseLayer {
  std::string w, b;
  std::size_t in = 0, out = 0;
};

inline DenseLayer add_dense(ParamSet& params, const std::string& name, std::size_t in,
                            std::size_t out, ParamGroup group, Rng& init) {
  DenseLayer l{name + "/w", name + "/b", in, out};
  params.declare(l.w, glorot_uniform(init, in, out), group);
  params.declare(l.b, Tensor::zeros({out}), group);
  return l;
}

inline Tensor dense(const Ctx& ctx, const DenseLayer& l, const Tensor& x) {
  return add(matmul(x, ctx.p(l.w)), ctx.p(l.b));
}

// Dense stack with one activation between layers and a linear head.
struct Mlp {
  std::vector<DenseLayer> layers;
  Act hidden_act = Act::elu;
};

inline Mlp add_mlp(ParamSet& params, const std::string& name, const std::vector<std::size_t>& dims,
                   Act hidden_act, ParamGroup group, Rng& init) {
  if (dims.size() < 2) throw ConfigError("add_mlp: need at least input and output dims");
  Mlp m;
  m.hidden_act = hidden_act;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    m.layers.push_back(
        add_dense(params, name + "/l" + std::to_string(i), dims[i], dims[i + 1], group, init));
  }
  return m;
}

inline Tensor mlp_forward(const Ctx& ctx, const Mlp& m, Tensor x) {
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    x = dense(ctx, m.layers[i], x);
    if (i + 1 < m.layers.size()) x = activate(m.hidden_act, x);
  }
  return x;
}

// ---------------------------------------------------------------------------
// Recurrent cells
// ---------------------------------------------------------------------------

struct GruCell {
  DenseLayer zr;    // update+reset gates, [in+hidden] -> 2*hidden
  DenseLayer cand;  // candidate state, [in+hidden] -> hidden
  std::size_t in = 0, hidden = 0;
};

inline GruCell add_gru(ParamSet& params, const std::string& name, std::size_t in,
                       std::size_t hidden, ParamGroup group, Rng& init) {
  GruCell cell;
  cell.in = in;
  cell.hidden = hidden;
  cell.zr = add_dense(params, name + "/zr", in + hidden, 2 * hidden, group, init);
  cell.cand = add_dense(params, name + "/cand", in + hidden, hidden, group, init);
  return cell;
}

// One step: h' = z * h + (1 - z) * cand(x, r * h).
inline Tensor gru_step(const Ctx& ctx, const GruCell& cell, const Tensor& x, const Tensor& h) {
  Tensor gates = sigmoid(dense(ctx, cell.zr, concat_cols(x, h)));
  Tensor z = slice_cols(gates, 0, cell.hidden);
  Tensor r = slice_cols(gates, cell.hidden, 2 * cell.hidden);
  Tensor cand = tanh(dense(ctx, cell.cand, concat_cols(x, mul(r, h))));
  return add(mul(z, h), mul(add_scalar(neg(z), 1.0), cand));
}

struct LstmCell {
  DenseLayer gates;  // i,f,g,o stacked: [in+hidden] -> 4*hidden
  std::size_t in = 0, hidden = 0;
};

inline LstmCell add_lstm(ParamSet& params, const std::string& name, std::size_t in,
                         std::size_t hidden, ParamGroup group, Rng& init) {
  LstmCell cell;
  cell.in = in;
  cell.hidden = hidden;
  cell.gates = add_dense(params, name + "/gates", in + hidden, 4 * hidden, group, init);
  return cell;
}

struct LstmState {
  Tensor h, c;
};

inline LstmState lstm_step(const Ctx& ctx, const LstmCell& cell, const Tensor& x,
                           const LstmState& s) {
  Tensor acts = dense(ctx, cell.gates, concat_cols(x, s.h));
  const std::size_t H = cell.hidden;
  Tensor i = sigmoid(slice_cols(acts, 0, H));
  Tensor f = sigmoid(slice_cols(acts, H, 2 * H));
  Tensor g = tanh(slice_cols(acts, 2 * H, 3 * H));
  Tensor o = sigmoid(slice_cols(acts, 3 * H, 4 * H));
  Tensor c = add(mul(f, s.c), mul(i, g));
  Tensor h = mul(o, tanh(c));
  return LstmState{h, c};
}

}  // namespace dab
