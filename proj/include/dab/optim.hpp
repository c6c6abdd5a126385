#pragma once

// Named parameters and the Adam optimizer.
//
// A ParamSet owns parameter values and their most recent gradients, in
// declaration order. Each training step watches the parameters on a fresh
// tape, runs forward/backward, pulls gradients back into the set, and then
// applies one optimizer step. Iteration order is always declaration order,
// which keeps update arithmetic bit-reproducible.

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dab/tensor.hpp"

namespace dab {

// approximator marks the smooth stand-in network's parameters; everything
// else is model. The split exists for introspection and tests, not because
// the optimizer treats the groups differently.
enum class ParamGroup { model, approximator };

class ParamSet {
 public:
  Tensor& declare(const std::string& name, Tensor init, ParamGroup group = ParamGroup::model) {
    if (index_.count(name)) throw ConfigError("parameter redeclared: " + name);
    index_.emplace(name, entries_.size());
    entries_.push_back(Entry{name, std::move(init), group, std::nullopt});
    return entries_.back().value;
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t count() const { return entries_.size(); }

  Tensor& value(const std::string& name) { return entry(name).value; }
  const Tensor& value(const std::string& name) const { return entry(name).value; }
  ParamGroup group(const std::string& name) const { return entry(name).group; }

  void set_grad(const std::string& name, std::vector<double> g) {
    Entry& e = entry(name);
    if (g.size() != e.value.size()) {
      throw ShapeError("gradient length " + std::to_string(g.size()) + " for parameter " + name +
                       " of size " + std::to_string(e.value.size()));
    }
    e.grad = std::move(g);
  }

  const std::vector<double>* grad(const std::string& name) const {
    const Entry& e = entry(name);
    return e.grad ? &*e.grad : nullptr;
  }

  void clear_grads() {
    for (auto& e : entries_) e.grad.reset();
  }

  // Declaration-ordered names, optionally restricted to one group.
  std::vector<std::string> names(std::optional<ParamGroup> filter = std::nullopt) const {
    std::vector<std::string> out;
    for (const auto& e : entries_) {
      if (!filter || e.group == *filter) out.push_back(e.name);
    }
    return out;
  }

  std::size_t total_size(std::optional<ParamGroup> filter = std::nullopt) const {
    std::size_t n = 0;
    for (const auto& e : entries_) {
      if (!filter || e.group == *filter) n += e.value.size();
    }
    return n;
  }

 private:
  struct Entry {
    std::string name;
    Tensor value;
    ParamGroup group;
    std::optional<std::vector<double>> grad;
  };

  Entry& entry(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
    return entries_[it->second];
  }
  const Entry& entry(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
    return entries_[it->second];
  }

  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Parameters registered as leaves on one step's tape.
struct Watched {
  std::vector<std::string> names;
  std::unordered_map<std::string, Tensor> by_name;

  const Tensor& at(const std::string& name) const {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ConfigError("parameter not watched: " + name);
    return it->second;
  }
};

inline Watched watch_params(Tape& tape, const ParamSet& params) {
  Watched w;
  for (const auto& name : params.names()) {
    w.names.push_back(name);
    w.by_name.emplace(name, tape.leaf(params.value(name)));
  }
  return w;
}

// Copy this step's gradients back into the set. Parameters the loss never
// touched receive explicit zero gradients.
inline void pull_grads(const Tape& tape, const Watched& watched, ParamSet& params) {
  for (const auto& name : watched.names) {
    params.set_grad(name, tape.grad_vec(watched.at(name)));
  }
}

struct OptimConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // Global-norm gradient clip over the parameters of one step; disabled when
  // absent.
  std::optional<double> clip_norm;
};

class Adam {
 public:
  explicit Adam(OptimConfig cfg) : cfg_(cfg) {}

  const OptimConfig& config() const { return cfg_; }
  long step_count() const { return t_; }

  // Scheduled runs retune the rate between steps; moment state is kept.
  void set_lr(double lr) { cfg_.lr = lr; }

  // One update over the (optionally group-filtered) parameters. Every
  // selected parameter must carry a finite gradient from the current step.
  void step(ParamSet& params, std::optional<ParamGroup> filter = std::nullopt) {
    const std::vector<std::string> names = params.names(filter);

    double sq_norm = 0.0;
    for (const auto& name : names) {
      const std::vector<double>* g = params.grad(name);
      if (!g) throw Error("adam: missing gradient for parameter " + name);
      for (double v : *g) {
        if (!std::isfinite(v)) {
          throw DomainError("adam: non-finite gradient for parameter " + name);
        }
        sq_norm += v * v;
      }
    }
    double clip_scale = 1.0;
    if (cfg_.clip_norm) {
      const double norm = std::sqrt(sq_norm);
      if (norm > *cfg_.clip_norm) clip_scale = *cfg_.clip_norm / norm;
    }

    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));

    for (const auto& name : names) {
      const std::vector<double>& g = *params.grad(name);
      Tensor& w = params.value(name);
      auto& st = state_[name];
      if (st.m.empty()) {
        st.m.assign(w.size(), 0.0);
        st.v.assign(w.size(), 0.0);
      }
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = g[i] * clip_scale;
        st.m[i] = cfg_.beta1 * st.m[i] + (1.0 - cfg_.beta1) * gi;
        st.v[i] = cfg_.beta2 * st.v[i] + (1.0 - cfg_.beta2) * gi * gi;
        const double m_hat = st.m[i] / bc1;
        const double v_hat = st.v[i] / bc2;
        w[i] -= cfg_.lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
      }
    }
  }

 private:
  struct Moments {
    std::vector<double> m, v;
  };

  OptimConfig cfg_;
  long t_ = 0;
  std::unordered_map<std::string, Moments> state_;
};

}  // namespace dab
