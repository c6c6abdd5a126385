#pragma once

// Dense 64-bit float tensors and a dynamic reverse-mode tape.
//
// A Tape is built fresh for every forward pass and consumed by a single
// backward() call. Node ids are append-ordered, so every node's parents have
// smaller ids and the reverse sweep is a simple descending loop; gradient
// contributions accumulate left-to-right in that fixed order, which makes
// whole training runs bit-reproducible on one machine.
//
// Tensors are value types over shared storage. Storage is treated as
// immutable once an op has produced it; only optimizer updates write into
// parameter storage, after the tape of the step has been consumed.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dab/errors.hpp"

namespace dab {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

class Tape;

inline constexpr std::size_t kNoNode = static_cast<std::size_t>(-1);

class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape)
      : Tensor(std::move(shape), std::vector<double>()) {
    data_->assign(numel(shape_), 0.0);
  }

  Tensor(Shape shape, std::vector<double> values)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<double>>(std::move(values))) {
    for (std::size_t d : shape_) {
      if (d == 0) throw ShapeError("tensor shape has zero dimension: " + shape_str(shape_));
    }
    if (!data_->empty() && data_->size() != numel(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_->size()) +
                       " does not match shape " + shape_str(shape_));
    }
  }

  static Tensor scalar(double v) { return Tensor(Shape{1}, {v}); }

  static Tensor full(Shape shape, double v) {
    std::vector<double> data(numel(shape), v);
    return Tensor(std::move(shape), std::move(data));
  }

  static Tensor zeros(Shape shape) { return full(std::move(shape), 0.0); }
  static Tensor ones(Shape shape) { return full(std::move(shape), 1.0); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_ ? data_->size() : 0; }
  bool empty() const { return size() == 0; }

  // Rank-2 accessors (rank-1 tensors count as a single row).
  std::size_t rows() const { return rank() == 2 ? shape_[0] : 1; }
  std::size_t cols() const { return rank() == 2 ? shape_[1] : size(); }

  double* data() { return data_->data(); }
  const double* data() const { return data_->data(); }
  std::span<const double> values() const { return {data_->data(), data_->size()}; }
  std::vector<double> to_vector() const { return *data_; }

  double operator[](std::size_t i) const { return (*data_)[i]; }
  double& operator[](std::size_t i) { return (*data_)[i]; }

  double at(std::size_t r, std::size_t c) const { return (*data_)[r * cols() + c]; }

  // Scalar fetch; errors on non-scalars to catch silent reductions-gone-wrong.
  double value() const {
    if (size() != 1) throw ShapeError("value() on non-scalar tensor " + shape_str(shape_));
    return (*data_)[0];
  }

  bool attached() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  std::size_t node() const { return node_; }

  // Same storage, no tape: gradients never flow through the result.
  Tensor detached() const {
    Tensor t;
    t.shape_ = shape_;
    t.data_ = data_;
    return t;
  }

 private:
  Shape shape_{};
  std::shared_ptr<std::vector<double>> data_{};
  Tape* tape_ = nullptr;
  std::size_t node_ = kNoNode;

  friend class Tape;
};

// Per-node gradient buffers for one reverse sweep. Slots start empty and are
// allocated on first contribution, so untouched subgraphs cost nothing and
// read back as zero gradients.
using GradSlots = std::vector<std::vector<double>>;

// Allocate-on-demand accumulator for a parent slot.
inline std::vector<double>& ensure_slot(GradSlots& slots, std::size_t node, std::size_t size) {
  auto& s = slots[node];
  if (s.empty()) s.assign(size, 0.0);
  return s;
}

class Tape {
 public:
  // backward rule: receives the upstream gradient of the node's output and
  // accumulates into the parents' slots.
  using BackwardFn = std::function<void(std::span<const double>, GradSlots&)>;

  struct Node {
    std::vector<std::size_t> parents;
    std::size_t size = 0;
    BackwardFn backward;  // empty for leaves
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Register an input. The returned tensor shares storage with `value`.
  Tensor leaf(const Tensor& value) {
    if (value.attached()) {
      if (value.tape() != this) throw Error("leaf() on a tensor attached to another tape");
      return value;
    }
    Tensor t = value;
    t.tape_ = this;
    t.node_ = add_node({}, t.size(), nullptr);
    return t;
  }

  // Record an op result. Parents must already live on this tape.
  Tensor make(Shape shape, std::vector<double> values, std::vector<std::size_t> parents,
              BackwardFn backward) {
    return attach(Tensor(std::move(shape), std::move(values)), std::move(parents),
                  std::move(backward));
  }

  // Record `value` as an op result without copying its storage. Backward
  // closures may capture the same tensor; storage is immutable once recorded.
  Tensor attach(const Tensor& value, std::vector<std::size_t> parents, BackwardFn backward) {
    for (std::size_t p : parents) {
      if (p >= nodes_.size()) throw Error("op parent id out of range");
    }
    Tensor t = value;
    t.tape_ = this;
    t.node_ = add_node(std::move(parents), t.size(), std::move(backward));
    return t;
  }

  std::size_t node_count() const { return nodes_.size(); }
  const Node& node_at(std::size_t i) const { return nodes_.at(i); }
  bool consumed() const { return consumed_; }

  // Full reverse sweep from a scalar loss. Single use per tape.
  void backward(const Tensor& loss) {
    if (consumed_) throw Error("backward() called twice on the same tape");
    if (!loss.attached() || loss.tape() != this) {
      throw Error("backward() loss is not attached to this tape");
    }
    if (loss.size() != 1) {
      throw ShapeError("backward() needs a scalar loss, got " + shape_str(loss.shape()));
    }
    grads_.assign(nodes_.size(), {});
    grads_[loss.node()] = {1.0};
    sweep(grads_, loss.node(), 0);
    consumed_ = true;
  }

  // Gradient of the last backward() with respect to `t` (zeros if untouched).
  std::vector<double> grad_vec(const Tensor& t) const {
    if (!consumed_) throw Error("grad requested before backward()");
    if (!t.attached() || t.tape() != this) throw Error("grad of a tensor not on this tape");
    const auto& g = grads_[t.node()];
    if (g.empty()) return std::vector<double>(t.size(), 0.0);
    return g;
  }

  Tensor grad_tensor(const Tensor& t) const { return Tensor(t.shape(), grad_vec(t)); }

  // Vector-Jacobian product of the sub-graph between two recorded nodes:
  // returns upstream^T * d(node `output`)/d(node `input`). Runs a scratch
  // sweep over the recorded closures without touching backward() state, so
  // it may be called any number of times, even inside other backward rules.
  std::vector<double> vjp(std::size_t output, std::size_t input,
                          std::span<const double> upstream) const {
    if (output >= nodes_.size() || input >= nodes_.size()) throw Error("vjp node id out of range");
    if (upstream.size() != nodes_[output].size) {
      throw ShapeError("vjp upstream length " + std::to_string(upstream.size()) +
                       " does not match node size " + std::to_string(nodes_[output].size));
    }
    if (input == output) return {upstream.begin(), upstream.end()};
    if (input > output) return std::vector<double>(nodes_[input].size, 0.0);
    GradSlots slots(output + 1);
    slots[output].assign(upstream.begin(), upstream.end());
    sweep(slots, output, input + 1);
    if (slots[input].empty()) return std::vector<double>(nodes_[input].size, 0.0);
    return std::move(slots[input]);
  }

 private:
  std::size_t add_node(std::vector<std::size_t> parents, std::size_t size, BackwardFn backward) {
    nodes_.push_back(Node{std::move(parents), size, std::move(backward)});
    return nodes_.size() - 1;
  }

  // Descending sweep over [down_to, from]; skips nodes nothing flowed into.
  void sweep(GradSlots& slots, std::size_t from, std::size_t down_to) const {
    for (std::size_t i = from + 1; i-- > down_to;) {
      if (slots[i].empty()) continue;
      const Node& n = nodes_[i];
      if (n.backward) n.backward(slots[i], slots);
    }
  }

  std::vector<Node> nodes_;
  GradSlots grads_;
  bool consumed_ = false;
};

}  // namespace dab
