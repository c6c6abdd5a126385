#pragma once

// Evaluation metrics: all-or-none permutation accuracy, 1-d earth mover's
// distance between equal-size samples, and a linear probe for latent codes.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "dab/nn.hpp"
#include "dab/ops.hpp"
#include "dab/optim.hpp"
#include "dab/tensor.hpp"

namespace dab {

// Fraction of samples whose t position-wise argmaxes ALL match the one-hot
// target; a single wrong slot scores the whole sample 0.
inline double all_or_none_accuracy(const Tensor& logits, const Tensor& targets, std::size_t t) {
  if (logits.shape() != targets.shape()) {
    throw ShapeError("all_or_none_accuracy: shapes differ: " + shape_str(logits.shape()) +
                     " vs " + shape_str(targets.shape()));
  }
  detail::require_rank2(logits, "all_or_none_accuracy");
  const std::size_t n = logits.shape()[0];
  const std::size_t w = logits.shape()[1];
  if (t == 0 || w % t != 0) {
    throw ShapeError("all_or_none_accuracy: row width " + std::to_string(w) +
                     " is not a multiple of t=" + std::to_string(t));
  }
  const std::size_t c = w / t;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    bool all = true;
    for (std::size_t j = 0; j < t && all; ++j) {
      const double* lrow = logits.data() + i * w + j * c;
      const double* trow = targets.data() + i * w + j * c;
      all = argmax_span({lrow, c}) == argmax_span({trow, c});
    }
    hits += all ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

// Earth mover's distance between two equal-size 1-d samples: mean absolute
// difference of the sorted values.
inline double emd_1d(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ShapeError("emd_1d: sample sizes differ: " + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()));
  }
  if (a.empty()) throw ShapeError("emd_1d: empty samples");
  std::vector<double> sa(a.begin(), a.end());
  std::vector<double> sb(b.begin(), b.end());
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  double s = 0.0;
  for (std::size_t i = 0; i < sa.size(); ++i) s += std::abs(sa[i] - sb[i]);
  return s / static_cast<double>(sa.size());
}

inline double emd_1d(const Tensor& a, const Tensor& b) { return emd_1d(a.values(), b.values()); }

// Conditioning probe for a code and its hard image: mean over feature
// positions of the 1-d EMD between column j of a and column j of b, taken
// across samples. Pooling whole tensors would read 0 for any permutation op
// (sorting preserves the multiset); per-position marginals expose whether
// the code itself drifts toward the hard function's output.
inline double per_position_emd(std::span<const double> a, std::span<const double> b,
                               std::size_t dim) {
  if (a.size() != b.size()) {
    throw ShapeError("per_position_emd: sample sizes differ: " + std::to_string(a.size()) +
                     " vs " + std::to_string(b.size()));
  }
  if (dim == 0 || a.size() % dim != 0) {
    throw ShapeError("per_position_emd: size " + std::to_string(a.size()) +
                     " is not a multiple of dim " + std::to_string(dim));
  }
  const std::size_t n = a.size() / dim;
  std::vector<double> ca(n), cb(n);
  double total = 0.0;
  for (std::size_t j = 0; j < dim; ++j) {
    for (std::size_t i = 0; i < n; ++i) {
      ca[i] = a[i * dim + j];
      cb[i] = b[i * dim + j];
    }
    total += emd_1d(ca, cb);
  }
  return total / static_cast<double>(dim);
}

struct ProbeConfig {
  std::size_t epochs = 300;
  double lr = 0.05;
};

// Multinomial logistic regression on frozen features: full-batch Adam from a
// zero init (deterministic), accuracy measured on the held-out features.
inline double linear_probe_accuracy(const Tensor& train_z, const std::vector<int>& train_labels,
                                    const Tensor& test_z, const std::vector<int>& test_labels,
                                    int num_classes, const ProbeConfig& cfg = {}) {
  detail::require_rank2(train_z, "linear_probe_accuracy");
  detail::require_rank2(test_z, "linear_probe_accuracy");
  const std::size_t n = train_z.shape()[0];
  const std::size_t d = train_z.shape()[1];
  if (train_labels.size() != n || test_labels.size() != test_z.shape()[0]) {
    throw ShapeError("linear_probe_accuracy: label counts do not match feature rows");
  }
  const auto c = static_cast<std::size_t>(num_classes);
  std::vector<double> onehot(n * c, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    onehot[i * c + static_cast<std::size_t>(train_labels[i])] = 1.0;
  }
  const Tensor targets(Shape{n, c}, std::move(onehot));

  ParamSet params;
  params.declare("probe/w", Tensor::zeros({d, c}));
  params.declare("probe/b", Tensor::zeros({c}));
  Adam adam(OptimConfig{cfg.lr, 0.9, 0.999, 1e-8, std::nullopt});
  const Tensor zc = train_z.detached();
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Tape tape;
    Watched watched = watch_params(tape, params);
    Tensor logits = add(matmul(zc, watched.at("probe/w")), watched.at("probe/b"));
    Tensor loss = softmax_cross_entropy(logits, targets);
    tape.backward(loss);
    pull_grads(tape, watched, params);
    adam.step(params);
  }

  Tensor test_logits =
      add(matmul(test_z.detached(), params.value("probe/w").detached()),
          params.value("probe/b").detached());
  const std::vector<std::size_t> pred = argmax_rows(test_logits);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (static_cast<int>(pred[i]) == test_labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

}  // namespace dab
