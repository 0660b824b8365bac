// Copyright 2026 The DSVD Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "dsvd/common.hpp"
#include "dsvd/labeler/dataset.hpp"
#include "dsvd/optim.hpp"
#include "dsvd/prober/auroc.hpp"
#include "dsvd/prober/ensemble.hpp"
#include "dsvd/prober/focal.hpp"

namespace dsvd {

/// Token-level probe examples in column form: `layers[l]` is n x d, row i
/// holding layer l of example i. Labels are 1 (hallucination) or 0.
struct ProbeSet {
  std::vector<RowMatrixF> layers;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  int layer_count() const { return static_cast<int>(layers.size()); }
  int dim() const { return layers.empty() ? 0 : static_cast<int>(layers.front().cols()); }

  std::size_t positives() const { return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1)); }

  /// Allocates `n` rows per layer and clears the labels.
  void reserve(int layer_count, int dim, std::size_t n) {
    layers.assign(static_cast<std::size_t>(layer_count), RowMatrixF(static_cast<Eigen::Index>(n), dim));
    labels.clear();
    labels.reserve(n);
  }
  /// Fills row `row`; rows must be written in order.
  void set(std::size_t row, const LayerStates& s, int label) {
    for (int l = 0; l < s.layer_count(); ++l)
      layers[static_cast<std::size_t>(l)].row(static_cast<Eigen::Index>(row)) = s.layer(l);
    labels.push_back(label);
  }
};

/// Response tokens labeled 0 or 1; tokens labeled -1 are left out.
inline ProbeSet token_probe_set(const LabeledDataset& ds) {
  std::size_t n = 0;
  for (const auto& s : ds.sequences)
    n += static_cast<std::size_t>(std::count_if(s.labels.begin(), s.labels.end(), [](auto y) { return y >= 0; }));
  ProbeSet set;
  set.reserve(ds.layer_count, ds.dim, n);
  std::size_t row = 0;
  for (const auto& s : ds.sequences)
    for (std::size_t i = 0; i < s.labels.size(); ++i)
      if (s.labels[i] >= 0) set.set(row++, s.token_states[i], s.labels[i]);
  return set;
}

/// Question-only states, labeled by whether the response was hallucinated.
inline ProbeSet question_probe_set(const LabeledDataset& ds) {
  ProbeSet set;
  set.reserve(ds.layer_count, ds.dim, ds.sequences.size());
  for (std::size_t i = 0; i < ds.sequences.size(); ++i)
    set.set(i, ds.sequences[i].question_states, ds.sequences[i].hallucinated() ? 1 : 0);
  return set;
}

struct ProbeTrainConfig {
  double learning_rate = 1e-4;
  int epochs = 10;
  double gamma = 2.0;
  int batch_size = 32;
  std::uint64_t seed = 1;
  double weight_decay = 0.01;
  int hidden = 0;  // 0 selects the model dimension
  ProbeActivation activation = ProbeActivation::kRelu;
  int layer = -1;  // -1 trains the all-layer ensemble, otherwise one head
  std::function<void(int epoch, double loss)> on_epoch;
};

struct ProbeTrainResult {
  ProbingEnsemble ensemble;
  std::vector<double> epoch_losses;
};

namespace probe_math {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Mean-over-heads logits (n x 2) for a batch. Keeps per-head
/// pre-activations when `pre` is given.
template <class T>
Mat<T> batch_logits(const ProbingEnsembleT<T>& e, const std::vector<Mat<T>>& x, std::vector<Mat<T>>* pre = nullptr) {
  const Eigen::Index n = x.front().rows();
  Mat<T> s = Mat<T>::Zero(n, 2);
  if (pre) pre->assign(e.heads.size(), Mat<T>());
  const int first = e.layer >= 0 ? e.layer : 0;
  const int last = e.layer >= 0 ? e.layer + 1 : e.head_count();
  for (int l = first; l < last; ++l) {
    const auto& h = e.heads[static_cast<std::size_t>(l)];
    Mat<T> a = x[static_cast<std::size_t>(l)] * h.w1;
    a.rowwise() += h.b1;
    Mat<T> act = e.activation == ProbeActivation::kRelu ? Mat<T>(a.cwiseMax(T(0))) : a;
    Mat<T> sl = act * h.w2;
    sl.rowwise() += h.b2;
    s += sl;
    if (pre) (*pre)[static_cast<std::size_t>(l)] = std::move(a);
  }
  return s / static_cast<T>(last - first);
}

/// Mean focal loss of a batch; fills `grads` (same shape as `e`, zeroed by
/// the caller) when non-null.
template <class T>
double focal_batch(const ProbingEnsembleT<T>& e, const std::vector<Mat<T>>& x, const std::vector<int>& labels,
                   double gamma, ProbingEnsembleT<T>* grads) {
  std::vector<Mat<T>> pre;
  const Mat<T> s = batch_logits(e, x, grads ? &pre : nullptr);
  const Eigen::Index n = s.rows();
  Mat<T> ds = Mat<T>::Zero(n, 2);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto z = two_way_softmax(static_cast<double>(s(i, 0)), static_cast<double>(s(i, 1)));
    const int t = labels[static_cast<std::size_t>(i)] == 1 ? 0 : 1;
    const double zt = t == 0 ? z.hallu : z.correct;
    loss += focal_loss(zt, gamma);
    // dz_t/ds_t = z_t (1 - z_t), dz_t/ds_other = -z_t (1 - z_t).
    const double g = focal_loss_grad(zt, gamma) * zt * (1.0 - zt) / static_cast<double>(n);
    ds(i, t) = static_cast<T>(g);
    ds(i, 1 - t) = static_cast<T>(-g);
  }
  loss /= static_cast<double>(n);
  if (!grads) return loss;

  const int first = e.layer >= 0 ? e.layer : 0;
  const int last = e.layer >= 0 ? e.layer + 1 : e.head_count();
  const Mat<T> dsl = ds / static_cast<T>(last - first);
  for (int l = first; l < last; ++l) {
    const auto li = static_cast<std::size_t>(l);
    const auto& h = e.heads[li];
    auto& gh = grads->heads[li];
    const Mat<T>& a = pre[li];
    Mat<T> act = e.activation == ProbeActivation::kRelu ? Mat<T>(a.cwiseMax(T(0))) : a;
    gh.w2.noalias() += act.transpose() * dsl;
    gh.b2 += dsl.colwise().sum();
    Mat<T> da = dsl * h.w2.transpose();
    if (e.activation == ProbeActivation::kRelu) da = da.cwiseProduct(Mat<T>((a.array() > T(0)).template cast<T>()));
    gh.w1.noalias() += x[li].transpose() * da;
    gh.b1 += da.colwise().sum();
  }
  return loss;
}

template <class T>
std::vector<Mat<T>> gather(const ProbeSet& set, std::span<const std::size_t> rows) {
  std::vector<Mat<T>> out;
  for (const auto& layer : set.layers) {
    Mat<T> m(static_cast<Eigen::Index>(rows.size()), layer.cols());
    for (std::size_t i = 0; i < rows.size(); ++i)
      m.row(static_cast<Eigen::Index>(i)) = layer.row(static_cast<Eigen::Index>(rows[i])).template cast<T>();
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace probe_math

/// Trains all heads jointly with focal loss and AdamW. Single-threaded and
/// deterministic for a fixed seed.
inline ProbeTrainResult train_prober(const ProbeSet& set, const ProbeTrainConfig& config) {
  require(config.learning_rate > 0 && config.epochs >= 1 && config.batch_size >= 1, ErrorCode::kInvalidArgument,
          "bad probe training config");
  require(config.gamma >= 0, ErrorCode::kInvalidArgument, "focal gamma must be non-negative");
  require(set.size() > 0 && set.layer_count() > 0, ErrorCode::kEmptyInput, "empty probe training set");
  const std::size_t pos = set.positives();
  require(pos > 0 && pos < set.size(), ErrorCode::kSingleClass,
          "probe training needs both classes (" + std::to_string(pos) + " of " + std::to_string(set.size()) +
              " positive)");
  require(config.layer < set.layer_count(), ErrorCode::kInvalidArgument, "probe layer out of range");

  const int hidden = config.hidden > 0 ? config.hidden : set.dim();
  ProbeTrainResult result;
  result.ensemble = ProbingEnsemble::random(set.layer_count(), set.dim(), hidden, config.activation, config.seed);
  result.ensemble.layer = config.layer;
  auto grads = ProbingEnsemble::zeros(set.layer_count(), set.dim(), hidden, config.activation);
  grads.layer = config.layer;

  std::vector<AdamW<float>::Param> params;
  std::vector<std::span<const float>> grad_views;
  for (std::size_t l = 0; l < result.ensemble.heads.size(); ++l) {
    if (config.layer >= 0 && static_cast<int>(l) != config.layer) continue;
    auto& h = result.ensemble.heads[l];
    auto& g = grads.heads[l];
    params.push_back({{h.w1.data(), static_cast<std::size_t>(h.w1.size())}, true});
    params.push_back({{h.b1.data(), static_cast<std::size_t>(h.b1.size())}, false});
    params.push_back({{h.w2.data(), static_cast<std::size_t>(h.w2.size())}, true});
    params.push_back({{h.b2.data(), static_cast<std::size_t>(h.b2.size())}, false});
    grad_views.emplace_back(g.w1.data(), static_cast<std::size_t>(g.w1.size()));
    grad_views.emplace_back(g.b1.data(), static_cast<std::size_t>(g.b1.size()));
    grad_views.emplace_back(g.w2.data(), static_cast<std::size_t>(g.w2.size()));
    grad_views.emplace_back(g.b2.data(), static_cast<std::size_t>(g.b2.size()));
  }
  AdamW<float> opt(std::move(params), {config.learning_rate, 0.9, 0.999, 1e-8, config.weight_decay});

  std::mt19937_64 rng(config.seed + 0x51ed270b27ULL);
  std::vector<std::size_t> order(set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto bs = static_cast<std::size_t>(config.batch_size);
  std::vector<int> labels;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += bs) {
      const std::size_t end = std::min(order.size(), begin + bs);
      std::span<const std::size_t> rows(order.data() + begin, end - begin);
      const auto x = probe_math::gather<float>(set, rows);
      labels.clear();
      for (std::size_t r : rows) labels.push_back(set.labels[r]);
      for (auto& h : grads.heads) h.for_each([](auto& t) { t.setZero(); });
      const double loss = probe_math::focal_batch(result.ensemble, x, labels, config.gamma, &grads);
      require(std::isfinite(loss), ErrorCode::kDivergence, "probe loss became non-finite at epoch " + std::to_string(epoch));
      opt.step(grad_views, config.learning_rate);
      total += loss * static_cast<double>(rows.size());
    }
    const double mean = total / static_cast<double>(set.size());
    result.epoch_losses.push_back(mean);
    if (config.on_epoch) config.on_epoch(epoch, mean);
  }
  return result;
}

inline ProbeTrainResult train_prober(const LabeledDataset& ds, const ProbeTrainConfig& config) {
  return train_prober(token_probe_set(ds), config);
}

/// z_hallu for every example of `set`.
inline std::vector<double> probe_scores(const ProbingEnsemble& e, const ProbeSet& set) {
  require(e.head_count() == set.layer_count() && e.input_dim() == set.dim(), ErrorCode::kDimensionMismatch,
          "ensemble does not match probe set shape");
  std::vector<double> out;
  out.reserve(set.size());
  constexpr std::size_t kChunk = 1024;
  std::vector<std::size_t> rows;
  for (std::size_t begin = 0; begin < set.size(); begin += kChunk) {
    rows.resize(std::min(kChunk, set.size() - begin));
    std::iota(rows.begin(), rows.end(), begin);
    const auto s = probe_math::batch_logits(e, probe_math::gather<float>(set, rows));
    for (Eigen::Index i = 0; i < s.rows(); ++i)
      out.push_back(two_way_softmax(static_cast<double>(s(i, 0)), static_cast<double>(s(i, 1))).hallu);
  }
  return out;
}

inline double evaluate_auroc(const ProbingEnsemble& e, const ProbeSet& set) {
  return auroc(probe_scores(e, set), set.labels);
}

inline double evaluate_auroc(const ProbingEnsemble& e, const LabeledDataset& ds) {
  return evaluate_auroc(e, token_probe_set(ds));
}

}  // namespace dsvd
