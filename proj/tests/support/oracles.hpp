// Copyright 2026 The DSVD Authors.
// SPDX-License-Identifier: Apache-2.0

// Independent reference computations shared by the unit and acceptance
// tests. None of them call the code they check.

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <random>
#include <utility>
#include <vector>

#include "dsvd/lm/generate.hpp"
#include "dsvd/prober/ensemble.hpp"
#include "dsvd/prober/focal.hpp"
#include "dsvd/prober/train.hpp"

namespace dsvd::testing {

/// LCS length by memoized top-down recursion; shares nothing with the
/// two-row DP.
inline std::size_t lcs_oracle(const std::vector<int>& a, const std::vector<int>& b) {
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> memo;
  std::function<std::size_t(std::size_t, std::size_t)> go = [&](std::size_t i, std::size_t j) -> std::size_t {
    if (i == a.size() || j == b.size()) return 0;
    auto it = memo.find({i, j});
    if (it != memo.end()) return it->second;
    const std::size_t v = a[i] == b[j] ? 1 + go(i + 1, j + 1) : std::max(go(i + 1, j), go(i, j + 1));
    memo[{i, j}] = v;
    return v;
  };
  return go(0, 0);
}

/// Pairwise-comparison estimator: P(score_pos > score_neg) + 0.5 P(tie).
inline double auroc_pairwise(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] == 1 && y[j] == 0) {
        pairs += 1.0;
        wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      }
  return wins / pairs;
}

inline Eigen::VectorXd random_direction(std::mt19937_64& rng, int dim) {
  std::normal_distribution<double> g(0, 1);
  Eigen::VectorXd dir(dim);
  for (int i = 0; i < dim; ++i) dir[i] = g(rng);
  return dir.normalized();
}

/// Two Gaussian classes whose means sit `separation` sigma apart along
/// `dir`, replicated across layers with independent noise. Labels alternate.
inline ProbeSet gaussian_set(std::mt19937_64& rng, const Eigen::VectorXd& dir, int layers, std::size_t n,
                             double separation) {
  std::normal_distribution<double> g(0, 1);
  const auto dim = static_cast<int>(dir.size());
  ProbeSet set;
  set.reserve(layers, dim, n);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = static_cast<int>(i % 2);
    LayerStates s;
    s.rows.resize(layers, dim);
    for (int l = 0; l < layers; ++l)
      for (int k = 0; k < dim; ++k)
        s.rows(l, k) = static_cast<float>(g(rng) + (y ? 0.5 : -0.5) * separation * dir[k]);
    set.set(i, s, y);
  }
  return set;
}

/// Argmax over all |V|^m continuations of `prompt` of
///   sum_i log p(x_i) - alpha * log clamp(z_i),
/// every term from an uncached pass over prompt + continuation. Ties keep
/// the first continuation in lexicographic order.
template <class Model>
std::vector<TokenId> brute_force_continuation(const Model& model, const ProbingEnsemble& ens,
                                              const std::vector<TokenId>& prompt, int vocab, int m, double alpha) {
  double best = -1e300;
  std::vector<TokenId> best_seq;
  std::vector<TokenId> seq(static_cast<std::size_t>(m), 0);
  for (long code = 0; code < static_cast<long>(std::pow(vocab, m)); ++code) {
    long c = code;
    for (int i = m - 1; i >= 0; --i) {
      seq[static_cast<std::size_t>(i)] = static_cast<TokenId>(c % vocab);
      c /= vocab;
    }
    auto all = prompt;
    all.insert(all.end(), seq.begin(), seq.end());
    const auto pass = model.forward_full(all);
    double f = 0.0;
    for (int i = 0; i < m; ++i) {
      const auto pos = static_cast<int>(prompt.size()) + i;
      f += log_softmax_at(pass.at(pos - 1).logits, seq[static_cast<std::size_t>(i)]);
      f -= alpha * std::log(clamp_prob(probe(ens, pass.at(pos).states).hallu));
    }
    if (f > best) {
      best = f;
      best_seq = seq;
    }
  }
  return best_seq;
}

}  // namespace dsvd::testing
