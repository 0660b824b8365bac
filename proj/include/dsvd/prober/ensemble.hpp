// Copyright 2026 The DSVD Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "dsvd/binary_io.hpp"
#include "dsvd/common.hpp"
#include "dsvd/lm/types.hpp"

namespace dsvd {

enum class ProbeActivation : std::uint8_t { kRelu, kIdentity };

/// Index 0 is the hallucination class.
struct ProbeOutput {
  double hallu = 0.5;
  double correct = 0.5;
};

/// softmax over two logits, computed stably.
inline ProbeOutput two_way_softmax(double logit_hallu, double logit_correct) {
  const double d = logit_correct - logit_hallu;
  ProbeOutput out;
  if (d >= 0) {
    const double e = std::exp(-d);
    out.hallu = e / (1.0 + e);
    out.correct = 1.0 / (1.0 + e);
  } else {
    const double e = std::exp(d);
    out.hallu = 1.0 / (1.0 + e);
    out.correct = e / (1.0 + e);
  }
  return out;
}

/// Two affine layers: d -> hidden -> 2, row-vector convention.
template <class T>
struct ProbingHeadT {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Row = Eigen::Matrix<T, 1, Eigen::Dynamic>;

  Mat w1;  // d x hidden
  Row b1;  // hidden
  Mat w2;  // hidden x 2
  Row b2;  // 2

  int input_dim() const { return static_cast<int>(w1.rows()); }
  int hidden_dim() const { return static_cast<int>(w1.cols()); }

  static ProbingHeadT zeros(int d, int hidden) {
    return {Mat::Zero(d, hidden), Row::Zero(hidden), Mat::Zero(hidden, 2), Row::Zero(2)};
  }

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
  static ProbingHeadT random(int d, int hidden, std::mt19937_64& rng) {
    auto h = zeros(d, hidden);
    std::uniform_real_distribution<double> u1(-1.0 / std::sqrt(d), 1.0 / std::sqrt(d));
    std::uniform_real_distribution<double> u2(-1.0 / std::sqrt(hidden), 1.0 / std::sqrt(hidden));
    for (Eigen::Index i = 0; i < h.w1.size(); ++i) h.w1.data()[i] = static_cast<T>(u1(rng));
    for (Eigen::Index i = 0; i < h.b1.size(); ++i) h.b1[i] = static_cast<T>(u1(rng));
    for (Eigen::Index i = 0; i < h.w2.size(); ++i) h.w2.data()[i] = static_cast<T>(u2(rng));
    for (Eigen::Index i = 0; i < h.b2.size(); ++i) h.b2[i] = static_cast<T>(u2(rng));
    return h;
  }

  template <class Vec>
  Eigen::Matrix<T, 1, 2> logits(const Vec& x, ProbeActivation act) const {
    Row h = x.template cast<T>() * w1 + b1;
    if (act == ProbeActivation::kRelu) h = h.cwiseMax(T(0));
    return h * w2 + b2;
  }

  template <class F>
  void for_each(F&& f) {
    f(w1);
    f(b1);
    f(w2);
    f(b2);
  }
  template <class F>
  void for_each(F&& f) const {
    f(w1);
    f(b1);
    f(w2);
    f(b2);
  }
};

/// One head per LM layer. `layer` < 0 selects the all-layer mean of logits;
/// otherwise only that layer's head is used.
template <class T>
struct ProbingEnsembleT {
  std::vector<ProbingHeadT<T>> heads;
  ProbeActivation activation = ProbeActivation::kRelu;
  int layer = -1;

  int head_count() const { return static_cast<int>(heads.size()); }
  int input_dim() const { return heads.empty() ? 0 : heads.front().input_dim(); }
  int hidden_dim() const { return heads.empty() ? 0 : heads.front().hidden_dim(); }

  static ProbingEnsembleT zeros(int layers, int d, int hidden, ProbeActivation act = ProbeActivation::kRelu) {
    require(layers >= 1 && d >= 1 && hidden >= 1, ErrorCode::kInvalidArgument, "bad probe shape");
    ProbingEnsembleT e;
    e.activation = act;
    for (int l = 0; l < layers; ++l) e.heads.push_back(ProbingHeadT<T>::zeros(d, hidden));
    return e;
  }

  static ProbingEnsembleT random(int layers, int d, int hidden, ProbeActivation act, std::uint64_t seed) {
    auto e = zeros(layers, d, hidden, act);
    std::mt19937_64 rng(seed);
    for (auto& h : e.heads) h = ProbingHeadT<T>::random(d, hidden, rng);
    return e;
  }

  template <class U>
  ProbingEnsembleT<U> cast() const {
    ProbingEnsembleT<U> out;
    out.activation = activation;
    out.layer = layer;
    for (const auto& h : heads)
      out.heads.push_back({h.w1.template cast<U>(), h.b1.template cast<U>(), h.w2.template cast<U>(),
                           h.b2.template cast<U>()});
    return out;
  }
};

using ProbingHead = ProbingHeadT<float>;
using ProbingEnsemble = ProbingEnsembleT<float>;

/// softmax of one head's logits on layer `layer_index` of `states`.
template <class T>
ProbeOutput probe_single_layer(const ProbingHeadT<T>& head, const LayerStates& states, int layer_index,
                               ProbeActivation act = ProbeActivation::kRelu) {
  require(layer_index >= 0 && layer_index < states.layer_count(), ErrorCode::kInvalidArgument,
          "layer index " + std::to_string(layer_index) + " out of range");
  require(head.input_dim() == states.dim(), ErrorCode::kDimensionMismatch, "probe head input dim");
  const auto s = head.logits(states.layer(layer_index), act);
  return two_way_softmax(static_cast<double>(s[0]), static_cast<double>(s[1]));
}

/// softmax((1/(L+1)) * sum_l head_l(h^l)), or the single selected head.
template <class T>
ProbeOutput probe(const ProbingEnsembleT<T>& ens, const LayerStates& states) {
  require(ens.head_count() == states.layer_count(), ErrorCode::kDimensionMismatch,
          "ensemble has " + std::to_string(ens.head_count()) + " heads, states have " +
              std::to_string(states.layer_count()) + " layers");
  require(ens.input_dim() == states.dim(), ErrorCode::kDimensionMismatch, "probe input dim");
  if (ens.layer >= 0)
    return probe_single_layer(ens.heads[static_cast<std::size_t>(ens.layer)], states, ens.layer, ens.activation);
  double s0 = 0.0, s1 = 0.0;
  for (int l = 0; l < ens.head_count(); ++l) {
    const auto s = ens.heads[static_cast<std::size_t>(l)].logits(states.layer(l), ens.activation);
    s0 += static_cast<double>(s[0]);
    s1 += static_cast<double>(s[1]);
  }
  const double n = ens.head_count();
  return two_way_softmax(s0 / n, s1 / n);
}

// File layout: "DSVDPH1" magic; u32 heads, dim, hidden, activation;
// i32 layer (-1 = all-layer mean); per head w1, b1, w2, b2 as float32.
inline void save_ensemble(const ProbingEnsemble& e, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorCode::kIo, "cannot write " + path.string());
  binary::write_magic(out, "DSVDPH1");
  binary::write_u32(out, static_cast<std::uint32_t>(e.head_count()));
  binary::write_u32(out, static_cast<std::uint32_t>(e.input_dim()));
  binary::write_u32(out, static_cast<std::uint32_t>(e.hidden_dim()));
  binary::write_u32(out, static_cast<std::uint32_t>(e.activation));
  binary::write_i32(out, e.layer);
  for (const auto& h : e.heads)
    h.for_each([&](const auto& t) {
      binary::write_floats(out, std::span<const float>(t.data(), static_cast<std::size_t>(t.size())));
    });
  require(out.good(), ErrorCode::kIo, "write failed for " + path.string());
}

inline ProbingEnsemble load_ensemble(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCode::kIo, "cannot open " + path.string());
  binary::expect_magic(in, "DSVDPH1");
  const auto heads = static_cast<int>(binary::read_u32(in));
  const auto dim = static_cast<int>(binary::read_u32(in));
  const auto hidden = static_cast<int>(binary::read_u32(in));
  const auto act = binary::read_u32(in);
  const auto layer = binary::read_i32(in);
  require(heads >= 1 && heads <= 4096 && dim >= 1 && dim <= (1 << 16) && hidden >= 1 && hidden <= (1 << 16) &&
              act <= 1 && layer >= -1 && layer < heads,
          ErrorCode::kFormat, "implausible probe header in " + path.string());
  auto e = ProbingEnsemble::zeros(heads, dim, hidden, static_cast<ProbeActivation>(act));
  e.layer = layer;
  for (auto& h : e.heads)
    h.for_each([&](auto& t) {
      binary::read_floats(in, std::span<float>(t.data(), static_cast<std::size_t>(t.size())));
    });
  in.peek();
  require(in.eof(), ErrorCode::kFormat, "trailing bytes in " + path.string());
  return e;
}

}  // namespace dsvd
