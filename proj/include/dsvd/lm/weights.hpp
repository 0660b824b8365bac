// Copyright 2026 The DSVD Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dsvd/binary_io.hpp"
#include "dsvd/common.hpp"

namespace dsvd {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

struct TransformerConfig {
  int vocab_size = 0;
  int n_layers = 4;
  int d_model = 128;
  int n_heads = 4;
  int d_ff = 0;  // 0 means 4 * d_model
  int max_context = 256;

  int ff_dim() const { return d_ff > 0 ? d_ff : 4 * d_model; }
  int head_dim() const { return d_model / n_heads; }

  void validate() const {
    require(vocab_size > 3 && n_layers >= 1 && d_model >= 1 && n_heads >= 1 && max_context >= 2,
            ErrorCode::kInvalidArgument, "transformer dimensions must be positive");
    require(d_model % n_heads == 0, ErrorCode::kInvalidArgument, "d_model must be divisible by n_heads");
  }

  bool operator==(const TransformerConfig&) const = default;
};

/// Parameters of the reference decoder-only transformer (pre-norm RMSNorm
/// blocks, GELU MLP, learned positions, untied output head). No biases.
/// Activations are row vectors, so every projection is `x * W` with W stored
/// as (in x out).
template <class T>
struct TransformerWeights {
  struct Layer {
    RowVec<T> attn_gain;
    Mat<T> wq, wk, wv, wo;
    RowVec<T> mlp_gain;
    Mat<T> w_up, w_down;
  };

  TransformerConfig config;
  Mat<T> tok_emb;  // V x d
  Mat<T> pos_emb;  // ctx x d
  std::vector<Layer> layers;
  RowVec<T> final_gain;
  Mat<T> lm_head;  // d x V

  /// Visits every tensor in the fixed serialization order.
  template <class F>
  void for_each(F&& f) {
    f(tok_emb, false);
    f(pos_emb, false);
    for (auto& layer : layers) {
      f(layer.attn_gain, true);
      f(layer.wq, false);
      f(layer.wk, false);
      f(layer.wv, false);
      f(layer.wo, false);
      f(layer.mlp_gain, true);
      f(layer.w_up, false);
      f(layer.w_down, false);
    }
    f(final_gain, true);
    f(lm_head, false);
  }

  template <class F>
  void for_each(F&& f) const {
    const_cast<TransformerWeights*>(this)->for_each(
        [&](auto& tensor, bool is_gain) { f(std::as_const(tensor), is_gain); });
  }

  /// All-zero tensors of the right shapes (gains included).
  static TransformerWeights zeros(const TransformerConfig& cfg) {
    cfg.validate();
    const int d = cfg.d_model, ff = cfg.ff_dim();
    TransformerWeights w;
    w.config = cfg;
    w.tok_emb = Mat<T>::Zero(cfg.vocab_size, d);
    w.pos_emb = Mat<T>::Zero(cfg.max_context, d);
    w.layers.resize(static_cast<std::size_t>(cfg.n_layers));
    for (auto& layer : w.layers) {
      layer.attn_gain = RowVec<T>::Zero(d);
      layer.wq = Mat<T>::Zero(d, d);
      layer.wk = Mat<T>::Zero(d, d);
      layer.wv = Mat<T>::Zero(d, d);
      layer.wo = Mat<T>::Zero(d, d);
      layer.mlp_gain = RowVec<T>::Zero(d);
      layer.w_up = Mat<T>::Zero(d, ff);
      layer.w_down = Mat<T>::Zero(ff, d);
    }
    w.final_gain = RowVec<T>::Zero(d);
    w.lm_head = Mat<T>::Zero(d, cfg.vocab_size);
    return w;
  }

  /// Gaussian init (std 0.02, residual projections scaled by 1/sqrt(2L)), unit gains.
  static TransformerWeights random(const TransformerConfig& cfg, std::uint64_t seed) {
    auto w = zeros(cfg);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double base = 0.02;
    const double resid = base / std::sqrt(2.0 * cfg.n_layers);
    auto fill = [&](Mat<T>& m, double stddev) {
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(stddev * normal(rng));
    };
    fill(w.tok_emb, base);
    fill(w.pos_emb, base);
    for (auto& layer : w.layers) {
      layer.attn_gain.setOnes();
      fill(layer.wq, base);
      fill(layer.wk, base);
      fill(layer.wv, base);
      fill(layer.wo, resid);
      layer.mlp_gain.setOnes();
      fill(layer.w_up, base);
      fill(layer.w_down, resid);
    }
    w.final_gain.setOnes();
    fill(w.lm_head, base);
    return w;
  }

  template <class U>
  TransformerWeights<U> cast() const {
    auto out = TransformerWeights<U>::zeros(config);
    std::vector<const T*> ptrs;
    for_each([&](const auto& t, bool) { ptrs.push_back(t.data()); });
    std::size_t i = 0;
    out.for_each([&](auto& t, bool) {
      for (Eigen::Index j = 0; j < t.size(); ++j) t.data()[j] = static_cast<U>(ptrs[i][j]);
      ++i;
    });
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each([&](const auto& t, bool) { n += static_cast<std::size_t>(t.size()); });
    return n;
  }
};

inline constexpr std::string_view kLmMagic = "DSVDLM1";

/// Layout: 8-byte magic "DSVDLM1\0", then u32 n_layers, d_model, vocab_size,
/// n_heads, d_ff, max_context, then float32 row-major tensors in
/// `TransformerWeights::for_each` order.
inline void save_weights(const TransformerWeights<float>& w, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorCode::kIo, "cannot write " + path.string());
  binary::write_magic(out, kLmMagic);
  const auto& c = w.config;
  for (int v : {c.n_layers, c.d_model, c.vocab_size, c.n_heads, c.ff_dim(), c.max_context})
    binary::write_u32(out, static_cast<std::uint32_t>(v));
  w.for_each([&](const auto& t, bool) {
    binary::write_floats(out, std::span<const float>(t.data(), static_cast<std::size_t>(t.size())));
  });
  require(out.good(), ErrorCode::kIo, "write failed for " + path.string());
}

inline TransformerWeights<float> load_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCode::kIo, "cannot read " + path.string());
  binary::expect_magic(in, kLmMagic);
  TransformerConfig c;
  c.n_layers = static_cast<int>(binary::read_u32(in));
  c.d_model = static_cast<int>(binary::read_u32(in));
  c.vocab_size = static_cast<int>(binary::read_u32(in));
  c.n_heads = static_cast<int>(binary::read_u32(in));
  c.d_ff = static_cast<int>(binary::read_u32(in));
  c.max_context = static_cast<int>(binary::read_u32(in));
  auto w = TransformerWeights<float>::zeros(c);
  w.for_each([&](auto& t, bool) {
    binary::read_floats(in, std::span<float>(t.data(), static_cast<std::size_t>(t.size())));
  });
  in.peek();
  require(in.eof(), ErrorCode::kFormat, "trailing bytes in " + path.string());
  return w;
}

}  // namespace dsvd
