// Copyright 2026 The DSVD Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "dsvd/common.hpp"
#include "dsvd/lm/weights.hpp"

// Full-sequence (uncached) forward and backward passes of the reference
// transformer over a packed batch: the rows of every activation matrix are the
// concatenated tokens of all sequences, and attention is restricted to each
// sequence's own causal block.
namespace dsvd::lm_math {

template <class T>
using Col = Eigen::Matrix<T, Eigen::Dynamic, 1>;

inline constexpr double kNormEps = 1e-5;

struct Segment {
  int begin = 0;
  int length = 0;
};

template <class T>
struct LayerCache {
  Mat<T> x_in, a, q, k, v, o, x_mid, b, u, act;
  Col<T> inv_rms1, inv_rms2;
  std::vector<Mat<T>> probs;  // [segment * n_heads + head], each n x n
};

template <class T>
struct ForwardCache {
  std::vector<LayerCache<T>> layers;
  Mat<T> x_final, f;
  Col<T> inv_rms_f;
};

template <class T>
struct ForwardResult {
  Mat<T> logits;               // N x V
  std::vector<Mat<T>> states;  // L+1 entries, each N x d
};

template <class T>
void rms_norm(const Mat<T>& x, const RowVec<T>& gain, Mat<T>& y, Col<T>& inv_rms) {
  const auto d = static_cast<T>(x.cols());
  inv_rms = ((x.array().square().rowwise().sum() / d) + static_cast<T>(kNormEps)).rsqrt().matrix();
  y = (x.array().colwise() * inv_rms.array()).rowwise() * gain.array();
}

template <class T>
void rms_norm_backward(const Mat<T>& x, const Col<T>& inv_rms, const RowVec<T>& gain, const Mat<T>& dy,
                       Mat<T>& dx, RowVec<T>& dgain) {
  const Mat<T> xhat = x.array().colwise() * inv_rms.array();
  dgain += (dy.array() * xhat.array()).colwise().sum().matrix();
  const Mat<T> dxhat = dy.array().rowwise() * gain.array();
  const Col<T> proj = (dxhat.array() * xhat.array()).rowwise().sum() / static_cast<T>(x.cols());
  dx = ((dxhat.array() - xhat.array().colwise() * proj.array()).colwise() * inv_rms.array()).matrix();
}

/// Tanh-approximated gelu over a whole matrix, in place.
template <class M>
void gelu_in_place(M& u) {
  using T = typename M::Scalar;
  constexpr T c = static_cast<T>(0.7978845608028654);
  auto a = u.array();
  a = static_cast<T>(0.5) * a * (static_cast<T>(1) + (c * (a + static_cast<T>(0.044715) * a.cube())).tanh());
}

template <class T>
T gelu_grad(T u) {
  constexpr T c = static_cast<T>(0.7978845608028654);
  const T t = std::tanh(c * (u + static_cast<T>(0.044715) * u * u * u));
  return static_cast<T>(0.5) * (static_cast<T>(1) + t) +
         static_cast<T>(0.5) * u * (static_cast<T>(1) - t * t) * c *
             (static_cast<T>(1) + static_cast<T>(3 * 0.044715) * u * u);
}

inline std::vector<Segment> segments_of(std::span<const std::vector<TokenId>> seqs) {
  std::vector<Segment> out;
  int begin = 0;
  for (const auto& s : seqs) {
    out.push_back({begin, static_cast<int>(s.size())});
    begin += static_cast<int>(s.size());
  }
  return out;
}

/// Runs the packed forward pass. When `cache` is non-null the activations
/// needed by `backward` are kept.
template <class T>
ForwardResult<T> forward(const TransformerWeights<T>& w, std::span<const std::vector<TokenId>> seqs,
                         ForwardCache<T>* cache = nullptr, bool keep_states = false) {
  const auto& cfg = w.config;
  const auto segs = segments_of(seqs);
  const int total = segs.empty() ? 0 : segs.back().begin + segs.back().length;
  const int d = cfg.d_model, nh = cfg.n_heads, dh = cfg.head_dim();
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

  Mat<T> x(total, d);
  for (std::size_t s = 0; s < seqs.size(); ++s) {
    require(static_cast<int>(seqs[s].size()) <= cfg.max_context, ErrorCode::kContextOverflow,
            "sequence longer than max_context");
    for (int i = 0; i < segs[s].length; ++i) {
      const TokenId tok = seqs[s][static_cast<std::size_t>(i)];
      require(tok >= 0 && tok < cfg.vocab_size, ErrorCode::kTokenOutOfRange, "token " + std::to_string(tok));
      x.row(segs[s].begin + i) = w.tok_emb.row(tok) + w.pos_emb.row(i);
    }
  }

  ForwardResult<T> result;
  if (keep_states) result.states.push_back(x);
  if (cache) cache->layers.resize(w.layers.size());

  LayerCache<T> scratch;
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    const auto& layer = w.layers[l];
    LayerCache<T>& c = cache ? cache->layers[l] : scratch;
    c.x_in = x;
    rms_norm(x, layer.attn_gain, c.a, c.inv_rms1);
    c.q.noalias() = c.a * layer.wq;
    c.k.noalias() = c.a * layer.wk;
    c.v.noalias() = c.a * layer.wv;
    c.o.setZero(total, d);
    c.probs.clear();
    for (const auto& seg : segs) {
      const int n = seg.length;
      for (int h = 0; h < nh; ++h) {
        auto q = c.q.block(seg.begin, h * dh, n, dh);
        auto k = c.k.block(seg.begin, h * dh, n, dh);
        auto v = c.v.block(seg.begin, h * dh, n, dh);
        Mat<T> scores = (q * k.transpose()) * scale;
        for (int i = 0; i < n; ++i) {
          for (int j = i + 1; j < n; ++j) scores(i, j) = -std::numeric_limits<T>::infinity();
          const T mx = scores.row(i).head(i + 1).maxCoeff();
          scores.row(i) = (scores.row(i).array() - mx).exp();
          scores.row(i) /= scores.row(i).sum();
        }
        c.o.block(seg.begin, h * dh, n, dh).noalias() = scores * v;
        if (cache) c.probs.push_back(std::move(scores));
      }
    }
    c.x_mid = c.x_in;
    c.x_mid.noalias() += c.o * layer.wo;
    rms_norm(c.x_mid, layer.mlp_gain, c.b, c.inv_rms2);
    c.u.noalias() = c.b * layer.w_up;
    c.act = c.u;
    gelu_in_place(c.act);
    x = c.x_mid;
    x.noalias() += c.act * layer.w_down;
    if (keep_states) result.states.push_back(x);
  }

  Mat<T> f;
  Col<T> inv_rms_f;
  rms_norm(x, w.final_gain, f, inv_rms_f);
  result.logits.noalias() = f * w.lm_head;
  if (cache) {
    cache->x_final = x;
    cache->f = std::move(f);
    cache->inv_rms_f = std::move(inv_rms_f);
  }
  return result;
}

/// Mean next-token cross-entropy over every position that has a successor.
/// Writes d(loss)/d(logits) into `dlogits` when non-null.
template <class T>
double next_token_loss(const Mat<T>& logits, std::span<const std::vector<TokenId>> seqs, Mat<T>* dlogits) {
  const auto segs = segments_of(seqs);
  std::size_t count = 0;
  for (const auto& s : segs) count += static_cast<std::size_t>(std::max(0, s.length - 1));
  require(count > 0, ErrorCode::kEmptyInput, "no next-token targets");
  if (dlogits) dlogits->setZero(logits.rows(), logits.cols());
  double loss = 0.0;
  for (std::size_t s = 0; s < segs.size(); ++s) {
    for (int i = 0; i + 1 < segs[s].length; ++i) {
      const int row = segs[s].begin + i;
      const TokenId target = seqs[s][static_cast<std::size_t>(i + 1)];
      const T mx = logits.row(row).maxCoeff();
      const RowVec<T> e = (logits.row(row).array() - mx).exp().matrix();
      const T z = e.sum();
      loss -= static_cast<double>(logits(row, target) - mx - std::log(z));
      if (dlogits) {
        dlogits->row(row) = e / (z * static_cast<T>(count));
        (*dlogits)(row, target) -= static_cast<T>(1.0 / static_cast<double>(count));
      }
    }
  }
  return loss / static_cast<double>(count);
}

/// Accumulates parameter gradients of sum(dlogits . logits) into `grads`.
template <class T>
void backward(const TransformerWeights<T>& w, std::span<const std::vector<TokenId>> seqs,
              const ForwardCache<T>& cache, const Mat<T>& dlogits, TransformerWeights<T>& grads) {
  const auto& cfg = w.config;
  const auto segs = segments_of(seqs);
  const int nh = cfg.n_heads, dh = cfg.head_dim();
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

  grads.lm_head.noalias() += cache.f.transpose() * dlogits;
  Mat<T> df = dlogits * w.lm_head.transpose();
  Mat<T> dx;
  rms_norm_backward(cache.x_final, cache.inv_rms_f, w.final_gain, df, dx, grads.final_gain);

  for (std::size_t li = w.layers.size(); li-- > 0;) {
    const auto& layer = w.layers[li];
    auto& g = grads.layers[li];
    const auto& c = cache.layers[li];

    // MLP branch: x_out = x_mid + gelu(b W_up) W_down
    g.w_down.noalias() += c.act.transpose() * dx;
    Mat<T> du = dx * layer.w_down.transpose();
    du.array() *= c.u.unaryExpr([](T u) { return gelu_grad(u); }).array();
    g.w_up.noalias() += c.b.transpose() * du;
    const Mat<T> db = du * layer.w_up.transpose();
    Mat<T> dmid;
    rms_norm_backward(c.x_mid, c.inv_rms2, layer.mlp_gain, db, dmid, g.mlp_gain);
    dmid += dx;

    // Attention branch: x_mid = x_in + o W_o
    g.wo.noalias() += c.o.transpose() * dmid;
    const Mat<T> dout = dmid * layer.wo.transpose();
    Mat<T> dq = Mat<T>::Zero(c.q.rows(), c.q.cols());
    Mat<T> dk = Mat<T>::Zero(c.k.rows(), c.k.cols());
    Mat<T> dv = Mat<T>::Zero(c.v.rows(), c.v.cols());
    std::size_t pi = 0;
    for (const auto& seg : segs) {
      const int n = seg.length;
      for (int h = 0; h < nh; ++h) {
        const Mat<T>& p = c.probs[pi++];
        auto q = c.q.block(seg.begin, h * dh, n, dh);
        auto k = c.k.block(seg.begin, h * dh, n, dh);
        auto v = c.v.block(seg.begin, h * dh, n, dh);
        auto d_o = dout.block(seg.begin, h * dh, n, dh);
        const Mat<T> dp = d_o * v.transpose();
        dv.block(seg.begin, h * dh, n, dh).noalias() += p.transpose() * d_o;
        const Col<T> rowdot = (dp.array() * p.array()).rowwise().sum();
        const Mat<T> ds = (p.array() * (dp.array().colwise() - rowdot.array())).matrix() * scale;
        dq.block(seg.begin, h * dh, n, dh).noalias() += ds * k;
        dk.block(seg.begin, h * dh, n, dh).noalias() += ds.transpose() * q;
      }
    }
    g.wq.noalias() += c.a.transpose() * dq;
    g.wk.noalias() += c.a.transpose() * dk;
    g.wv.noalias() += c.a.transpose() * dv;
    Mat<T> da = dq * layer.wq.transpose();
    da.noalias() += dk * layer.wk.transpose();
    da.noalias() += dv * layer.wv.transpose();
    Mat<T> dxin;
    rms_norm_backward(c.x_in, c.inv_rms1, layer.attn_gain, da, dxin, g.attn_gain);
    dx = dmid + dxin;
  }

  for (std::size_t s = 0; s < seqs.size(); ++s) {
    for (int i = 0; i < segs[s].length; ++i) {
      const auto row = dx.row(segs[s].begin + i);
      grads.tok_emb.row(seqs[s][static_cast<std::size_t>(i)]) += row;
      grads.pos_emb.row(i) += row;
    }
  }
}

}  // namespace dsvd::lm_math
