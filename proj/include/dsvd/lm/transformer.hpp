// Copyright 2026 The DSVD Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <memory>
#include <span>
#include <utility>
#include <vector>

#include "dsvd/common.hpp"
#include "dsvd/kernels.hpp"
#include "dsvd/lm/forward.hpp"
#include "dsvd/lm/types.hpp"
#include "dsvd/lm/weights.hpp"

namespace dsvd {

class Transformer;

namespace detail {

/// Per-layer key/value rows. `rows` is the number of valid rows.
struct KvStore {
  std::vector<RowMatrixF> k, v;
  int rows = 0;

  KvStore() = default;
  KvStore(int layers, int capacity, int dim) {
    k.assign(static_cast<std::size_t>(layers), RowMatrixF(capacity, dim));
    v.assign(static_cast<std::size_t>(layers), RowMatrixF(capacity, dim));
  }

  int capacity() const { return k.empty() ? 0 : static_cast<int>(k.front().rows()); }

  void reserve(int needed) {
    if (needed <= capacity()) return;
    const int cap = std::max(needed, std::max(8, 2 * capacity()));
    for (auto* mats : {&k, &v})
      for (auto& m : *mats) m.conservativeResize(cap, Eigen::NoChange);
  }
};

}  // namespace detail

/// Incremental decoding state of a `Transformer`.
///
/// The key/value cache is split into a shared base (positions [0, base_len))
/// and a privately owned tail. `fork()` shares the base and copies only the
/// tail, so beam hypotheses branching from a long prefix stay cheap. Rollback
/// truncates in place.
class TransformerState {
 public:
  TransformerState() = default;

  StepOutput step(TokenId token);
  int position() const { return base_len_ + tail_.rows; }
  DecoderCheckpoint checkpoint() const { return {guard_.id(), position()}; }

  /// Truncates to the checkpoint (clamped to the pinned prompt end) and
  /// returns the resulting position.
  int rollback(const DecoderCheckpoint& cp) {
    const int target = guard_.resolve(cp, position());
    if (target <= base_len_) {
      base_len_ = target;
      tail_.rows = 0;
    } else {
      tail_.rows = target - base_len_;
    }
    return target;
  }

  /// Marks the current position as the end of the prompt.
  void pin_prefix() { guard_.pin(position()); }
  int pinned() const { return guard_.pinned(); }
  std::uint64_t id() const { return guard_.id(); }

  TransformerState fork() {
    consolidate();
    return TransformerState(*this);
  }

  const Transformer& model() const { return *model_; }

 private:
  friend class Transformer;

  TransformerState(const TransformerState&) = default;
  TransformerState& operator=(const TransformerState&) = default;

 public:
  TransformerState(TransformerState&&) noexcept = default;
  TransformerState& operator=(TransformerState&&) noexcept = default;

 private:
  explicit TransformerState(const Transformer* model);

  /// Moves tail rows into the base when this state is the base's only owner.
  void consolidate() {
    if (tail_.rows == 0 || base_.use_count() != 1) return;
    for (std::size_t l = 0; l < base_->k.size(); ++l) {
      base_->k[l].middleRows(base_len_, tail_.rows) = tail_.k[l].topRows(tail_.rows);
      base_->v[l].middleRows(base_len_, tail_.rows) = tail_.v[l].topRows(tail_.rows);
    }
    base_len_ += tail_.rows;
    tail_.rows = 0;
  }

  /// Where the key/value rows of the next token go. A state that outlived its
  /// siblings (the spliced beam) folds its tail back first, so later steps
  /// attend over one contiguous block.
  std::pair<detail::KvStore*, int> append_slot() {
    consolidate();
    if (tail_.rows == 0 && base_.use_count() == 1) return {base_.get(), base_len_++};
    tail_.reserve(tail_.rows + 1);
    return {&tail_, tail_.rows++};
  }

  const Transformer* model_ = nullptr;
  StateGuard guard_;
  std::shared_ptr<detail::KvStore> base_;
  int base_len_ = 0;
  detail::KvStore tail_;
};

/// Reference decoder-only transformer used for inference.
class Transformer {
 public:
  using State = TransformerState;

  explicit Transformer(TransformerWeights<float> weights) : w_(std::move(weights)) {
    w_.config.validate();
    for (const auto& l : w_.layers)
      transposed_.push_back({l.wq.transpose(), l.wk.transpose(), l.wv.transpose(), l.wo.transpose(),
                             l.w_up.transpose(), l.w_down.transpose()});
    lm_head_t_ = w_.lm_head.transpose();
  }

  const TransformerWeights<float>& weights() const { return w_; }
  const TransformerConfig& config() const { return w_.config; }

  int vocab_size() const { return w_.config.vocab_size; }
  int state_layers() const { return w_.config.n_layers + 1; }
  int model_dim() const { return w_.config.d_model; }
  int max_context() const { return w_.config.max_context; }
  TokenId eos() const { return 1; }

  State new_state() const { return State(this); }

  StepOutput step(State& state, TokenId token) const {
    std::vector<State*> states{&state};
    return std::move(step_batch(states, {token}).front());
  }

  /// Advances every state by one token. States that share the same base
  /// prefix have their prefix attention computed as one matrix product.
  std::vector<StepOutput> step_batch(std::vector<State*>& states, const std::vector<TokenId>& tokens) const {
    require(states.size() == tokens.size(), ErrorCode::kInvalidArgument, "states/tokens size mismatch");
    const auto& cfg = w_.config;
    const int n = static_cast<int>(states.size());
    const int d = cfg.d_model, nh = cfg.n_heads, dh = cfg.head_dim();
    const float scale = 1.0f / std::sqrt(static_cast<float>(dh));

    RowMatrixF x(n, d);
    std::vector<int> pos(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      State& s = *states[static_cast<std::size_t>(i)];
      require(s.model_ == this, ErrorCode::kInvalidArgument, "state belongs to another model");
      const TokenId tok = tokens[static_cast<std::size_t>(i)];
      require(tok >= 0 && tok < cfg.vocab_size, ErrorCode::kTokenOutOfRange, "token " + std::to_string(tok));
      pos[static_cast<std::size_t>(i)] = s.position();
      require(s.position() < cfg.max_context, ErrorCode::kContextOverflow,
              "state at maximum context " + std::to_string(cfg.max_context));
      x.row(i) = w_.tok_emb.row(tok) + w_.pos_emb.row(s.position());
    }

    // Reserve cache slots up front; every layer writes the same row index.
    std::vector<std::pair<detail::KvStore*, int>> slots;
    slots.reserve(static_cast<std::size_t>(n));
    for (auto* s : states) slots.push_back(s->append_slot());

    // Group states sharing one base prefix so the prefix scores are a GEMM.
    std::vector<std::vector<int>> groups;
    for (int i = 0; i < n; ++i) {
      const State& s = *states[static_cast<std::size_t>(i)];
      bool placed = false;
      for (auto& g : groups) {
        const State& r = *states[static_cast<std::size_t>(g.front())];
        if (r.base_ == s.base_ && r.base_len_ == s.base_len_ && &s != &r) {
          g.push_back(i);
          placed = true;
          break;
        }
      }
      if (!placed) groups.push_back({i});
    }

    std::vector<StepOutput> out(static_cast<std::size_t>(n));
    for (auto& o : out) o.states.rows.resize(cfg.n_layers + 1, d);
    for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i)].states.rows.row(0) = x.row(i);

    RowMatrixF a, q, k, v, attn(n, d), b, u, proj;
    lm_math::Col<float> inv;
    for (int l = 0; l < cfg.n_layers; ++l) {
      const auto& layer = w_.layers[static_cast<std::size_t>(l)];
      const auto& t = transposed_[static_cast<std::size_t>(l)];
      lm_math::rms_norm<float>(x, layer.attn_gain, a, inv);
      kernels::project(a, layer.wq, t.wq, q);
      kernels::project(a, layer.wk, t.wk, k);
      kernels::project(a, layer.wv, t.wv, v);
      for (int i = 0; i < n; ++i) {
        auto [store, row] = slots[static_cast<std::size_t>(i)];
        store->k[static_cast<std::size_t>(l)].row(row) = k.row(i);
        store->v[static_cast<std::size_t>(l)].row(row) = v.row(i);
      }
      for (const auto& g : groups) attend_group(states, g, l, q, scale, nh, dh, attn);
      kernels::project(attn, layer.wo, t.wo, proj);
      x += proj;
      lm_math::rms_norm<float>(x, layer.mlp_gain, b, inv);
      kernels::project(b, layer.w_up, t.w_up, u);
      lm_math::gelu_in_place(u);
      kernels::project(u, layer.w_down, t.w_down, proj);
      x += proj;
      for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i)].states.rows.row(l + 1) = x.row(i);
    }

    RowMatrixF f;
    lm_math::rms_norm<float>(x, w_.final_gain, f, inv);
    RowMatrixF logits;
    kernels::project(f, w_.lm_head, lm_head_t_, logits);
    for (int i = 0; i < n; ++i) {
      auto& o = out[static_cast<std::size_t>(i)];
      o.logits = logits.row(i).transpose();
      o.position = pos[static_cast<std::size_t>(i)] + 1;
    }
    return out;
  }

  /// Uncached pass over a whole sequence: logits and states for every position.
  struct FullPass {
    RowMatrixF logits;               // n x V
    std::vector<RowMatrixF> states;  // L+1 entries of n x d
    StepOutput at(int i) const {
      StepOutput o;
      o.logits = logits.row(i).transpose();
      o.states.rows.resize(static_cast<Eigen::Index>(states.size()), logits.cols() > 0 ? states[0].cols() : 0);
      for (std::size_t l = 0; l < states.size(); ++l) o.states.rows.row(static_cast<Eigen::Index>(l)) = states[l].row(i);
      o.position = i + 1;
      return o;
    }
  };

  FullPass forward_full(const std::vector<TokenId>& tokens) const {
    require(!tokens.empty(), ErrorCode::kEmptyInput, "empty sequence");
    std::vector<std::vector<TokenId>> seqs{tokens};
    auto r = lm_math::forward<float>(w_, seqs, nullptr, true);
    return {std::move(r.logits), std::move(r.states)};
  }

 private:
  void attend_group(std::vector<State*>& states, const std::vector<int>& group, int layer, const RowMatrixF& q,
                    float scale, int nh, int dh, RowMatrixF& attn) const {
    const auto li = static_cast<std::size_t>(layer);
    const State& first = *states[static_cast<std::size_t>(group.front())];
    const int base_len = first.base_len_;
    const auto gsize = static_cast<Eigen::Index>(group.size());
    const detail::KvStore* base = first.base_.get();

    RowMatrixF qg(gsize, q.cols());
    for (Eigen::Index r = 0; r < gsize; ++r) qg.row(r) = q.row(group[static_cast<std::size_t>(r)]);
    // Eigen's GEMM would repack the strided key/value head blocks on every
    // step; small groups read them in place instead.
    const bool in_place = gsize >= 2 && gsize <= 6;
    const Eigen::Index ld = base_len > 0 ? base->k[li].cols() : 0;

    for (int h = 0; h < nh; ++h) {
      const RowMatrixF qh = qg.middleCols(h * dh, dh);
      RowMatrixF base_scores;
      if (base_len > 0) {
        if (in_place) {
          base_scores.resize(gsize, base_len);
          kernels::dot_rows_dispatch(gsize, qh.data(), base->k[li].data() + h * dh, dh, base_len,
                                     base_scores.data(), ld);
        } else {
          base_scores.noalias() = qh * base->k[li].block(0, h * dh, base_len, dh).transpose();
        }
        base_scores *= scale;
      } else {
        base_scores.resize(gsize, 0);
      }
      for (Eigen::Index r = 0; r < gsize; ++r) {
        const State& s = *states[static_cast<std::size_t>(group[static_cast<std::size_t>(r)])];
        const int tail_len = s.tail_.rows;
        VectorF tail_scores;
        if (tail_len > 0) {
          tail_scores.noalias() = s.tail_.k[li].block(0, h * dh, tail_len, dh) * qh.row(r).transpose();
          tail_scores *= scale;
        }
        float mx = -std::numeric_limits<float>::infinity();
        if (base_len > 0) mx = base_scores.row(r).maxCoeff();
        if (tail_len > 0) mx = std::max(mx, tail_scores.maxCoeff());
        float total = 0.0f;
        if (base_len > 0) {
          base_scores.row(r) = (base_scores.row(r).array() - mx).exp();
          total += base_scores.row(r).sum();
        }
        if (tail_len > 0) {
          tail_scores = (tail_scores.array() - mx).exp();
          total += tail_scores.sum();
        }
        if (base_len > 0) base_scores.row(r) /= total;
        auto dst = attn.block(group[static_cast<std::size_t>(r)], h * dh, 1, dh);
        dst.setZero();
        if (tail_len > 0)
          dst.noalias() += (tail_scores / total).transpose() * s.tail_.v[li].block(0, h * dh, tail_len, dh);
      }
      if (base_len > 0) {
        RowMatrixF prefix(gsize, dh);
        if (in_place)
          kernels::weighted_rows_dispatch(gsize, base_scores.data(), base_len, base->v[li].data() + h * dh, ld, dh,
                                          prefix.data());
        else
          prefix.noalias() = base_scores * base->v[li].block(0, h * dh, base_len, dh);
        for (Eigen::Index r = 0; r < gsize; ++r)
          attn.block(group[static_cast<std::size_t>(r)], h * dh, 1, dh) += prefix.row(r);
      }
    }
  }

  struct Transposed {
    RowMatrixF wq, wk, wv, wo, w_up, w_down;
  };

  TransformerWeights<float> w_;
  std::vector<Transposed> transposed_;  // for kernels::project
  RowMatrixF lm_head_t_;
};

inline TransformerState::TransformerState(const Transformer* model)
    : model_(model),
      base_(std::make_shared<detail::KvStore>(model->config().n_layers, model->config().max_context,
                                              model->config().d_model)) {
  tail_.k.assign(static_cast<std::size_t>(model->config().n_layers), RowMatrixF(0, model->config().d_model));
  tail_.v = tail_.k;
}

inline StepOutput TransformerState::step(TokenId token) {
  require(model_ != nullptr, ErrorCode::kInvalidArgument, "state has no model");
  return model_->step(*this, token);
}

}  // namespace dsvd
