// Copyright 2026 The DSVD Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "dsvd/lm/types.hpp"

namespace dsvd::testing {

/// A causal LM whose next-token distribution is an explicit function of the
/// full context. Logits are log-probabilities, so softmax recovers the table
/// exactly. Hidden states are a fixed function of the context: every layer
/// row l holds a one-hot of the last token scaled by (l + 1), plus the
/// position in the last column.
class TableLm {
 public:
  using Table = std::function<std::vector<double>(const std::vector<TokenId>& context)>;

  class State {
   public:
    StepOutput step(TokenId token) {
      require(token >= 0 && token < model_->vocab_, ErrorCode::kTokenOutOfRange, "table lm token");
      require(position() < model_->max_context_, ErrorCode::kContextOverflow, "table lm context");
      tokens_.push_back(token);
      ++*model_->steps_;
      return model_->output(tokens_);
    }
    int position() const { return static_cast<int>(tokens_.size()); }
    DecoderCheckpoint checkpoint() const { return {guard_.id(), position()}; }
    int rollback(const DecoderCheckpoint& cp) {
      const int to = guard_.resolve(cp, position());
      tokens_.resize(static_cast<std::size_t>(to));
      return to;
    }
    void pin_prefix() { guard_.pin(position()); }
    State fork() const { return *this; }
    const std::vector<TokenId>& tokens() const { return tokens_; }

   private:
    friend class TableLm;
    explicit State(const TableLm* m) : model_(m) {}
    const TableLm* model_;
    std::vector<TokenId> tokens_;
    StateGuard guard_;
  };

  TableLm(int vocab, Table table, int layers = 2, int max_context = 64, TokenId eos = 1)
      : vocab_(vocab), layers_(layers), max_context_(max_context), eos_(eos), table_(std::move(table)) {}

  State new_state() const { return State(this); }
  int vocab_size() const { return vocab_; }
  int state_layers() const { return layers_; }
  int model_dim() const { return vocab_ + 1; }
  int max_context() const { return max_context_; }
  TokenId eos() const { return eos_; }
  long steps() const { return *steps_; }

  StepOutput output(const std::vector<TokenId>& context) const {
    const auto probs = table_(context);
    require(static_cast<int>(probs.size()) == vocab_, ErrorCode::kDimensionMismatch, "table row size");
    StepOutput out;
    out.logits.resize(vocab_);
    for (int v = 0; v < vocab_; ++v)
      out.logits[v] = probs[static_cast<std::size_t>(v)] > 0 ? static_cast<float>(std::log(probs[static_cast<std::size_t>(v)]))
                                                             : -1e30f;
    out.states.rows = RowMatrixF::Zero(layers_, model_dim());
    for (int l = 0; l < layers_; ++l) {
      out.states.rows(l, context.back()) = static_cast<float>(l + 1);
      out.states.rows(l, vocab_) = static_cast<float>(context.size());
    }
    out.position = static_cast<int>(context.size());
    return out;
  }

 private:
  int vocab_;
  int layers_;
  int max_context_;
  TokenId eos_;
  Table table_;
  std::shared_ptr<long> steps_ = std::make_shared<long>(0);
};

static_assert(CausalLm<TableLm>);

}  // namespace dsvd::testing
