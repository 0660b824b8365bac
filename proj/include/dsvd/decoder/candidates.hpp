// Copyright 2026 The DSVD Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <numeric>
#include <utility>
#include <vector>

#include "dsvd/common.hpp"
#include "dsvd/lm/types.hpp"
#include "dsvd/prober/focal.hpp"

namespace dsvd {

/// Maps the output of one decoder step to z_hallu for the consumed token.
template <class P>
concept TokenProber = requires(P p, const StepOutput& out) {
  { p(out) } -> std::convertible_to<double>;
};

/// A prober that can score the outputs of one batched step in one call.
template <class P>
concept BatchTokenProber = TokenProber<P> && requires(P p, const std::vector<StepOutput>& outs) {
  { p.batch(outs) } -> std::convertible_to<std::vector<double>>;
};

struct Candidate {
  std::vector<TokenId> tokens;
  std::vector<double> logprobs;
  std::vector<double> z_hallu;
  double score = 0.0;

  double logprob() const { return std::accumulate(logprobs.begin(), logprobs.end(), 0.0); }
  std::size_t size() const { return tokens.size(); }
};

/// sum_i [log p(x_i | x_<i) - alpha * log z_hallu_i], z clamped to [1e-7, 1].
inline double score_candidate(const Candidate& c, double alpha) {
  require(c.logprobs.size() == c.tokens.size() && c.z_hallu.size() == c.tokens.size(), ErrorCode::kDimensionMismatch,
          "candidate lists differ in length");
  double f = 0.0;
  for (std::size_t i = 0; i < c.tokens.size(); ++i) f += c.logprobs[i] - alpha * std::log(clamp_prob(c.z_hallu[i]));
  return f;
}

/// Index of the highest score; ties go to higher plain log-prob, then to
/// the lowest index.
inline std::size_t select_best(const std::vector<Candidate>& candidates) {
  require(!candidates.empty(), ErrorCode::kEmptyInput, "no candidates to select from");
  std::size_t best = 0;
  double best_lp = candidates[0].logprob();
  for (std::size_t i = 1; i < candidates.size(); ++i) {
    const double lp = candidates[i].logprob();
    if (candidates[i].score > candidates[best].score ||
        (candidates[i].score == candidates[best].score && lp > best_lp)) {
      best = i;
      best_lp = lp;
    }
  }
  return best;
}

/// A beam hypothesis: the candidate plus the decoder state after its last
/// token and the logits for the token that would follow.
template <class State>
struct Hypothesis {
  Candidate candidate;
  State state;
  VectorF next_logits;
  double cumulative = 0.0;
  bool finished = false;
};

namespace beam_detail {

struct Expansion {
  double cumulative;
  std::size_t parent;
  TokenId token;  // -1 keeps a finished hypothesis as is
  double logprob = 0.0;
};

inline bool ranks_before(const Expansion& a, const Expansion& b) {
  if (a.cumulative != b.cumulative) return a.cumulative > b.cumulative;
  if (a.parent != b.parent) return a.parent < b.parent;
  return a.token < b.token;
}

template <CausalLm Model>
std::vector<StepOutput> advance(const Model& model, std::vector<typename Model::State*>& states,
                                const std::vector<TokenId>& tokens) {
  if constexpr (BatchedCausalLm<Model>) {
    return model.step_batch(states, tokens);
  } else {
    std::vector<StepOutput> out;
    out.reserve(states.size());
    for (std::size_t i = 0; i < states.size(); ++i) out.push_back(states[i]->step(tokens[i]));
    return out;
  }
}

}  // namespace beam_detail

/// Beam search of width `k` for up to `m` tokens from `start`, whose next
/// token distribution is `start_logits`. Hypotheses are ranked by
/// cumulative log-prob; with `stop_at_eos`, a hypothesis that emits EOS is
/// finished (EOS included) and keeps competing for a slot. Every token's
/// z_hallu comes from `prober` applied to that hypothesis's own step.
/// Returns at most k hypotheses, best cumulative log-prob first. `steps`,
/// when given, counts beam steps (one batched forward pass each).
template <CausalLm Model, TokenProber Prober>
std::vector<Hypothesis<typename Model::State>> generate_candidates(const Model& model, Prober& prober,
                                                                   typename Model::State& start,
                                                                   const VectorF& start_logits, int k, int m,
                                                                   bool stop_at_eos = true, long* steps = nullptr) {
  using State = typename Model::State;
  using beam_detail::Expansion;
  require(k >= 1 && m >= 1, ErrorCode::kInvalidArgument, "beam width and sample length must be >= 1");
  require(start.position() + m <= model.max_context(), ErrorCode::kContextOverflow,
          "candidate search of " + std::to_string(m) + " tokens from position " + std::to_string(start.position()) +
              " exceeds context " + std::to_string(model.max_context()));
  const auto kk = static_cast<std::size_t>(k);

  std::vector<Hypothesis<State>> beams;
  beams.push_back({{}, start.fork(), start_logits, 0.0, false});
  std::vector<Expansion> pool;
  std::vector<std::pair<double, TokenId>> top;
  for (int step = 0; step < m; ++step) {
    pool.clear();
    bool any_active = false;
    for (std::size_t b = 0; b < beams.size(); ++b) {
      const auto& h = beams[b];
      if (h.finished) {
        pool.push_back({h.cumulative, b, -1, 0.0});
        continue;
      }
      any_active = true;
      const auto lp = log_softmax(h.next_logits);
      top.clear();
      for (std::size_t v = 0; v < lp.size(); ++v) top.emplace_back(lp[v], static_cast<TokenId>(v));
      const std::size_t keep = std::min(kk, top.size());
      std::partial_sort(top.begin(), top.begin() + static_cast<std::ptrdiff_t>(keep), top.end(),
                        [](const auto& a, const auto& c) { return a.first != c.first ? a.first > c.first : a.second < c.second; });
      for (std::size_t i = 0; i < keep; ++i) pool.push_back({h.cumulative + top[i].first, b, top[i].second, top[i].first});
    }
    if (!any_active) break;
    const std::size_t keep = std::min(kk, pool.size());
    std::partial_sort(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(keep), pool.end(),
                      beam_detail::ranks_before);
    pool.resize(keep);

    // Children of one parent: all but the last fork, the last takes over.
    std::vector<std::size_t> remaining(beams.size(), 0);
    for (const auto& e : pool) ++remaining[e.parent];
    std::vector<Hypothesis<State>> next;
    next.reserve(keep);
    std::vector<State*> stepping;
    std::vector<TokenId> tokens;
    std::vector<std::size_t> stepping_index;
    for (const auto& e : pool) {
      auto& parent = beams[e.parent];
      const bool last_child = --remaining[e.parent] == 0;
      Hypothesis<State> child = last_child ? std::move(parent)
                                           : Hypothesis<State>{parent.candidate, parent.state.fork(), parent.next_logits,
                                                               parent.cumulative, parent.finished};
      if (e.token >= 0) {
        child.candidate.tokens.push_back(e.token);
        child.candidate.logprobs.push_back(e.logprob);
        child.cumulative = e.cumulative;
        child.finished = stop_at_eos && e.token == model.eos();
        stepping_index.push_back(next.size());
        tokens.push_back(e.token);
      }
      next.push_back(std::move(child));
    }
    for (std::size_t i : stepping_index) stepping.push_back(&next[i].state);
    if (!stepping.empty()) {
      auto outs = beam_detail::advance(model, stepping, tokens);
      if (steps) ++*steps;
      std::vector<double> z;
      if constexpr (BatchTokenProber<Prober>) {
        z = prober.batch(outs);
      } else {
        for (const auto& o : outs) z.push_back(static_cast<double>(prober(o)));
      }
      for (std::size_t j = 0; j < outs.size(); ++j) {
        auto& h = next[stepping_index[j]];
        h.candidate.z_hallu.push_back(z[j]);
        h.next_logits = std::move(outs[j].logits);
      }
    }
    beams = std::move(next);
  }
  return beams;
}

}  // namespace dsvd
