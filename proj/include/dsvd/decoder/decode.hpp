// Copyright 2026 The DSVD Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <set>
#include <utility>
#include <vector>

#include "dsvd/common.hpp"
#include "dsvd/kernels.hpp"
#include "dsvd/decoder/candidates.hpp"
#include "dsvd/decoder/params.hpp"
#include "dsvd/decoder/window.hpp"
#include "dsvd/lm/generate.hpp"
#include "dsvd/lm/types.hpp"
#include "dsvd/prober/ensemble.hpp"

namespace dsvd {

struct RollbackEvent {
  int trigger_position = 0;  // state position whose value fired
  int target_position = 0;   // t0: tokens at positions >= t0 were replaced
  int splice_length = 0;
  std::size_t best_index = 0;
  double best_score = 0.0;
};

struct TriggerEvent {
  int position = 0;
  double value = 0.0;
  bool acted = false;  // false once the rollback budget is spent or the context is full
};

struct DecodeReport {
  std::vector<TokenId> tokens;  // generated tokens, EOS excluded
  bool hit_eos = false;
  int prompt_length = 0;
  std::vector<RollbackEvent> rollbacks;
  std::vector<TriggerEvent> triggers;
  std::vector<double> token_latency_ms;  // one per greedily appended token
  std::vector<double> rollback_latency_ms;
  long forward_steps = 0;  // sequential forward passes; a beam step counts once
  double total_ms = 0.0;

  int rollback_count() const { return static_cast<int>(rollbacks.size()); }
};

/// z_hallu from a trained ensemble. `batch` probes all beam hypotheses of
/// one step together, reading each head's first-layer weights once.
class EnsembleProber {
 public:
  explicit EnsembleProber(const ProbingEnsemble& e) : e_(&e) {
    for (const auto& h : e.heads) w1t_.push_back(h.w1.transpose());
  }
  double operator()(const StepOutput& out) const { return probe(*e_, out.states).hallu; }

  std::vector<double> batch(const std::vector<StepOutput>& outs) const {
    const auto n = static_cast<Eigen::Index>(outs.size());
    const int d = e_->input_dim();
    Eigen::Matrix<double, Eigen::Dynamic, 2> sum = Eigen::Matrix<double, Eigen::Dynamic, 2>::Zero(n, 2);
    const int first = e_->layer >= 0 ? e_->layer : 0;
    const int last = e_->layer >= 0 ? e_->layer + 1 : e_->head_count();
    RowMatrixF x(n, d), h;
    for (int l = first; l < last; ++l) {
      const auto& head = e_->heads[static_cast<std::size_t>(l)];
      for (Eigen::Index i = 0; i < n; ++i) {
        const auto& st = outs[static_cast<std::size_t>(i)].states;
        require(st.layer_count() == e_->head_count() && st.dim() == d, ErrorCode::kDimensionMismatch,
                "probe input shape");
        x.row(i) = st.layer(l);
      }
      kernels::project(x, head.w1, w1t_[static_cast<std::size_t>(l)], h);
      h.rowwise() += head.b1;
      if (e_->activation == ProbeActivation::kRelu) h = h.cwiseMax(0.0f);
      const RowMatrixF z = (h * head.w2).rowwise() + head.b2;
      sum += z.cast<double>();
    }
    const double heads = last - first;
    std::vector<double> out(outs.size());
    for (Eigen::Index i = 0; i < n; ++i)
      out[static_cast<std::size_t>(i)] = two_way_softmax(sum(i, 0) / heads, sum(i, 1) / heads).hallu;
    return out;
  }

 private:
  const ProbingEnsemble* e_;
  std::vector<RowMatrixF> w1t_;
};

/// Constant z_hallu, e.g. 0 for a never-firing detector.
struct ConstantProber {
  double value = 0.0;
  double operator()(const StepOutput&) const { return value; }
};

/// Returns 1 the first time each listed state position is probed and 0
/// otherwise, so every listed position fires at most once.
class ScriptedProbe {
 public:
  explicit ScriptedProbe(std::set<int> positions) : pending_(std::move(positions)) {}
  double operator()(const StepOutput& out) { return pending_.erase(out.position) > 0 ? 1.0 : 0.0; }
  std::size_t remaining() const { return pending_.size(); }

 private:
  std::set<int> pending_;
};

/// top-2 / top-1 probability ratio of a logit vector.
inline double top_ratio(const VectorF& logits) {
  require(logits.size() >= 2, ErrorCode::kInvalidArgument, "top-ratio needs at least two logits");
  float a = -std::numeric_limits<float>::infinity(), b = a;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    if (logits[i] > a) {
      b = a;
      a = logits[i];
    } else if (logits[i] > b) {
      b = logits[i];
    }
  }
  return std::exp(static_cast<double>(b) - static_cast<double>(a));
}

/// Greedy decoding with per-token verification, sliding-window trigger,
/// rollback, beam re-ranking and splice. See README for the position
/// conventions.
template <CausalLm Model, TokenProber Prober>
DecodeReport dsvd_decode(const Model& model, Prober& prober, const std::vector<TokenId>& prompt,
                         const DecodeParams& params) {
  using Clock = std::chrono::steady_clock;
  auto ms_since = [](Clock::time_point t) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t).count();
  };
  params.validate();
  const auto started = Clock::now();

  DecodeReport report;
  auto state = model.new_state();
  const StepOutput primed = prime(model, state, prompt);
  report.forward_steps = static_cast<long>(prompt.size());
  const int prompt_end = state.position();
  report.prompt_length = prompt_end;

  // next_logits[i]: distribution after position prompt_end + i. Only the
  // entries at or after the frontier are ever read again.
  std::vector<VectorF> next_logits{primed.logits};
  StepOutput current = primed;  // output of the last consumed token
  bool probe_current = true;
  int frontier = prompt_end;
  SlidingWindow window(params.rollback_window);

  while (static_cast<int>(report.tokens.size()) < params.max_new_tokens) {
    const auto iteration_start = Clock::now();
    const int t = state.position();

    if (probe_current && params.trigger_mode != TriggerMode::kDisabled) {
      const double value = params.trigger_mode == TriggerMode::kProbing ? static_cast<double>(prober(current))
                                                                         : top_ratio(current.logits);
      window.push(value, t);
      const double threshold =
          params.trigger_mode == TriggerMode::kProbing ? params.trigger_threshold : params.ratio_threshold;
      if (check_trigger(window, threshold)) {
        const int t0 = std::max(t - params.rollback_window, frontier);
        const int remaining_budget = params.max_new_tokens - (t0 - prompt_end);
        const int length = std::min({params.sample_length, remaining_budget, model.max_context() - t0});
        const bool act = report.rollback_count() < params.rollback_budget && length >= 1;
        report.triggers.push_back({t, value, act});
        if (act) {
          state.rollback({state.checkpoint().state_id, t0});
          report.tokens.resize(static_cast<std::size_t>(t0 - prompt_end));
          next_logits.resize(static_cast<std::size_t>(t0 - prompt_end + 1));
          auto beams = generate_candidates(model, prober, state, next_logits.back(), params.beam_width, length,
                                           params.stop_at_eos, &report.forward_steps);
          std::vector<Candidate> candidates;
          candidates.reserve(beams.size());
          for (auto& b : beams) {
            b.candidate.score = score_candidate(b.candidate, params.effective_alpha());
            candidates.push_back(b.candidate);
          }
          const std::size_t best = select_best(candidates);
          auto& chosen = beams[best];
          bool ended = false;
          for (TokenId tok : chosen.candidate.tokens) {
            if (params.stop_at_eos && tok == model.eos()) {
              ended = true;
              break;
            }
            report.tokens.push_back(tok);
          }
          state = std::move(chosen.state);
          next_logits.resize(static_cast<std::size_t>(state.position() - prompt_end + 1));
          next_logits.back() = std::move(chosen.next_logits);
          report.rollbacks.push_back(
              {t, t0, static_cast<int>(chosen.candidate.size()), best, chosen.candidate.score});
          frontier = state.position();
          window.clear();
          probe_current = false;
          report.rollback_latency_ms.push_back(ms_since(iteration_start));
          if (ended) {
            report.hit_eos = true;
            break;
          }
          continue;
        }
      }
    }

    if (state.position() >= model.max_context()) break;
    const TokenId next = argmax(next_logits.back());
    if (params.stop_at_eos && next == model.eos()) {
      report.hit_eos = true;
      break;
    }
    current = state.step(next);
    ++report.forward_steps;
    report.tokens.push_back(next);
    next_logits.push_back(current.logits);
    probe_current = true;
    report.token_latency_ms.push_back(ms_since(iteration_start));
  }
  report.total_ms = ms_since(started);
  return report;
}

/// Checks that the ensemble matches the model before decoding with it.
template <CausalLm Model>
DecodeReport dsvd_decode(const Model& model, const ProbingEnsemble& ensemble, const std::vector<TokenId>& prompt,
                         const DecodeParams& params) {
  require(ensemble.head_count() == model.state_layers() && ensemble.input_dim() == model.model_dim(),
          ErrorCode::kDimensionMismatch,
          "ensemble has " + std::to_string(ensemble.head_count()) + " heads of dim " +
              std::to_string(ensemble.input_dim()) + ", model exposes " + std::to_string(model.state_layers()) +
              " layers of dim " + std::to_string(model.model_dim()));
  EnsembleProber prober(ensemble);
  return dsvd_decode(model, prober, prompt, params);
}

}  // namespace dsvd
