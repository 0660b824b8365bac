// Copyright 2026 The DSVD Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "dsvd/decoder/candidates.hpp"
#include "dsvd/decoder/decode.hpp"
#include "dsvd/decoder/params.hpp"
#include "dsvd/decoder/window.hpp"
#include "dsvd/lm/generate.hpp"
#include "dsvd/lm/transformer.hpp"
#include "dsvd/prober/ensemble.hpp"
#include "support/oracles.hpp"
#include "support/table_lm.hpp"
#include "support/test_util.hpp"

namespace dsvd {
namespace {

using testing::TableLm;

TransformerConfig toy_config(int vocab = 13, int ctx = 96) {
  TransformerConfig c;
  c.vocab_size = vocab;
  c.n_layers = 2;
  c.d_model = 16;
  c.n_heads = 2;
  c.max_context = ctx;
  return c;
}

SlidingWindow window_of(const std::vector<double>& values) {
  SlidingWindow w(10);
  for (std::size_t i = 0; i < values.size(); ++i) w.push(values[i], static_cast<int>(i));
  return w;
}

TEST(Trigger, WindowThreshold) {
  EXPECT_FALSE(check_trigger(SlidingWindow(3), 0.5));
  EXPECT_FALSE(check_trigger(window_of({0.2, 0.49, 0.3}), 0.5));
  EXPECT_TRUE(check_trigger(window_of({0.2, 0.51}), 0.5));
  EXPECT_FALSE(check_trigger(window_of({0.5}), 0.5));
}

TEST(Trigger, TopRatio) {
  EXPECT_TRUE(check_trigger_ratio(0.5, 0.4));
  EXPECT_FALSE(check_trigger_ratio(0.9, 0.05));
  for (double p : {0.01, 0.3, 0.5}) EXPECT_TRUE(check_trigger_ratio(p, p));
  EXPECT_THROW(check_trigger_ratio(0.0, 0.0), Error);
  EXPECT_NEAR(top_ratio((VectorF(3) << std::log(0.5f), std::log(0.4f), std::log(0.1f)).finished()), 0.8, 1e-6);
}

TEST(SlidingWindow, KeepsLastRContiguousPositions) {
  SlidingWindow w(3);
  for (int p = 5; p < 10; ++p) w.push(p * 0.1, p);
  ASSERT_EQ(w.size(), 3u);
  EXPECT_EQ(w[0].position, 7);
  EXPECT_EQ(w.back().position, 9);
  EXPECT_THROW(w.push(0.0, 11), Error);
  w.clear();
  EXPECT_TRUE(w.empty());
  EXPECT_NO_THROW(w.push(0.0, 42));
  EXPECT_THROW(SlidingWindow(0), Error);
}

Candidate make_candidate(std::vector<double> lp, std::vector<double> z) {
  Candidate c;
  for (std::size_t i = 0; i < lp.size(); ++i) c.tokens.push_back(static_cast<TokenId>(i));
  c.logprobs = std::move(lp);
  c.z_hallu = std::move(z);
  return c;
}

TEST(ScoreCandidate, Examples) {
  const auto c = make_candidate({-1.0, -2.0}, {0.5, 0.25});
  EXPECT_DOUBLE_EQ(score_candidate(c, 0.0), -3.0);
  const double expected = -3.0 - 0.1 * (std::log(0.5) + std::log(0.25));
  EXPECT_DOUBLE_EQ(score_candidate(c, 0.1), expected);
  EXPECT_NEAR(expected, -2.7921, 5e-5);
  EXPECT_DOUBLE_EQ(score_candidate(make_candidate({-1.0, -2.0}, {1.0, 1.0}), 0.7), -3.0);
  // Clamp keeps z = 0 finite.
  EXPECT_NEAR(score_candidate(make_candidate({-1.0}, {0.0}), 0.1), -1.0 - 0.1 * std::log(1e-7), 1e-12);
  auto bad = c;
  bad.z_hallu.pop_back();
  EXPECT_THROW(score_candidate(bad, 0.1), Error);
}

TEST(SelectBest, ArgmaxAndTieBreaks) {
  auto with_score = [](double score, double lp) {
    auto c = make_candidate({lp}, {1.0});
    c.score = score;
    return c;
  };
  EXPECT_EQ(select_best({with_score(-1, -1)}), 0u);
  EXPECT_EQ(select_best({with_score(-5, -5), with_score(-3, -3), with_score(-4, -4)}), 1u);
  EXPECT_EQ(select_best({with_score(-2, -4), with_score(-2, -3), with_score(-2, -3)}), 1u);
  EXPECT_EQ(select_best({with_score(-2, -3), with_score(-2, -3)}), 0u);
  EXPECT_THROW(select_best({}), Error);
}

TEST(ScoreCandidate, LargerPenaltyMassKeepsItsLeadAsAlphaGrows) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    auto a = make_candidate({-1.0, -0.5}, {u(rng), u(rng)});
    auto b = make_candidate({-0.5, -1.0}, {u(rng), u(rng)});
    const double mass_a = -std::log(a.z_hallu[0]) - std::log(a.z_hallu[1]);
    const double mass_b = -std::log(b.z_hallu[0]) - std::log(b.z_hallu[1]);
    if (mass_a == mass_b) continue;
    double prev_gap = 0.0;
    for (double alpha : {0.0, 0.05, 0.1, 0.5, 1.0, 5.0}) {
      const double gap = score_candidate(a, alpha) - score_candidate(b, alpha);
      if (alpha > 0) {
        EXPECT_EQ(gap > 0, mass_a > mass_b);
        EXPECT_GE(std::abs(gap), std::abs(prev_gap));
      }
      prev_gap = gap;
    }
  }
}

TEST(GenerateCandidates, WidthOneIsGreedy) {
  Transformer model(testing::lively_weights(toy_config(), 4));
  ConstantProber zero;
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const auto prompt = testing::random_tokens(rng, 13, 4);
    auto state = model.new_state();
    const auto last = prime(model, state, prompt);
    const auto beams = generate_candidates(model, zero, state, last.logits, 1, 12, false);
    const auto greedy = greedy_generate(model, prompt, 12, false);
    ASSERT_EQ(beams.size(), 1u);
    EXPECT_EQ(beams[0].candidate.tokens, greedy.tokens);
    for (std::size_t i = 0; i < greedy.logprobs.size(); ++i)
      EXPECT_NEAR(beams[0].candidate.logprobs[i], greedy.logprobs[i], 1e-5);
    EXPECT_EQ(state.position(), static_cast<int>(prompt.size())) << "the start state must not move";
  }
}

std::vector<double> four_token_table(const std::vector<TokenId>& ctx) {
  // Distinct, context-dependent probabilities so that no two continuations tie.
  const double s = 1.0 + 0.37 * static_cast<double>(ctx.back()) + 0.11 * static_cast<double>(ctx.size());
  std::vector<double> w{1.0, s, s * s * 0.5, 0.3 + s};
  double total = 0;
  for (double x : w) total += x;
  for (double& x : w) x /= total;
  return w;
}

TEST(GenerateCandidates, ExhaustiveWidthEnumeratesAllContinuations) {
  TableLm model(4, four_token_table);
  ConstantProber zero;
  auto state = model.new_state();
  const auto last = prime(model, state, {2});
  const auto beams = generate_candidates(model, zero, state, last.logits, 16, 2, false);
  ASSERT_EQ(beams.size(), 16u);

  std::vector<std::pair<double, std::vector<TokenId>>> oracle;
  for (TokenId a = 0; a < 4; ++a)
    for (TokenId b = 0; b < 4; ++b) {
      const double lp = std::log(four_token_table({2})[static_cast<std::size_t>(a)]) +
                        std::log(four_token_table({2, a})[static_cast<std::size_t>(b)]);
      oracle.push_back({lp, {a, b}});
    }
  std::sort(oracle.begin(), oracle.end(), [](const auto& x, const auto& y) { return x.first > y.first; });
  for (std::size_t i = 0; i < 16; ++i) {
    EXPECT_EQ(beams[i].candidate.tokens, oracle[i].second) << "rank " << i;
    EXPECT_NEAR(beams[i].candidate.logprob(), oracle[i].first, 1e-6);
  }
}

TEST(GenerateCandidates, EosEndsAHypothesis) {
  // EOS (id 1) becomes near-certain after three generated tokens.
  TableLm model(4, [](const std::vector<TokenId>& ctx) -> std::vector<double> {
    if (ctx.size() >= 4) return {0.01, 0.97, 0.01, 0.01};
    return {0.1, 0.0, 0.8, 0.1};
  });
  ConstantProber zero;
  auto state = model.new_state();
  const auto last = prime(model, state, {0, 2});
  const auto beams = generate_candidates(model, zero, state, last.logits, 1, 20, true);
  ASSERT_EQ(beams.size(), 1u);
  EXPECT_EQ(beams[0].candidate.tokens, (std::vector<TokenId>{2, 2, 1}));
  EXPECT_TRUE(beams[0].finished);
}

TEST(GenerateCandidates, ProbesEachHypothesisOnItsOwnStates) {
  TableLm model(4, four_token_table);
  // TableLm layer 0 holds a one-hot of the consumed token.
  auto prober = [](const StepOutput& o) { return 0.1 + 0.2 * o.states.rows(0, 3) + 0.05 * o.states.rows(0, 2); };
  auto state = model.new_state();
  const auto last = prime(model, state, {1});
  const auto beams = generate_candidates(model, prober, state, last.logits, 6, 3, false);
  for (const auto& b : beams)
    for (std::size_t i = 0; i < b.candidate.size(); ++i) {
      const TokenId tok = b.candidate.tokens[i];
      EXPECT_DOUBLE_EQ(b.candidate.z_hallu[i], 0.1 + (tok == 3 ? 0.2 : 0.0) + (tok == 2 ? 0.05 : 0.0));
    }
}

TEST(EnsembleProber, BatchMatchesPerItem) {
  const auto cfg = toy_config();
  const Transformer model(testing::lively_weights(cfg, 5));
  std::mt19937_64 rng(8);
  std::vector<StepOutput> outs;
  for (int i = 0; i < 11; ++i) {
    auto state = model.new_state();
    outs.push_back(prime(model, state, testing::random_tokens(rng, cfg.vocab_size, 1 + i % 4)));
  }
  for (int layer : {-1, 1}) {
    for (auto act : {ProbeActivation::kRelu, ProbeActivation::kIdentity}) {
      auto ens = ProbingEnsemble::random(cfg.n_layers + 1, cfg.d_model, cfg.d_model, act, 3);
      ens.layer = layer;
      const EnsembleProber prober(ens);
      for (std::size_t n : {std::size_t{1}, std::size_t{4}, outs.size()}) {
        const std::vector<StepOutput> some(outs.begin(), outs.begin() + static_cast<std::ptrdiff_t>(n));
        const auto z = prober.batch(some);
        ASSERT_EQ(z.size(), n);
        for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(z[i], prober(some[i]), 1e-5);
      }
    }
  }
}

TEST(GenerateCandidates, ContextOverflow) {
  TableLm model(4, four_token_table, 2, 5);
  ConstantProber zero;
  auto state = model.new_state();
  const auto last = prime(model, state, {1, 2, 3});
  EXPECT_THROW(generate_candidates(model, zero, state, last.logits, 2, 3, false), Error);
  EXPECT_NO_THROW(generate_candidates(model, zero, state, last.logits, 2, 2, false));
}

DecodeParams long_params(TriggerMode mode) {
  DecodeParams p;
  p.trigger_mode = mode;
  p.max_new_tokens = 40;
  p.stop_at_eos = false;
  return p;
}

TEST(DsvdDecode, DisabledTriggerOrZeroProberIsGreedy) {
  Transformer model(testing::lively_weights(toy_config(), 8));
  const auto ens = ProbingEnsemble::random(3, 16, 16, ProbeActivation::kRelu, 3);
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    const auto prompt = testing::random_tokens(rng, 13, 1 + trial % 6);
    const auto greedy = greedy_generate(model, prompt, 40, false);
    EXPECT_EQ(dsvd_decode(model, ens, prompt, long_params(TriggerMode::kDisabled)).tokens, greedy.tokens);
    ConstantProber zero;
    const auto r = dsvd_decode(model, zero, prompt, long_params(TriggerMode::kProbing));
    EXPECT_EQ(r.tokens, greedy.tokens);
    EXPECT_EQ(r.rollback_count(), 0);
  }
}

TEST(DsvdDecode, ScriptedTriggerRollsBackOnceAtPosition) {
  Transformer model(testing::lively_weights(toy_config(), 9));
  const std::vector<TokenId> prompt{3, 1, 4};
  const auto greedy = greedy_generate(model, prompt, 40, false);
  for (int p : {4, 9, 15, 30}) {
    ScriptedProbe script({p});
    auto params = long_params(TriggerMode::kProbing);
    params.penalty_alpha = 0.1;
    const auto r = dsvd_decode(model, script, prompt, params);
    ASSERT_EQ(r.rollback_count(), 1) << "p=" << p;
    EXPECT_EQ(r.rollbacks[0].trigger_position, p);
    const int t0 = std::max(p - params.rollback_window, 3);
    EXPECT_EQ(r.rollbacks[0].target_position, t0);
    ASSERT_EQ(r.tokens.size(), 40u);
    const auto kept = static_cast<std::size_t>(t0 - 3);
    EXPECT_TRUE(std::equal(r.tokens.begin(), r.tokens.begin() + static_cast<std::ptrdiff_t>(kept),
                           greedy.tokens.begin()));
    EXPECT_EQ(script.remaining(), 0u);
  }
}

TEST(DsvdDecode, SpliceCarriesTheBestBeam) {
  Transformer model(testing::lively_weights(toy_config(), 10));
  const std::vector<TokenId> prompt{2, 7};
  ScriptedProbe script({2});  // fires on the prompt's last token
  auto params = long_params(TriggerMode::kProbing);
  params.max_new_tokens = 20;
  params.sample_length = 20;
  params.penalty_mode = PenaltyMode::kPlainLogprob;
  const auto r = dsvd_decode(model, script, prompt, params);
  ConstantProber zero;
  auto state = model.new_state();
  const auto last = prime(model, state, prompt);
  const auto beams = generate_candidates(model, zero, state, last.logits, 5, 20, false);
  EXPECT_EQ(r.tokens, beams[0].candidate.tokens);
  const double greedy_lp = [&] {
    double s = 0;
    for (double x : greedy_generate(model, prompt, 20, false).logprobs) s += x;
    return s;
  }();
  EXPECT_GE(beams[0].candidate.logprob(), greedy_lp - 1e-9);
}

TEST(DsvdDecode, PrefixStabilityWindowDisciplineAndTermination) {
  Transformer model(testing::lively_weights(toy_config(13, 200), 11));
  const auto ens = ProbingEnsemble::random(3, 16, 16, ProbeActivation::kRelu, 5);
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 30; ++trial) {
    const auto prompt = testing::random_tokens(rng, 13, 3);
    auto params = long_params(TriggerMode::kProbing);
    params.trigger_threshold = 0.3 + 0.02 * trial;
    params.rollback_window = 1 + trial % 6;
    params.sample_length = 1 + trial % 5;
    params.beam_width = 1 + trial % 4;
    params.rollback_budget = trial % 7;

    const auto r = dsvd_decode(model, ens, prompt, params);
    EXPECT_LE(r.rollback_count(), params.rollback_budget);
    EXPECT_LE(r.forward_steps, static_cast<long>(prompt.size()) + params.max_new_tokens +
                                   static_cast<long>(params.rollback_budget) *
                                       (params.sample_length + params.rollback_window));
    int frontier = 3;
    for (const auto& rb : r.rollbacks) {
      EXPECT_GE(rb.target_position, frontier);
      EXPECT_GE(rb.target_position, rb.trigger_position - params.rollback_window);
      EXPECT_LT(rb.target_position, rb.trigger_position + 1);
      frontier = rb.target_position + rb.splice_length;
    }
    // After a rollback the next trigger is at least one fresh token later.
    for (std::size_t i = 0; i + 1 < r.triggers.size(); ++i) {
      if (!r.triggers[i].acted) continue;
      const auto& rb = std::find_if(r.rollbacks.begin(), r.rollbacks.end(), [&](const auto& e) {
        return e.trigger_position == r.triggers[i].position;
      });
      ASSERT_NE(rb, r.rollbacks.end());
      EXPECT_GT(r.triggers[i + 1].position, rb->target_position + rb->splice_length);
    }
  }
}

TEST(DsvdDecode, PrefixNeverChangesBeforeTarget) {
  // Replays the decoder event log against a reference sequence.
  Transformer model(testing::lively_weights(toy_config(13, 200), 13));
  std::mt19937_64 rng(14);
  for (int trial = 0; trial < 20; ++trial) {
    const auto prompt = testing::random_tokens(rng, 13, 2);
    std::set<int> fire;
    for (int p = 6; p < 40; p += 4 + trial % 5) fire.insert(p);
    auto params = long_params(TriggerMode::kProbing);
    params.rollback_window = 3;
    params.sample_length = 4;
    params.beam_width = 3;
    ScriptedProbe script(fire);
    auto truncated = params;
    const auto full = dsvd_decode(model, script, prompt, params);
    ASSERT_GT(full.rollback_count(), 0);
    // Decoding again with a budget that stops after rollback i must agree
    // with the full run on every position before rollback i+1's target.
    for (int i = 0; i < full.rollback_count(); ++i) {
      truncated.rollback_budget = i + 1;
      ScriptedProbe again(fire);
      const auto partial = dsvd_decode(model, again, prompt, truncated);
      const std::size_t keep = i + 1 < full.rollback_count()
                                   ? static_cast<std::size_t>(full.rollbacks[static_cast<std::size_t>(i) + 1].target_position - 2)
                                   : full.tokens.size();
      ASSERT_LE(keep, partial.tokens.size());
      EXPECT_TRUE(std::equal(full.tokens.begin(), full.tokens.begin() + static_cast<std::ptrdiff_t>(keep),
                             partial.tokens.begin()))
          << "trial " << trial << " rollback " << i;
    }
  }
}

TEST(DsvdDecode, BudgetZeroRecordsTriggersWithoutActing) {
  Transformer model(testing::lively_weights(toy_config(), 15));
  ScriptedProbe script({5, 8});
  auto params = long_params(TriggerMode::kProbing);
  params.rollback_budget = 0;
  const auto r = dsvd_decode(model, script, {1, 2}, params);
  EXPECT_EQ(r.rollback_count(), 0);
  ASSERT_FALSE(r.triggers.empty());
  EXPECT_FALSE(r.triggers[0].acted);
  EXPECT_EQ(r.tokens, greedy_generate(model, {1, 2}, 40, false).tokens);
}

TEST(DsvdDecode, TopRatioModeUsesLogitsOnly) {
  // Two near-equal top tokens after token 3 trigger the ratio rule.
  TableLm model(5, [](const std::vector<TokenId>& ctx) -> std::vector<double> {
    if (ctx.back() == 3) return {0.05, 0.05, 0.46, 0.0, 0.44};
    return {0.05, 0.05, 0.1, 0.7, 0.1};
  });
  auto params = long_params(TriggerMode::kTopRatio);
  params.max_new_tokens = 6;
  params.rollback_window = 1;
  params.rollback_budget = 1;
  ConstantProber never;
  const auto r = dsvd_decode(model, never, {0}, params);
  ASSERT_EQ(r.rollback_count(), 1);
  EXPECT_EQ(r.triggers[0].position, 2);
  EXPECT_NEAR(r.triggers[0].value, 0.44 / 0.46, 1e-6);
}

TEST(DsvdDecode, StopsAtEosAndMaxTokens) {
  TableLm model(4, [](const std::vector<TokenId>& ctx) -> std::vector<double> {
    if (ctx.size() >= 5) return {0.0, 0.9, 0.05, 0.05};
    return {0.0, 0.05, 0.9, 0.05};
  });
  ConstantProber zero;
  DecodeParams p;
  const auto r = dsvd_decode(model, zero, {0}, p);
  EXPECT_EQ(r.tokens, (std::vector<TokenId>{2, 2, 2, 2}));
  EXPECT_TRUE(r.hit_eos);
  p.max_new_tokens = 2;
  EXPECT_EQ(dsvd_decode(model, zero, {0}, p).tokens.size(), 2u);
}

TEST(DsvdDecode, Errors) {
  Transformer model(testing::lively_weights(toy_config(13, 8), 1));
  const auto wrong_layers = ProbingEnsemble::zeros(2, 16, 4);
  const auto right = ProbingEnsemble::zeros(3, 16, 4);
  EXPECT_THROW(dsvd_decode(model, wrong_layers, {1, 2}, DecodeParams{}), Error);
  EXPECT_THROW(dsvd_decode(model, right, std::vector<TokenId>(9, 1), DecodeParams{}), Error);
  EXPECT_THROW(dsvd_decode(model, right, {}, DecodeParams{}), Error);
  DecodeParams bad;
  bad.trigger_threshold = 1.0;
  EXPECT_THROW(dsvd_decode(model, right, {1}, bad), Error);
  bad = {};
  bad.beam_width = 0;
  EXPECT_THROW(dsvd_decode(model, right, {1}, bad), Error);
  EXPECT_EQ(parse_trigger_mode("top-ratio"), TriggerMode::kTopRatio);
  EXPECT_EQ(parse_penalty_mode("plain-logprob"), PenaltyMode::kPlainLogprob);
  EXPECT_THROW(parse_trigger_mode("sometimes"), Error);
}

// Exhaustive re-ranking: with k = |V|^m the beam holds every continuation,
// so the splice must be the penalized-score argmax over uncached passes.
TEST(DsvdDecode, ExhaustiveRerankingMatchesBruteForce) {
  int checked = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    std::mt19937_64 rng(seed);
    const int vocab = 4 + static_cast<int>(seed % 5);  // 4..8
    const int m = 1 + static_cast<int>(seed % 3);      // 1..3
    Transformer model(testing::lively_weights(toy_config(vocab, 16), seed + 100, 0.7));
    const auto ens = ProbingEnsemble::random(3, 16, 8, ProbeActivation::kRelu, seed + 200);
    const auto prompt = testing::random_tokens(rng, vocab, 3);
    DecodeParams params;
    params.stop_at_eos = false;
    params.trigger_threshold = 1e-12;  // fire on the prompt's last token
    params.rollback_budget = 1;
    params.sample_length = m;
    params.max_new_tokens = m;
    params.beam_width = static_cast<int>(std::pow(vocab, m));
    params.penalty_alpha = 0.5;
    const auto r = dsvd_decode(model, ens, prompt, params);
    ASSERT_EQ(r.rollback_count(), 1);

    const auto best_seq =
        testing::brute_force_continuation(model, ens, prompt, vocab, m, params.penalty_alpha);
    EXPECT_EQ(r.tokens, best_seq) << "seed " << seed;
    ++checked;
  }
  EXPECT_EQ(checked, 50);
}

}  // namespace
}  // namespace dsvd
