// Copyright 2026 The DSVD Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>

#include "dsvd/labeler/dataset.hpp"
#include "dsvd/labeler/dataset_io.hpp"
#include "dsvd/labeler/rouge.hpp"
#include "dsvd/labeler/scoring.hpp"
#include "dsvd/lm/train.hpp"
#include "dsvd/lm/transformer.hpp"
#include "dsvd/vocabulary.hpp"
#include "support/oracles.hpp"
#include "support/table_lm.hpp"
#include "support/test_util.hpp"

namespace dsvd {
namespace {

using testing::TableLm;

using testing::lcs_oracle;

TEST(RougeL, IdenticalAndDisjoint) {
  const std::vector<int> a{1, 2, 3}, b{4, 5};
  EXPECT_DOUBLE_EQ(rouge_l_f1(a, a), 1.0);
  EXPECT_DOUBLE_EQ(rouge_l_f1(a, b), 0.0);
}

TEST(RougeL, SkippedMiddleToken) {
  // a b c d vs a c d: LCS 3, P 3/4, R 1, F1 = 6/7.
  const std::vector<int> cand{0, 1, 2, 3}, ref{0, 2, 3};
  EXPECT_EQ(lcs_oracle(cand, ref), 3u);
  EXPECT_NEAR(rouge_l_f1(cand, ref), 0.8571428571428571, 1e-12);
}

TEST(RougeL, EmptyInputIsAnError) {
  const std::vector<int> a{1}, empty;
  EXPECT_THROW(rouge_l_f1(a, empty), Error);
  EXPECT_THROW(rouge_l_f1(empty, a), Error);
}

TEST(RougeL, MatchesRecursiveOracleAndIsSymmetric) {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> len(1, 20), vocab(2, 10);
  for (int trial = 0; trial < 1000; ++trial) {
    const int v = vocab(rng);
    std::uniform_int_distribution<int> tok(0, v - 1);
    std::vector<int> a(static_cast<std::size_t>(len(rng))), b(static_cast<std::size_t>(len(rng)));
    for (auto& x : a) x = tok(rng);
    for (auto& x : b) x = tok(rng);
    const auto lcs = lcs_oracle(a, b);
    ASSERT_EQ(lcs_length(std::span<const int>(a), std::span<const int>(b)), lcs);
    const double p = static_cast<double>(lcs) / static_cast<double>(a.size());
    const double r = static_cast<double>(lcs) / static_cast<double>(b.size());
    const double expected = lcs == 0 ? 0.0 : 2 * p * r / (p + r);
    ASSERT_DOUBLE_EQ(rouge_l_f1(a, b), expected);
    ASSERT_DOUBLE_EQ(rouge_l_f1(a, b), rouge_l_f1(b, a));
  }
}

TEST(ClassifyResponse, Thresholds) {
  EXPECT_EQ(classify_response(0.9), ResponseClass::kCorrect);
  EXPECT_EQ(classify_response(0.1), ResponseClass::kIncorrect);
  EXPECT_EQ(classify_response(0.5), ResponseClass::kDiscard);
  EXPECT_EQ(classify_response(0.8), ResponseClass::kDiscard);
  EXPECT_EQ(classify_response(0.2), ResponseClass::kDiscard);
  EXPECT_EQ(classify_response(1.0), ResponseClass::kCorrect);
  EXPECT_EQ(classify_response(0.0), ResponseClass::kIncorrect);
}

// Three-token vocabulary with an explicit, context-dependent table.
std::vector<double> three_token_table(const std::vector<TokenId>& ctx) {
  const int last = ctx.back();
  const int n = static_cast<int>(ctx.size());
  switch ((last + n) % 3) {
    case 0: return {0.2, 0.5, 0.3};
    case 1: return {0.6, 0.1, 0.3};
    default: return {0.25, 0.25, 0.5};
  }
}

TEST(HallucinationScores, MatchHandSummedTableLogs) {
  TableLm model(3, three_token_table);
  const std::vector<TokenId> question{2, 0};
  const std::vector<TokenId> response{1, 1, 2, 0};
  const std::vector<TokenId> truth{2, 1, 0};
  const auto scores = hallucination_scores(model, question, response, truth);
  ASSERT_EQ(scores.size(), response.size());
  for (std::size_t i = 0; i < response.size(); ++i) {
    std::vector<TokenId> ctx(question);
    ctx.insert(ctx.end(), response.begin(), response.begin() + static_cast<std::ptrdiff_t>(i));
    double expected = 0.0;
    for (TokenId g : truth) {
      expected += std::log(three_token_table(ctx)[static_cast<std::size_t>(g)]);
      ctx.push_back(g);
    }
    EXPECT_NEAR(scores[i], expected, 1e-6) << "position " << i;
  }
}

TEST(HallucinationScores, SingleTokenTruthIsOneLogProb) {
  TableLm model(3, three_token_table);
  const std::vector<TokenId> question{1};
  const std::vector<TokenId> response{0, 2};
  const auto scores = hallucination_scores(model, question, response, {2});
  EXPECT_NEAR(scores[0], std::log(three_token_table({1})[2]), 1e-6);
  EXPECT_NEAR(scores[1], std::log(three_token_table({1, 0})[2]), 1e-6);
}

TEST(HallucinationScores, IgnoresResponseTokensAtOrAfterPosition) {
  TransformerConfig cfg;
  cfg.vocab_size = 9;
  cfg.n_layers = 2;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.max_context = 32;
  Transformer model(testing::lively_weights(cfg, 5));
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto q = testing::random_tokens(rng, 9, 3);
    const auto g = testing::random_tokens(rng, 9, 3);
    auto x = testing::random_tokens(rng, 9, 8);
    const auto base = hallucination_scores(model, q, x, g);
    const std::size_t i = static_cast<std::size_t>(trial % 8);
    for (std::size_t j = i; j < x.size(); ++j) x[j] = (x[j] + 1 + trial) % 9;
    const auto changed = hallucination_scores(model, q, x, g);
    for (std::size_t k = 0; k <= i; ++k) EXPECT_DOUBLE_EQ(base[k], changed[k]) << "k=" << k << " i=" << i;
  }
}

TEST(HallucinationScores, ContextOverflowAndEmptyInput) {
  TableLm model(3, three_token_table, 2, 5);
  EXPECT_THROW(hallucination_scores(model, {0, 1}, {0, 1, 2}, {0, 1, 2}), Error);
  EXPECT_NO_THROW(hallucination_scores(model, {0, 1}, {0, 1, 2}, {0, 1}));
  try {
    hallucination_scores(model, {0}, {}, {1});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyInput);
  }
}

TEST(AssignLabels, Examples) {
  using L = std::vector<std::int8_t>;
  EXPECT_EQ(assign_labels({5.0, 1.0, 2.0, 0.0}), (L{1, -1, -1, -1}));
  EXPECT_EQ(assign_labels({1.0, 2.0, 3.0, 4.0, 5.0}), (L{0, 0, 0, 0, 1}));
  EXPECT_EQ(assign_labels({-3.0, -1.0, -2.0, -1.0}), (L{0, 1, -1, -1}));
  EXPECT_THROW(assign_labels({}), Error);
}

TEST(AssignLabels, ShapeInvariantOnRandomScores) {
  std::mt19937_64 rng(23);
  std::normal_distribution<double> n(0, 1);
  std::uniform_int_distribution<int> len(1, 30);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> s(static_cast<std::size_t>(len(rng)));
    for (auto& v : s) v = std::round(n(rng) * 2) / 2;  // coarse values force ties
    const auto labels = assign_labels(s);
    ASSERT_TRUE(valid_label_shape(labels));
    ASSERT_EQ(std::count(labels.begin(), labels.end(), kLabelHallucinated), 1);
    const auto first_max = std::max_element(s.begin(), s.end()) - s.begin();
    ASSERT_EQ(labels[static_cast<std::size_t>(first_max)], kLabelHallucinated);
  }
  EXPECT_TRUE(valid_label_shape({0, 0, 0}));
  EXPECT_FALSE(valid_label_shape({0, -1, 1}));
  EXPECT_FALSE(valid_label_shape({1, 0}));
}

// A tiny transformer trained on "what <entity> ? rebadged version of the
// <brand> <model>" facts. The answer to score is the brand alone.
struct BrandWorld {
  Vocabulary vocab;
  std::vector<TokenId> entities, brands, models;
  std::vector<std::size_t> brand_of;
  std::vector<std::vector<TokenId>> corpus;
  std::optional<Transformer> model;

  const Transformer& lm() const { return *model; }

  std::vector<TokenId> question(std::size_t e) const {
    return {vocab.bos(), vocab.id("what"), entities[e], vocab.id("?")};
  }
  std::vector<TokenId> preamble() const {
    return {vocab.id("rebadged"), vocab.id("version"), vocab.id("of"), vocab.id("the")};
  }
  /// The full true answer, or a reference sharing no token with it.
  std::vector<TokenId> answer(std::size_t e, bool disjoint) const {
    if (disjoint) return {models[(e + 1) % models.size()]};
    auto a = preamble();
    a.push_back(brands[brand_of[e]]);
    a.push_back(models[e]);
    return a;
  }
};

const BrandWorld& brand_world() {
  static const BrandWorld world = [] {
    BrandWorld w;
    for (const char* s : {"what", "?", "rebadged", "version", "of", "the"}) w.vocab.add(s);
    for (const char* s : {"toyota", "suzuki", "honda", "mazda", "nissan", "subaru"}) w.brands.push_back(w.vocab.add(s));
    for (int i = 0; i < 50; ++i) {
      w.entities.push_back(w.vocab.add("entity" + std::to_string(i)));
      w.models.push_back(w.vocab.add("model" + std::to_string(i)));
      w.brand_of.push_back(static_cast<std::size_t>(i) % w.brands.size());
    }
    for (std::size_t e = 0; e < w.entities.size(); ++e) {
      auto s = w.question(e);
      for (TokenId t : w.preamble()) s.push_back(t);
      s.push_back(w.brands[w.brand_of[e]]);
      s.push_back(w.models[e]);
      s.push_back(w.vocab.eos());
      w.corpus.push_back(s);
    }
    TransformerConfig cfg;
    cfg.vocab_size = w.vocab.size();
    cfg.n_layers = 2;
    cfg.d_model = 32;
    cfg.n_heads = 2;
    cfg.max_context = 16;
    LmTrainConfig tc;
    tc.epochs = 120;
    tc.batch_size = 16;
    tc.lr = 1e-2;
    tc.seed = 7;
    w.model.emplace(train_reference_lm(w.corpus, cfg, tc).weights);
    return w;
  }();
  return world;
}

TEST(PlantedDeviation, ScoreArgmaxFindsTheWrongToken) {
  const auto& w = brand_world();
  int hits = 0;
  for (std::size_t e = 0; e < 50; ++e) {
    auto response = w.preamble();
    const std::size_t wrong = (w.brand_of[e] + 1 + e % 5) % w.brands.size();
    response.push_back(w.brands[wrong]);
    response.push_back(w.models[(e + 7) % 50]);
    const auto scores = hallucination_scores(w.lm(), w.question(e), response, {w.brands[w.brand_of[e]]});
    const auto at = std::max_element(scores.begin(), scores.end()) - scores.begin();
    if (at >= 3 && at <= 5) ++hits;
  }
  RecordProperty("hits_of_50", hits);
  EXPECT_GE(hits, 40);
  EXPECT_EQ(hits, 50);  // recorded rate on this toy model
}

TEST(PlantedDeviation, RebadgedSuzukiAnchor) {
  const auto& w = brand_world();
  std::size_t e = 0;
  while (w.brands[w.brand_of[e]] != w.vocab.id("toyota")) ++e;
  std::vector<TokenId> response = w.preamble();
  response.push_back(w.vocab.id("suzuki"));
  response.push_back(w.models[(e + 1) % 50]);
  const auto labels = assign_labels(hallucination_scores(w.lm(), w.question(e), response, {w.vocab.id("toyota")}));
  EXPECT_EQ(labels, (std::vector<std::int8_t>{0, 0, 0, 0, 1, -1}));
}

// Question [0] gets answer [2]; truth decides correct vs hallucinated.
TableLm answer_two_lm() {
  return TableLm(4, [](const std::vector<TokenId>& ctx) -> std::vector<double> {
    if (ctx.back() == 0) return {0.0, 0.05, 0.9, 0.05};
    return {0.0, 0.9, 0.05, 0.05};
  });
}

std::vector<QAPair> mixed_pairs(int correct, int incorrect) {
  std::vector<QAPair> pairs;
  for (int i = 0; i < correct + incorrect; ++i) pairs.push_back({{0}, {i < correct ? 2 : 3}});
  return pairs;
}

TEST(BuildDataset, AllCorrectIsSingleClassError) {
  try {
    build_dataset(answer_two_lm(), mixed_pairs(5, 0), {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kSingleClass);
  }
  EXPECT_THROW(build_dataset(answer_two_lm(), {}, {}), Error);
}

TEST(BuildDataset, BalancesThirtyTenToTenTen) {
  LabelerStats stats;
  const auto ds = build_dataset(answer_two_lm(), mixed_pairs(30, 10), {}, &stats);
  EXPECT_EQ(stats.correct, 30u);
  EXPECT_EQ(stats.incorrect, 10u);
  EXPECT_EQ(ds.count(ResponseClass::kCorrect), 10u);
  EXPECT_EQ(ds.count(ResponseClass::kIncorrect), 10u);
  for (const auto& s : ds.sequences) {
    EXPECT_EQ(s.response, std::vector<TokenId>{2});
    EXPECT_EQ(s.token_states.size(), 1u);
    EXPECT_EQ(s.labels, std::vector<std::int8_t>{static_cast<std::int8_t>(s.hallucinated() ? 1 : 0)});
  }
  // Different seeds pick different majority samples; same seed is stable.
  LabelerConfig other;
  other.seed = 99;
  const auto again = build_dataset(answer_two_lm(), mixed_pairs(30, 10), {});
  const auto reseeded = build_dataset(answer_two_lm(), mixed_pairs(30, 10), other);
  auto indices = [](const LabeledDataset& d) {
    std::vector<std::size_t> out;
    for (const auto& s : d.sequences) out.push_back(s.source_index);
    return out;
  };
  EXPECT_EQ(indices(ds), indices(again));
  EXPECT_NE(indices(ds), indices(reseeded));
}

TEST(BuildDataset, ThreadedMatchesSerial) {
  const auto& w = brand_world();
  std::vector<QAPair> pairs;
  for (std::size_t e = 0; e < 50; ++e) pairs.push_back({w.question(e), w.answer(e, e % 3 == 0)});
  LabelerConfig serial, threaded;
  threaded.threads = 4;
  const auto a = build_dataset(w.lm(), pairs, serial);
  const auto b = build_dataset(w.lm(), pairs, threaded);
  ASSERT_EQ(a.sequences.size(), b.sequences.size());
  for (std::size_t i = 0; i < a.sequences.size(); ++i) {
    EXPECT_EQ(a.sequences[i].source_index, b.sequences[i].source_index);
    EXPECT_EQ(a.sequences[i].labels, b.sequences[i].labels);
    EXPECT_EQ(a.sequences[i].scores, b.sequences[i].scores);
  }
}

TEST(SplitDataset, StratifiedNinetyTen) {
  const auto ds = build_dataset(answer_two_lm(), mixed_pairs(40, 40), {});
  const auto split = split_dataset(ds, 0.1, 3);
  EXPECT_EQ(split.validation.count(ResponseClass::kCorrect), 4u);
  EXPECT_EQ(split.validation.count(ResponseClass::kIncorrect), 4u);
  EXPECT_EQ(split.train.sequences.size(), 72u);
}

TEST(DatasetIo, RoundTrip) {
  const auto& w = brand_world();
  std::vector<QAPair> pairs;
  for (std::size_t e = 0; e < 12; ++e) pairs.push_back({w.question(e), w.answer(e, e % 2 == 1)});
  const auto ds = build_dataset(w.lm(), pairs, {});
  const auto path = std::filesystem::temp_directory_path() / "dsvd_labeler_roundtrip.jsonl";
  save_dataset(ds, path);
  const auto back = load_dataset(path);
  ASSERT_EQ(back.sequences.size(), ds.sequences.size());
  EXPECT_EQ(back.layer_count, ds.layer_count);
  EXPECT_EQ(back.dim, ds.dim);
  for (std::size_t i = 0; i < ds.sequences.size(); ++i) {
    const auto& a = ds.sequences[i];
    const auto& b = back.sequences[i];
    EXPECT_EQ(a.cls, b.cls);
    EXPECT_EQ(a.response, b.response);
    EXPECT_EQ(a.labels, b.labels);
    EXPECT_EQ(a.scores, b.scores);
    EXPECT_EQ(a.question_states.rows, b.question_states.rows);
    ASSERT_EQ(a.token_states.size(), b.token_states.size());
    for (std::size_t t = 0; t < a.token_states.size(); ++t) EXPECT_EQ(a.token_states[t].rows, b.token_states[t].rows);
  }
  std::filesystem::remove(path);
  std::filesystem::remove(dataset_sidecar(path));
}

}  // namespace
}  // namespace dsvd
