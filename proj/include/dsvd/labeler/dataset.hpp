// Copyright 2026 The DSVD Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <mutex>
#include <numeric>
#include <optional>
#include <random>
#include <thread>
#include <vector>

#include "dsvd/common.hpp"
#include "dsvd/labeler/rouge.hpp"
#include "dsvd/labeler/scoring.hpp"
#include "dsvd/lm/generate.hpp"
#include "dsvd/lm/types.hpp"

namespace dsvd {

struct QAPair {
  std::vector<TokenId> question;
  std::vector<TokenId> ground_truth;
};

/// One labeled greedy response. `token_states[i]` holds the hidden states of
/// the step that consumed `response[i]`; `question_states` those of the last
/// question token.
struct LabeledSequence {
  std::size_t source_index = 0;
  ResponseClass cls = ResponseClass::kCorrect;
  double rouge_l = 0.0;
  std::vector<TokenId> question;
  std::vector<TokenId> response;
  std::vector<TokenId> ground_truth;
  std::vector<std::int8_t> labels;
  std::vector<double> scores;  // empty for correct responses
  LayerStates question_states;
  std::vector<LayerStates> token_states;

  bool hallucinated() const { return cls == ResponseClass::kIncorrect; }
};

struct LabeledDataset {
  int layer_count = 0;
  int dim = 0;
  std::vector<LabeledSequence> sequences;

  std::size_t count(ResponseClass c) const {
    return static_cast<std::size_t>(
        std::count_if(sequences.begin(), sequences.end(), [c](const auto& s) { return s.cls == c; }));
  }
};

struct LabelerConfig {
  int max_new_tokens = 50;
  double correct_above = kCorrectAbove;
  double incorrect_below = kIncorrectBelow;
  std::uint64_t seed = 1;
  int threads = 1;
};

struct LabelerStats {
  std::size_t correct = 0;
  std::size_t incorrect = 0;
  std::size_t discarded = 0;
  std::size_t empty_responses = 0;
};

/// Greedy response, Rouge-L class, and (for incorrect answers) token labels
/// of one QA pair. Returns nullopt for an empty response; discarded
/// responses come back with only the class and Rouge-L filled in.
template <CausalLm Model>
std::optional<LabeledSequence> label_pair(const Model& model, const QAPair& pair, std::size_t index,
                                          const LabelerConfig& config) {
  require(!pair.question.empty() && !pair.ground_truth.empty(), ErrorCode::kEmptyInput,
          "QA pair " + std::to_string(index) + " has an empty side");
  auto trace = greedy_generate(model, pair.question, config.max_new_tokens);
  if (trace.tokens.empty()) return std::nullopt;
  LabeledSequence seq;
  seq.source_index = index;
  seq.rouge_l = rouge_l_f1(trace.tokens, pair.ground_truth);
  seq.cls = classify_response(seq.rouge_l, config.correct_above, config.incorrect_below);
  if (seq.cls == ResponseClass::kDiscard) return seq;
  seq.question = pair.question;
  seq.response = trace.tokens;
  seq.ground_truth = pair.ground_truth;
  if (seq.hallucinated()) {
    seq.scores = hallucination_scores(model, pair.question, seq.response, pair.ground_truth);
    seq.labels = assign_labels(seq.scores);
  } else {
    seq.labels.assign(seq.response.size(), kLabelClean);
  }
  seq.question_states = std::move(trace.prompt_last.states);
  seq.token_states.reserve(trace.steps.size());
  for (auto& s : trace.steps) seq.token_states.push_back(std::move(s.states));
  return seq;
}

/// Keeps every sequence of the minority class and a seeded uniform sample of
/// equal size from the majority class. Source order is preserved.
inline std::vector<LabeledSequence> balance_classes(std::vector<LabeledSequence> sequences, std::uint64_t seed) {
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < sequences.size(); ++i) (sequences[i].hallucinated() ? pos : neg).push_back(i);
  require(!pos.empty() && !neg.empty(), ErrorCode::kSingleClass,
          "need both classes after filtering (correct " + std::to_string(neg.size()) + ", hallucinated " +
              std::to_string(pos.size()) + ")");
  auto& major = pos.size() > neg.size() ? pos : neg;
  const std::size_t keep = std::min(pos.size(), neg.size());
  std::mt19937_64 rng(seed);
  std::shuffle(major.begin(), major.end(), rng);
  major.resize(keep);
  std::vector<std::size_t> kept(pos);
  kept.insert(kept.end(), neg.begin(), neg.end());
  std::sort(kept.begin(), kept.end());
  std::vector<LabeledSequence> out;
  out.reserve(kept.size());
  for (std::size_t i : kept) out.push_back(std::move(sequences[i]));
  return out;
}

/// Generates, filters, labels and balances. Work is split across
/// `config.threads` workers, each with its own decoder states.
template <CausalLm Model>
LabeledDataset build_dataset(const Model& model, const std::vector<QAPair>& pairs, const LabelerConfig& config,
                             LabelerStats* stats = nullptr) {
  require(!pairs.empty(), ErrorCode::kEmptyInput, "no QA pairs");
  std::vector<std::optional<LabeledSequence>> results(pairs.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto worker = [&] {
    for (std::size_t i = next++; i < pairs.size(); i = next++) {
      try {
        results[i] = label_pair(model, pairs[i], i, config);
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
        next = pairs.size();
      }
    }
  };
  const int threads = std::max(1, std::min<int>(config.threads, static_cast<int>(pairs.size())));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  LabelerStats local;
  std::vector<LabeledSequence> kept;
  for (auto& r : results) {
    if (!r) {
      ++local.empty_responses;
      continue;
    }
    switch (r->cls) {
      case ResponseClass::kCorrect: ++local.correct; break;
      case ResponseClass::kIncorrect: ++local.incorrect; break;
      case ResponseClass::kDiscard: ++local.discarded; continue;
    }
    kept.push_back(std::move(*r));
  }
  if (stats) *stats = local;

  LabeledDataset ds;
  ds.layer_count = model.state_layers();
  ds.dim = model.model_dim();
  ds.sequences = balance_classes(std::move(kept), config.seed);
  return ds;
}

struct DatasetSplit {
  LabeledDataset train;
  LabeledDataset validation;
};

/// Sequence-level split stratified by class. Each class contributes
/// round(fraction * count) sequences to validation, at least one when the
/// class has two or more members.
inline DatasetSplit split_dataset(const LabeledDataset& ds, double validation_fraction, std::uint64_t seed) {
  require(validation_fraction >= 0.0 && validation_fraction < 1.0, ErrorCode::kInvalidArgument,
          "validation fraction must be in [0, 1)");
  DatasetSplit out;
  out.train.layer_count = out.validation.layer_count = ds.layer_count;
  out.train.dim = out.validation.dim = ds.dim;
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < ds.sequences.size(); ++i) (ds.sequences[i].hallucinated() ? pos : neg).push_back(i);
  std::mt19937_64 rng(seed);
  std::vector<bool> is_val(ds.sequences.size(), false);
  for (auto* group : {&pos, &neg}) {
    std::shuffle(group->begin(), group->end(), rng);
    auto n = static_cast<std::size_t>(std::lround(validation_fraction * static_cast<double>(group->size())));
    if (validation_fraction > 0.0 && n == 0 && group->size() >= 2) n = 1;
    for (std::size_t i = 0; i < n; ++i) is_val[(*group)[i]] = true;
  }
  for (std::size_t i = 0; i < ds.sequences.size(); ++i)
    (is_val[i] ? out.validation : out.train).sequences.push_back(ds.sequences[i]);
  return out;
}

}  // namespace dsvd
