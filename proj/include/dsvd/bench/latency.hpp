// Copyright 2026 The DSVD Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "dsvd/common.hpp"
#include "dsvd/decoder/decode.hpp"
#include "dsvd/lm/generate.hpp"
#include "dsvd/prober/ensemble.hpp"

namespace dsvd {

struct LatencyRecord {
  std::string model_tag;
  std::string mode;  // "greedy" or "dsvd"
  int rollbacks = 0;
  std::size_t prompts = 0;
  double ms_per_token = 0.0;
  double percent_over_greedy = 0.0;
};

struct LatencyBenchConfig {
  std::string model_tag = "toy";
  std::vector<int> rollback_counts{0, 5, 10};
  int repetitions = 10;
  int warmup = 1;
  std::size_t min_prompts = 3;
  DecodeParams params = [] {
    DecodeParams p;
    p.max_new_tokens = 1280;
    p.stop_at_eos = false;
    return p;
  }();
};

/// Evaluates the ensemble on every step like the real detector but fires
/// only at scripted positions, so the rollback count is fixed in advance.
class ScriptedEnsembleProbe {
 public:
  ScriptedEnsembleProbe(const ProbingEnsemble& e, std::set<int> positions) : inner_(e), script_(std::move(positions)) {}
  double operator()(const StepOutput& out) {
    sink_ += inner_(out);
    return script_(out);
  }
  std::vector<double> batch(const std::vector<StepOutput>& outs) {
    std::vector<double> z;
    for (double v : inner_.batch(outs)) sink_ += v;
    for (const auto& o : outs) z.push_back(script_(o));
    return z;
  }
  std::size_t remaining() const { return script_.remaining(); }
  double sink() const { return sink_; }

 private:
  EnsembleProber inner_;
  ScriptedProbe script_;
  double sink_ = 0.0;
};

/// `n` trigger positions spread evenly over the generation. A rollback moves
/// the frontier to t - r + m, so spacing below m would clamp the next target
/// to the frontier and let its splice run past the position after it.
inline std::set<int> scripted_positions(int prompt_length, const DecodeParams& p, int n) {
  std::set<int> out;
  const int spacing = p.max_new_tokens / (n + 1);
  require(n == 0 || spacing >= p.sample_length, ErrorCode::kInvalidArgument,
          std::to_string(n) + " rollbacks do not fit in " + std::to_string(p.max_new_tokens) + " tokens");
  for (int j = 1; j <= n; ++j) out.insert(prompt_length + j * spacing);
  return out;
}

namespace latency_detail {

inline double median(std::vector<double> v) {
  require(!v.empty(), ErrorCode::kEmptyInput, "median of nothing");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace latency_detail

/// Per-prompt median ms/token over `repetitions` timed runs, for plain greedy
/// decoding and for DSVD with each scripted rollback count. Each repetition
/// runs greedy and every DSVD mode back to back on the same prompt, in an
/// order that rotates between repetitions, so drift in machine speed hits all
/// modes alike. `warmup` untimed greedy
/// and DSVD runs on the first prompt precede all timing. Prompts are grouped
/// by realized rollback count; each group reports the median ms/token over
/// its prompts. The overhead is taken per repetition against that
/// repetition's greedy run, then reduced by median over repetitions and over
/// prompts. Host speed drifts over minutes, so a ratio of seconds-apart runs
/// is steadier than a ratio of medians.
/// Single-threaded.
template <CausalLm Model>
std::vector<LatencyRecord> bench_latency(const Model& model, const ProbingEnsemble& ensemble,
                                         const std::vector<std::vector<TokenId>>& prompts,
                                         const LatencyBenchConfig& config) {
  using Clock = std::chrono::steady_clock;
  using latency_detail::median;
  require(prompts.size() >= config.min_prompts, ErrorCode::kInvalidArgument,
          "need at least " + std::to_string(config.min_prompts) + " prompts");
  require(config.repetitions >= 1 && config.warmup >= 0, ErrorCode::kInvalidArgument, "bad repetition counts");
  auto params = config.params;
  params.trigger_mode = TriggerMode::kProbing;
  params.validate();
  const std::size_t modes = config.rollback_counts.size();
  std::vector<DecodeParams> mode_params(modes, params);
  for (std::size_t j = 0; j < modes; ++j)
    mode_params[j].rollback_budget = std::max(params.rollback_budget, config.rollback_counts[j]);

  auto run_greedy = [&](const std::vector<TokenId>& prompt) {
    const auto start = Clock::now();
    const auto trace = greedy_generate(model, prompt, params.max_new_tokens, params.stop_at_eos);
    const double ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
    require(!trace.tokens.empty(), ErrorCode::kEmptyInput, "greedy produced no tokens");
    return ms / static_cast<double>(trace.tokens.size());
  };
  auto run_dsvd = [&](const std::vector<TokenId>& prompt, std::size_t j) {
    ScriptedEnsembleProbe probe(
        ensemble, scripted_positions(static_cast<int>(prompt.size()), mode_params[j], config.rollback_counts[j]));
    const auto report = dsvd_decode(model, probe, prompt, mode_params[j]);
    require(!report.tokens.empty(), ErrorCode::kEmptyInput, "decode produced no tokens");
    return std::pair{report.total_ms / static_cast<double>(report.tokens.size()), report.rollback_count()};
  };

  for (int w = 0; w < config.warmup; ++w) {
    run_greedy(prompts[0]);
    for (std::size_t j = 0; j < modes; ++j) run_dsvd(prompts[0], j);
  }

  std::vector<double> greedy(prompts.size());
  struct Entry {
    std::size_t prompt;
    double ms;     // median ms/token
    double ratio;  // median over repetitions of ms/token over the same repetition's greedy
  };
  std::map<int, std::vector<Entry>> buckets;  // keyed by realized rollback count
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    std::vector<double> greedy_runs;
    std::vector<std::vector<double>> runs(modes);
    std::vector<int> realized(modes, -1);
    for (int rep = 0; rep < config.repetitions; ++rep) {
      // Slot `modes` is greedy. The order rotates each repetition.
      for (std::size_t s = 0; s <= modes; ++s) {
        const std::size_t j = (s + static_cast<std::size_t>(rep)) % (modes + 1);
        if (j == modes) {
          greedy_runs.push_back(run_greedy(prompts[i]));
          continue;
        }
        const auto [ms, rollbacks] = run_dsvd(prompts[i], j);
        require(realized[j] < 0 || realized[j] == rollbacks, ErrorCode::kInvalidArgument,
                "rollback count changed between repetitions");
        realized[j] = rollbacks;
        runs[j].push_back(ms);
      }
    }
    greedy[i] = median(greedy_runs);
    for (std::size_t j = 0; j < modes; ++j) {
      auto& bucket = buckets[realized[j]];
      require(std::none_of(bucket.begin(), bucket.end(), [i](const Entry& e) { return e.prompt == i; }),
              ErrorCode::kInvalidArgument,
              "two scripted modes realized " + std::to_string(realized[j]) + " rollbacks on one prompt");
      std::vector<double> ratios;
      for (int rep = 0; rep < config.repetitions; ++rep) ratios.push_back(runs[j][rep] / greedy_runs[rep]);
      bucket.push_back({i, median(runs[j]), median(ratios)});
    }
  }

  std::vector<LatencyRecord> out;
  out.push_back({config.model_tag, "greedy", 0, prompts.size(), median(greedy), 0.0});
  for (const auto& [rollbacks, entries] : buckets) {
    require(entries.size() >= config.min_prompts, ErrorCode::kInvalidArgument,
            "rollback bucket " + std::to_string(rollbacks) + " has only " + std::to_string(entries.size()) +
                " prompts");
    std::vector<double> mine, ratios;
    for (const auto& e : entries) {
      mine.push_back(e.ms);
      ratios.push_back(e.ratio);
    }
    out.push_back({config.model_tag, "dsvd", rollbacks, entries.size(), median(mine), 100.0 * (median(ratios) - 1.0)});
  }
  return out;
}

inline void write_latency_csv(const std::vector<LatencyRecord>& records, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorCode::kIo, "cannot write " + path.string());
  out << "model,mode,rollbacks,prompts,ms_per_token,percent_over_greedy\n";
  for (const auto& r : records)
    out << r.model_tag << ',' << r.mode << ',' << r.rollbacks << ',' << r.prompts << ',' << r.ms_per_token << ','
        << r.percent_over_greedy << '\n';
}

}  // namespace dsvd
