// Copyright 2026 The DSVD Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dsvd/bench/synthetic_task.hpp"
#include "dsvd/common.hpp"
#include "dsvd/decoder/decode.hpp"
#include "dsvd/labeler/dataset.hpp"
#include "dsvd/labeler/dataset_io.hpp"
#include "dsvd/lm/generate.hpp"
#include "dsvd/lm/train.hpp"
#include "dsvd/lm/transformer.hpp"
#include "dsvd/lm/weights.hpp"
#include "dsvd/prober/ensemble.hpp"
#include "dsvd/prober/train.hpp"

namespace dsvd {

/// Everything run_pipeline needs. `seed` replaces the seeds of the task, LM
/// training, labeler and prober training.
struct PipelineConfig {
  std::filesystem::path data_dir = "dsvd-artifacts";
  std::uint64_t seed = 1;
  SyntheticQATask task = [] {
    SyntheticQATask t;
    t.entities = 2000;  // at 400 the labeled sets hold ~80 sequences and held-out AUROC is mostly noise
    return t;
  }();
  TransformerConfig lm = [] {
    TransformerConfig c;
    c.n_layers = 2;
    c.d_model = 48;
    c.n_heads = 2;
    c.max_context = 16;
    return c;
  }();
  LmTrainConfig lm_train = [] {
    LmTrainConfig c;
    c.epochs = 100;
    c.lr = 1e-2;
    return c;
  }();
  double label_fraction = 0.5;  // leading share of QA pairs used for labels; the rest are held out
  LabelerConfig labeler;
  double validation_fraction = 0.1;
  ProbeTrainConfig probe;
  bool layer_sweep = true;  // also train and score one head per layer
  DecodeParams decode;

  /// Copy with `seed` pushed into every component.
  PipelineConfig seeded() const {
    auto c = *this;
    c.task.seed = c.lm_train.seed = c.labeler.seed = c.probe.seed = seed;
    return c;
  }
};

enum class Stage : std::uint8_t { kCorpus, kLm, kLabels, kProber, kEval };

inline constexpr Stage kStages[] = {Stage::kCorpus, Stage::kLm, Stage::kLabels, Stage::kProber, Stage::kEval};

inline std::string_view stage_name(Stage s) {
  switch (s) {
    case Stage::kCorpus: return "gen-corpus";
    case Stage::kLm: return "train-lm";
    case Stage::kLabels: return "build-labels";
    case Stage::kProber: return "train-prober";
    case Stage::kEval: return "decode-eval";
  }
  return "?";
}

namespace pipeline_detail {

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline long long parse_int(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  long long out = 0;
  try {
    out = std::stoll(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  require(used == v.size() && !v.empty(), ErrorCode::kFormat, key + ": expected an integer, got '" + v + "'");
  return out;
}

inline double parse_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  require(used == v.size() && !v.empty(), ErrorCode::kFormat, key + ": expected a number, got '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  throw Error(ErrorCode::kFormat, key + ": expected true or false, got '" + v + "'");
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

struct Key {
  std::string name;
  Stage stage;
  std::function<std::string(const PipelineConfig&)> get;
  std::function<void(PipelineConfig&, const std::string&)> set;
};

template <class F>
Key int_key(std::string name, Stage s, F field) {
  return {name, s, [field](const PipelineConfig& c) { return std::to_string(field(const_cast<PipelineConfig&>(c))); },
          [field, name](PipelineConfig& c, const std::string& v) {
            field(c) = static_cast<std::remove_reference_t<decltype(field(c))>>(parse_int(name, v));
          }};
}

template <class F>
Key double_key(std::string name, Stage s, F field) {
  return {name, s, [field](const PipelineConfig& c) { return format_double(field(const_cast<PipelineConfig&>(c))); },
          [field, name](PipelineConfig& c, const std::string& v) { field(c) = parse_double(name, v); }};
}

inline const std::vector<Key>& keys() {
  static const std::vector<Key> table = [] {
    using C = PipelineConfig;
    const auto kC = Stage::kCorpus, kL = Stage::kLm, kB = Stage::kLabels, kP = Stage::kProber, kE = Stage::kEval;
    std::vector<Key> k;
    k.push_back(int_key("seed", kC, [](C& c) -> auto& { return c.seed; }));
    k.push_back(int_key("entities", kC, [](C& c) -> auto& { return c.task.entities; }));
    k.push_back(int_key("regions", kC, [](C& c) -> auto& { return c.task.regions; }));
    k.push_back(int_key("cities", kC, [](C& c) -> auto& { return c.task.cities; }));
    k.push_back(int_key("districts", kC, [](C& c) -> auto& { return c.task.districts; }));
    k.push_back(double_key("corruption_rate", kC, [](C& c) -> auto& { return c.task.corruption_rate; }));
    k.push_back(double_key("majority_wrong_rate", kC, [](C& c) -> auto& { return c.task.majority_wrong_rate; }));
    k.push_back(int_key("clean_copies", kC, [](C& c) -> auto& { return c.task.clean_copies; }));
    k.push_back(int_key("corrupted_copies", kC, [](C& c) -> auto& { return c.task.corrupted_copies; }));

    k.push_back(int_key("n_layers", kL, [](C& c) -> auto& { return c.lm.n_layers; }));
    k.push_back(int_key("d_model", kL, [](C& c) -> auto& { return c.lm.d_model; }));
    k.push_back(int_key("n_heads", kL, [](C& c) -> auto& { return c.lm.n_heads; }));
    k.push_back(int_key("d_ff", kL, [](C& c) -> auto& { return c.lm.d_ff; }));
    k.push_back(int_key("max_context", kL, [](C& c) -> auto& { return c.lm.max_context; }));
    k.push_back(int_key("lm_epochs", kL, [](C& c) -> auto& { return c.lm_train.epochs; }));
    k.push_back(int_key("lm_batch_size", kL, [](C& c) -> auto& { return c.lm_train.batch_size; }));
    k.push_back(double_key("lm_lr", kL, [](C& c) -> auto& { return c.lm_train.lr; }));
    k.push_back(double_key("lm_weight_decay", kL, [](C& c) -> auto& { return c.lm_train.weight_decay; }));

    k.push_back(double_key("label_fraction", kB, [](C& c) -> auto& { return c.label_fraction; }));
    k.push_back(int_key("label_max_new_tokens", kB, [](C& c) -> auto& { return c.labeler.max_new_tokens; }));
    k.push_back(double_key("correct_above", kB, [](C& c) -> auto& { return c.labeler.correct_above; }));
    k.push_back(double_key("incorrect_below", kB, [](C& c) -> auto& { return c.labeler.incorrect_below; }));

    k.push_back(double_key("validation_fraction", kP, [](C& c) -> auto& { return c.validation_fraction; }));
    k.push_back(double_key("learning_rate", kP, [](C& c) -> auto& { return c.probe.learning_rate; }));
    k.push_back(int_key("epochs", kP, [](C& c) -> auto& { return c.probe.epochs; }));
    k.push_back(double_key("gamma", kP, [](C& c) -> auto& { return c.probe.gamma; }));
    k.push_back(int_key("batch_size", kP, [](C& c) -> auto& { return c.probe.batch_size; }));
    k.push_back(double_key("weight_decay", kP, [](C& c) -> auto& { return c.probe.weight_decay; }));
    k.push_back(int_key("hidden", kP, [](C& c) -> auto& { return c.probe.hidden; }));
    k.push_back(int_key("layer", kP, [](C& c) -> auto& { return c.probe.layer; }));
    k.push_back({"activation", kP,
                 [](const C& c) { return std::string(c.probe.activation == ProbeActivation::kRelu ? "relu" : "identity"); },
                 [](C& c, const std::string& v) {
                   require(v == "relu" || v == "identity", ErrorCode::kFormat, "activation: relu or identity");
                   c.probe.activation = v == "relu" ? ProbeActivation::kRelu : ProbeActivation::kIdentity;
                 }});
    k.push_back({"layer_sweep", kP, [](const C& c) { return std::string(c.layer_sweep ? "true" : "false"); },
                 [](C& c, const std::string& v) { c.layer_sweep = parse_bool("layer_sweep", v); }});

    k.push_back(int_key("rollback_window", kE, [](C& c) -> auto& { return c.decode.rollback_window; }));
    k.push_back(int_key("beam_width", kE, [](C& c) -> auto& { return c.decode.beam_width; }));
    k.push_back(int_key("sample_length", kE, [](C& c) -> auto& { return c.decode.sample_length; }));
    k.push_back(double_key("penalty_alpha", kE, [](C& c) -> auto& { return c.decode.penalty_alpha; }));
    k.push_back(double_key("trigger_threshold", kE, [](C& c) -> auto& { return c.decode.trigger_threshold; }));
    k.push_back(double_key("ratio_threshold", kE, [](C& c) -> auto& { return c.decode.ratio_threshold; }));
    k.push_back(int_key("rollback_budget", kE, [](C& c) -> auto& { return c.decode.rollback_budget; }));
    k.push_back(int_key("max_new_tokens", kE, [](C& c) -> auto& { return c.decode.max_new_tokens; }));
    k.push_back({"trigger_mode", kE, [](const C& c) { return std::string(to_string(c.decode.trigger_mode)); },
                 [](C& c, const std::string& v) { c.decode.trigger_mode = parse_trigger_mode(v); }});
    k.push_back({"penalty_mode", kE, [](const C& c) { return std::string(to_string(c.decode.penalty_mode)); },
                 [](C& c, const std::string& v) { c.decode.penalty_mode = parse_penalty_mode(v); }});
    return k;
  }();
  return table;
}

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 14695981039346656037ull) {
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hex16(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace pipeline_detail

/// Sets one key. `data_dir` is accepted but not hashed.
inline void set_config_value(PipelineConfig& c, const std::string& key, const std::string& value) {
  if (key == "data_dir") {
    c.data_dir = value;
    return;
  }
  for (const auto& k : pipeline_detail::keys())
    if (k.name == key) {
      k.set(c, value);
      return;
    }
  throw Error(ErrorCode::kFormat, "unknown config key '" + key + "'");
}

/// Flat `key = value` lines; blank lines and lines starting with '#' are
/// skipped. Later assignments win.
inline PipelineConfig parse_config(std::istream& in, PipelineConfig base = {}) {
  int line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    line = pipeline_detail::trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos, ErrorCode::kFormat,
            "config line " + std::to_string(line_no) + ": expected key = value");
    set_config_value(base, pipeline_detail::trim(line.substr(0, eq)), pipeline_detail::trim(line.substr(eq + 1)));
  }
  return base;
}

inline PipelineConfig load_config(const std::filesystem::path& path, PipelineConfig base = {}) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::kIo, "cannot read config " + path.string());
  return parse_config(in, std::move(base));
}

/// Every key in table order, one `key = value` per line; parse_config
/// reads it back unchanged.
inline std::string config_text(const PipelineConfig& c) {
  std::string out = "data_dir = " + c.data_dir.string() + "\n";
  for (const auto& k : pipeline_detail::keys()) out += k.name + " = " + k.get(c) + "\n";
  return out;
}

/// DSVD_DATA_DIR, when set and non-empty, replaces `data_dir`.
inline std::filesystem::path artifact_root(const PipelineConfig& c) {
  if (const char* env = std::getenv("DSVD_DATA_DIR"); env && *env) return env;
  return c.data_dir;
}

/// Content hash of each stage: its own keys chained onto the previous
/// stage's hash, so a change invalidates that stage and everything after.
inline std::map<Stage, std::string> stage_hashes(const PipelineConfig& c) {
  std::map<Stage, std::string> out;
  std::string prev;
  for (Stage s : kStages) {
    std::string text = prev + "\n" + std::string(stage_name(s)) + "\n";
    for (const auto& k : pipeline_detail::keys())
      if (k.stage == s) text += k.name + "=" + k.get(c) + "\n";
    prev = pipeline_detail::hex16(pipeline_detail::fnv1a(text));
    out[s] = prev;
  }
  return out;
}

class StageError : public Error {
 public:
  StageError(Stage s, ErrorCode code, const std::string& what)
      : Error(code, "stage " + std::string(stage_name(s)) + " failed: " + what), stage_(s) {}
  Stage stage() const noexcept { return stage_; }

 private:
  Stage stage_;
};

struct StageRun {
  Stage stage;
  std::string hash;
  std::filesystem::path dir;
  bool cached = false;
};

struct PipelineResult {
  std::vector<StageRun> stages;
  std::map<std::string, double> auroc;  // "response", "question", "response_validation", "layer_<l>"
  int greedy_correct = 0;
  int dsvd_correct = 0;
  int eval_questions = 0;
  int rollbacks = 0;

  const StageRun& run(Stage s) const {
    for (const auto& r : stages)
      if (r.stage == s) return r;
    throw Error(ErrorCode::kInvalidArgument, "stage did not run");
  }
};

namespace pipeline_detail {

inline std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream out(p, std::ios::binary);
  require(out.good(), ErrorCode::kIo, "cannot write " + p.string());
  return out;
}

inline std::pair<std::vector<QAPair>, std::vector<QAPair>> split_qa(const SyntheticCorpus& c, double fraction) {
  require(fraction > 0.0 && fraction < 1.0, ErrorCode::kInvalidArgument, "label fraction must be in (0, 1)");
  const auto n = static_cast<std::size_t>(fraction * static_cast<double>(c.qa.size()));
  require(n >= 1 && n < c.qa.size(), ErrorCode::kEmptyInput, "label fraction leaves one side empty");
  return {{c.qa.begin(), c.qa.begin() + static_cast<std::ptrdiff_t>(n)},
          {c.qa.begin() + static_cast<std::ptrdiff_t>(n), c.qa.end()}};
}

inline void write_losses(std::ostream& out, const std::string& tag, const std::vector<double>& losses) {
  for (std::size_t e = 0; e < losses.size(); ++e) out << tag << ',' << e + 1 << ',' << format_double(losses[e]) << '\n';
}

inline void stage_corpus(const PipelineConfig& c, const std::filesystem::path& out) {
  save_corpus(gen_corpus(c.task), out);
}

inline void stage_lm(const PipelineConfig& c, const std::filesystem::path& corpus_dir, const std::filesystem::path& out) {
  const auto corpus = load_corpus(corpus_dir);
  auto cfg = c.lm;
  cfg.vocab_size = corpus.vocab.size();
  const auto result = train_reference_lm(corpus.statements, cfg, c.lm_train);
  save_weights(result.weights, out / "model.bin");
  auto log = open_out(out / "train_log.csv");
  log << "model,epoch,loss\n";
  write_losses(log, "lm", result.epoch_losses);
}

inline void stage_labels(const PipelineConfig& c, const std::filesystem::path& corpus_dir,
                         const std::filesystem::path& lm_dir, const std::filesystem::path& out) {
  const auto corpus = load_corpus(corpus_dir);
  const Transformer lm(load_weights(lm_dir / "model.bin"));
  const auto [train, heldout] = split_qa(corpus, c.label_fraction);
  auto stats_out = open_out(out / "stats.csv");
  stats_out << "split,correct,incorrect,discarded,empty,kept\n";
  for (const auto& [name, pairs] : {std::pair{"train", &train}, std::pair{"heldout", &heldout}}) {
    LabelerStats st;
    const auto ds = build_dataset(lm, *pairs, c.labeler, &st);
    save_dataset(ds, out / (std::string(name) + ".jsonl"));
    stats_out << name << ',' << st.correct << ',' << st.incorrect << ',' << st.discarded << ',' << st.empty_responses
              << ',' << ds.sequences.size() << '\n';
  }
}

inline void stage_prober(const PipelineConfig& c, const std::filesystem::path& labels_dir,
                         const std::filesystem::path& out) {
  const auto split = split_dataset(load_dataset(labels_dir / "train.jsonl"), c.validation_fraction, c.probe.seed);
  auto log = open_out(out / "train_log.csv");
  log << "probe,epoch,loss\n";
  const auto response = token_probe_set(split.train);
  auto r = train_prober(response, c.probe);
  save_ensemble(r.ensemble, out / "ensemble.bin");
  write_losses(log, "response", r.epoch_losses);
  r = train_prober(question_probe_set(split.train), c.probe);
  save_ensemble(r.ensemble, out / "question.bin");
  write_losses(log, "question", r.epoch_losses);
  if (c.layer_sweep) {
    for (int l = 0; l < response.layer_count(); ++l) {
      auto p = c.probe;
      p.layer = l;
      r = train_prober(response, p);
      save_ensemble(r.ensemble, out / ("layer_" + std::to_string(l) + ".bin"));
      write_losses(log, "layer_" + std::to_string(l), r.epoch_losses);
    }
  }
  if (!split.validation.sequences.empty()) {
    const auto val = token_probe_set(split.validation);
    auto v = open_out(out / "validation.csv");
    v << "probe,auroc\nresponse," << format_double(evaluate_auroc(load_ensemble(out / "ensemble.bin"), val)) << '\n';
  }
}

inline void stage_eval(const PipelineConfig& c, const std::filesystem::path& corpus_dir,
                       const std::filesystem::path& lm_dir, const std::filesystem::path& labels_dir,
                       const std::filesystem::path& prober_dir, const std::filesystem::path& out) {
  const auto corpus = load_corpus(corpus_dir);
  const Transformer lm(load_weights(lm_dir / "model.bin"));
  const auto heldout_labels = load_dataset(labels_dir / "heldout.jsonl");
  const auto ensemble = load_ensemble(prober_dir / "ensemble.bin");

  auto auroc_out = open_out(out / "auroc.csv");
  auroc_out << "probe,auroc\n";
  const auto response = token_probe_set(heldout_labels);
  auroc_out << "response," << format_double(evaluate_auroc(ensemble, response)) << '\n';
  auroc_out << "question,"
            << format_double(evaluate_auroc(load_ensemble(prober_dir / "question.bin"), question_probe_set(heldout_labels)))
            << '\n';
  for (int l = 0; std::filesystem::exists(prober_dir / ("layer_" + std::to_string(l) + ".bin")); ++l)
    auroc_out << "layer_" << l << ','
              << format_double(evaluate_auroc(load_ensemble(prober_dir / ("layer_" + std::to_string(l) + ".bin")), response))
              << '\n';
  if (std::filesystem::exists(prober_dir / "validation.csv")) {
    std::ifstream v(prober_dir / "validation.csv");
    std::string line;
    std::getline(v, line);
    while (std::getline(v, line)) auroc_out << line.substr(0, line.find(',')) << "_validation" << line.substr(line.find(',')) << '\n';
  }

  const auto heldout = split_qa(corpus, c.label_fraction).second;
  auto jsonl = open_out(out / "decode.jsonl");
  int greedy_ok = 0, dsvd_ok = 0, rollbacks = 0;
  for (std::size_t i = 0; i < heldout.size(); ++i) {
    const auto& qa = heldout[i];
    const auto greedy = greedy_generate(lm, qa.question, c.decode.max_new_tokens, c.decode.stop_at_eos);
    const auto report = dsvd_decode(lm, ensemble, qa.question, c.decode);
    const bool g = exact_match(greedy.tokens, qa.ground_truth), d = exact_match(report.tokens, qa.ground_truth);
    greedy_ok += g;
    dsvd_ok += d;
    rollbacks += report.rollback_count();
    nlohmann::ordered_json rec;
    rec["question"] = corpus.vocab.decode(qa.question);
    rec["truth"] = corpus.vocab.decode(qa.ground_truth);
    rec["greedy"] = corpus.vocab.decode(greedy.tokens);
    rec["dsvd"] = corpus.vocab.decode(report.tokens);
    rec["greedy_correct"] = g;
    rec["dsvd_correct"] = d;
    rec["rollbacks"] = report.rollback_count();
    rec["triggers"] = report.triggers.size();
    jsonl << rec.dump() << '\n';
  }
  auto em = open_out(out / "em.csv");
  em << "mode,correct,total,accuracy,rollbacks\n";
  const double n = static_cast<double>(heldout.size());
  em << "greedy," << greedy_ok << ',' << heldout.size() << ',' << format_double(greedy_ok / n) << ",0\n";
  em << "dsvd," << dsvd_ok << ',' << heldout.size() << ',' << format_double(dsvd_ok / n) << ',' << rollbacks << '\n';
}

inline std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& p) {
  std::ifstream in(p);
  require(in.good(), ErrorCode::kIo, "cannot read " + p.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::vector<std::string> row;
    std::stringstream ss(line);
    for (std::string f; std::getline(ss, f, ',');) row.push_back(f);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace pipeline_detail

/// Runs gen-corpus, train-lm, build-labels, train-prober and decode-eval.
/// Each stage writes into `<root>/<stage>-<hash>/`; a directory holding
/// `stage.done` is reused as is. A stage builds into a temporary directory
/// that is renamed on success, so an interrupted run never leaves a
/// half-written stage behind. `log`, when given, gets one line per stage.
inline PipelineResult run_pipeline(const PipelineConfig& config, std::ostream* log = nullptr) {
  namespace fs = std::filesystem;
  using namespace pipeline_detail;
  const auto c = config.seeded();
  const auto root = artifact_root(c);
  const auto hashes = stage_hashes(c);
  PipelineResult result;
  std::map<Stage, fs::path> dirs;
  for (Stage s : kStages) {
    const auto dir = root / (std::string(stage_name(s)) + "-" + hashes.at(s));
    dirs[s] = dir;
    StageRun run{s, hashes.at(s), dir, fs::exists(dir / "stage.done")};
    if (!run.cached) {
      auto tmp = dir;
      tmp += ".tmp";
      try {
        fs::remove_all(tmp);
        fs::create_directories(tmp);
        switch (s) {
          case Stage::kCorpus: stage_corpus(c, tmp); break;
          case Stage::kLm: stage_lm(c, dirs[Stage::kCorpus], tmp); break;
          case Stage::kLabels: stage_labels(c, dirs[Stage::kCorpus], dirs[Stage::kLm], tmp); break;
          case Stage::kProber: stage_prober(c, dirs[Stage::kLabels], tmp); break;
          case Stage::kEval:
            stage_eval(c, dirs[Stage::kCorpus], dirs[Stage::kLm], dirs[Stage::kLabels], dirs[Stage::kProber], tmp);
            break;
        }
        open_out(tmp / "stage.done") << config_text(c);
        fs::remove_all(dir);
        fs::rename(tmp, dir);
      } catch (const Error& e) {
        throw StageError(s, e.code(), e.what());
      } catch (const std::exception& e) {
        throw StageError(s, ErrorCode::kIo, e.what());
      }
    }
    if (log) *log << stage_name(s) << ' ' << (run.cached ? "cached" : "done") << ' ' << run.dir.string() << '\n';
    result.stages.push_back(run);
  }

  for (const auto& row : read_csv(dirs[Stage::kEval] / "auroc.csv"))
    if (row.size() == 2) result.auroc[row[0]] = parse_double("auroc", row[1]);
  for (const auto& row : read_csv(dirs[Stage::kEval] / "em.csv")) {
    require(row.size() == 5, ErrorCode::kFormat, "em.csv row");
    const int correct = static_cast<int>(parse_int("correct", row[1]));
    if (row[0] == "greedy") result.greedy_correct = correct;
    if (row[0] == "dsvd") {
      result.dsvd_correct = correct;
      result.rollbacks = static_cast<int>(parse_int("rollbacks", row[4]));
    }
    result.eval_questions = static_cast<int>(parse_int("total", row[2]));
  }
  return result;
}

}  // namespace dsvd
