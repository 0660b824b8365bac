// Copyright 2026 The DSVD Authors.
// SPDX-License-Identifier: Apache-2.0

// dsvd: command-line front end for corpus generation, LM and prober
// training, labeling, decoding, AUROC evaluation and the latency study.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dsvd/bench/latency.hpp"
#include "dsvd/bench/pipeline.hpp"
#include "dsvd/bench/synthetic_task.hpp"
#include "dsvd/decoder/decode.hpp"
#include "dsvd/labeler/dataset.hpp"
#include "dsvd/labeler/dataset_io.hpp"
#include "dsvd/lm/generate.hpp"
#include "dsvd/lm/train.hpp"
#include "dsvd/lm/transformer.hpp"
#include "dsvd/lm/weights.hpp"
#include "dsvd/prober/auroc.hpp"
#include "dsvd/prober/ensemble.hpp"
#include "dsvd/prober/train.hpp"

namespace {

using namespace dsvd;

void add_decode_flags(CLI::App* cmd, DecodeParams& p, std::string& trigger, std::string& penalty) {
  cmd->add_option("--rollback-window", p.rollback_window, "positions rolled back on a trigger (r)");
  cmd->add_option("--beam-width", p.beam_width, "candidates kept by the beam search (k)");
  cmd->add_option("--sample-length", p.sample_length, "tokens per candidate (m)");
  cmd->add_option("--penalty-alpha", p.penalty_alpha, "weight of the hallucination penalty");
  cmd->add_option("--trigger-threshold", p.trigger_threshold, "a rollback fires when any windowed z_hallu exceeds this");
  cmd->add_option("--ratio-threshold", p.ratio_threshold, "top-2/top-1 threshold in top-ratio mode");
  cmd->add_option("--rollback-budget", p.rollback_budget, "maximum rollbacks per decode (B)");
  cmd->add_option("--max-new-tokens", p.max_new_tokens, "generated token limit");
  cmd->add_option("--trigger-mode", trigger, "probing, top-ratio or disabled")
      ->check(CLI::IsMember({"probing", "top-ratio", "disabled"}));
  cmd->add_option("--penalty-mode", penalty, "penalized or plain-logprob")
      ->check(CLI::IsMember({"penalized", "plain-logprob"}));
}

void add_probe_flags(CLI::App* cmd, ProbeTrainConfig& p, std::string& activation) {
  cmd->add_option("--learning-rate", p.learning_rate);
  cmd->add_option("--epochs", p.epochs);
  cmd->add_option("--gamma", p.gamma, "focal loss exponent");
  cmd->add_option("--batch-size", p.batch_size);
  cmd->add_option("--weight-decay", p.weight_decay);
  cmd->add_option("--hidden", p.hidden, "head width, 0 for the model dimension");
  cmd->add_option("--layer", p.layer, "train one head on this layer, -1 for the ensemble");
  cmd->add_option("--activation", activation)->check(CLI::IsMember({"relu", "identity"}));
}

std::vector<TokenId> parse_id_list(const std::string& s) {
  std::vector<TokenId> out;
  std::stringstream ss(s);
  for (std::string f; std::getline(ss, f, ',');) out.push_back(static_cast<TokenId>(std::stoi(f)));
  return out;
}

ProbeSet probe_set_for(const LabeledDataset& ds, const std::string& features) {
  return features == "question" ? question_probe_set(ds) : token_probe_set(ds);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dynamic self-verify decoding toolkit"};
  app.require_subcommand(1);
  std::uint64_t seed = 1;
  app.add_option("--seed", seed, "seed for every random choice")->capture_default_str();

  // gen-corpus
  SyntheticQATask task;
  std::string corpus_out;
  auto* gen = app.add_subcommand("gen-corpus", "write a synthetic QA corpus");
  gen->add_option("--out", corpus_out)->required();
  gen->add_option("--entities", task.entities);
  gen->add_option("--regions", task.regions);
  gen->add_option("--cities", task.cities);
  gen->add_option("--districts", task.districts);
  gen->add_option("--corruption-rate", task.corruption_rate);
  gen->add_option("--majority-wrong-rate", task.majority_wrong_rate);
  gen->add_option("--clean-copies", task.clean_copies);
  gen->add_option("--corrupted-copies", task.corrupted_copies);

  // train-lm
  PipelineConfig defaults;
  TransformerConfig lm_cfg = defaults.lm;
  LmTrainConfig lm_train = defaults.lm_train;
  std::string corpus_dir, model_out;
  auto* train_lm = app.add_subcommand("train-lm", "train the reference transformer on a corpus");
  train_lm->add_option("--corpus", corpus_dir)->required();
  train_lm->add_option("--out", model_out)->required();
  train_lm->add_option("--n-layers", lm_cfg.n_layers);
  train_lm->add_option("--d-model", lm_cfg.d_model);
  train_lm->add_option("--n-heads", lm_cfg.n_heads);
  train_lm->add_option("--d-ff", lm_cfg.d_ff);
  train_lm->add_option("--max-context", lm_cfg.max_context);
  train_lm->add_option("--epochs", lm_train.epochs);
  train_lm->add_option("--batch-size", lm_train.batch_size);
  train_lm->add_option("--lr", lm_train.lr);

  // build-labels
  LabelerConfig labeler;
  std::string model_path, labels_out, qa_split = "train";
  double label_fraction = defaults.label_fraction;
  auto* build_labels = app.add_subcommand("build-labels", "label the LM's own answers for prober training");
  build_labels->add_option("--corpus", corpus_dir)->required();
  build_labels->add_option("--model", model_path)->required();
  build_labels->add_option("--out", labels_out, "dataset .jsonl (states go to <out>.bin)")->required();
  build_labels->add_option("--split", qa_split, "train, heldout or all")
      ->check(CLI::IsMember({"train", "heldout", "all"}));
  build_labels->add_option("--label-fraction", label_fraction, "leading share of QA pairs in the train split");
  build_labels->add_option("--max-new-tokens", labeler.max_new_tokens);
  build_labels->add_option("--threads", labeler.threads);

  // train-prober
  ProbeTrainConfig probe_cfg;
  std::string activation = "relu", labels_path, ensemble_out, features = "response";
  double validation_fraction = defaults.validation_fraction;
  auto* train_probe = app.add_subcommand("train-prober", "train the probing ensemble with focal loss");
  train_probe->add_option("--labels", labels_path)->required();
  train_probe->add_option("--out", ensemble_out)->required();
  train_probe->add_option("--features", features, "response tokens or question-only states")
      ->check(CLI::IsMember({"response", "question"}));
  train_probe->add_option("--validation-fraction", validation_fraction);
  add_probe_flags(train_probe, probe_cfg, activation);

  // decode
  DecodeParams decode;
  std::string trigger = "probing", penalty = "penalized", ensemble_path, prompt_text, decode_out;
  bool greedy_only = false;
  auto* dec = app.add_subcommand("decode", "decode held-out questions (or one prompt) with DSVD");
  dec->add_option("--corpus", corpus_dir)->required();
  dec->add_option("--model", model_path)->required();
  dec->add_option("--ensemble", ensemble_path)->required();
  dec->add_option("--prompt", prompt_text, "decode this text instead of the held-out questions");
  dec->add_option("--label-fraction", label_fraction);
  dec->add_option("--out", decode_out, "JSON lines output (stdout when omitted)");
  dec->add_flag("--greedy", greedy_only, "plain greedy decoding");
  add_decode_flags(dec, decode, trigger, penalty);

  // eval-auroc
  std::string auroc_out;
  auto* eval = app.add_subcommand("eval-auroc", "AUROC of an ensemble on a labeled dataset");
  eval->add_option("--ensemble", ensemble_path)->required();
  eval->add_option("--labels", labels_path)->required();
  eval->add_option("--features", features)->check(CLI::IsMember({"response", "question"}));
  eval->add_option("--out", auroc_out, "CSV output");

  // bench-latency
  LatencyBenchConfig bench;
  std::string bench_out, rollback_list = "0,5,10";
  int bench_d = 512, bench_layers = 1, bench_vocab = 512, bench_hidden = 128, bench_prompts = 3;
  auto* lat = app.add_subcommand("bench-latency", "greedy vs DSVD ms/token with scripted rollbacks");
  lat->add_option("--model", model_path, "trained model; a random toy LM is built when omitted");
  lat->add_option("--ensemble", ensemble_path, "trained ensemble; random heads when omitted");
  lat->add_option("--d-model", bench_d)->capture_default_str();
  lat->add_option("--n-layers", bench_layers)->capture_default_str();
  lat->add_option("--vocab", bench_vocab)->capture_default_str();
  lat->add_option("--hidden", bench_hidden, "probe head width of the random ensemble")->capture_default_str();
  lat->add_option("--prompts", bench_prompts)->capture_default_str();
  lat->add_option("--repetitions", bench.repetitions)->capture_default_str();
  lat->add_option("--warmup", bench.warmup)->capture_default_str();
  lat->add_option("--rollbacks", rollback_list, "comma-separated scripted rollback counts")->capture_default_str();
  lat->add_option("--model-tag", bench.model_tag);
  lat->add_option("--out", bench_out, "CSV output");
  std::string bench_trigger = "probing", bench_penalty = "penalized";
  add_decode_flags(lat, bench.params, bench_trigger, bench_penalty);

  // run-pipeline
  std::string config_path;
  std::vector<std::string> overrides;
  auto* pipe = app.add_subcommand("run-pipeline", "all stages, cached by content hash");
  pipe->add_option("--config", config_path, "flat key = value file");
  pipe->add_option("--set", overrides, "key=value override, repeatable");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      task.seed = seed;
      const auto c = gen_corpus(task);
      save_corpus(c, corpus_out);
      std::cout << "facts " << c.facts.size() << " corrupted " << c.corrupted_facts() << " statements "
                << c.statements.size() << " corrupted_statements " << c.corrupted_statements() << '\n';
    } else if (*train_lm) {
      const auto c = load_corpus(corpus_dir);
      lm_cfg.vocab_size = c.vocab.size();
      lm_train.seed = seed;
      lm_train.on_epoch = [](int epoch, double loss) { std::cerr << "epoch " << epoch << " loss " << loss << '\n'; };
      const auto r = train_reference_lm(c.statements, lm_cfg, lm_train);
      save_weights(r.weights, model_out);
      std::cout << "initial_loss " << r.initial_loss << " final_loss " << r.final_loss << '\n';
    } else if (*build_labels) {
      const auto c = load_corpus(corpus_dir);
      const Transformer lm(load_weights(model_path));
      std::vector<QAPair> pairs = c.qa;
      if (qa_split != "all") {
        auto [train, heldout] = pipeline_detail::split_qa(c, label_fraction);
        pairs = qa_split == "train" ? train : heldout;
      }
      labeler.seed = seed;
      LabelerStats st;
      const auto ds = build_dataset(lm, pairs, labeler, &st);
      save_dataset(ds, labels_out);
      std::cout << "correct " << st.correct << " incorrect " << st.incorrect << " discarded " << st.discarded
                << " empty " << st.empty_responses << " kept " << ds.sequences.size() << '\n';
    } else if (*train_probe) {
      probe_cfg.seed = seed;
      probe_cfg.activation = activation == "relu" ? ProbeActivation::kRelu : ProbeActivation::kIdentity;
      const auto split = split_dataset(load_dataset(labels_path), validation_fraction, seed);
      probe_cfg.on_epoch = [](int epoch, double loss) { std::cerr << "epoch " << epoch << " loss " << loss << '\n'; };
      const auto r = train_prober(probe_set_for(split.train, features), probe_cfg);
      save_ensemble(r.ensemble, ensemble_out);
      if (!split.validation.sequences.empty())
        std::cout << "validation_auroc " << evaluate_auroc(r.ensemble, probe_set_for(split.validation, features))
                  << '\n';
    } else if (*dec) {
      decode.trigger_mode = parse_trigger_mode(trigger);
      decode.penalty_mode = parse_penalty_mode(penalty);
      const auto c = load_corpus(corpus_dir);
      const Transformer lm(load_weights(model_path));
      const auto ensemble = load_ensemble(ensemble_path);
      std::vector<QAPair> pairs;
      if (!prompt_text.empty()) {
        auto q = c.vocab.encode(prompt_text);
        if (q.empty() || q.front() != c.vocab.bos()) q.insert(q.begin(), c.vocab.bos());
        pairs.push_back({q, {}});
      } else {
        pairs = pipeline_detail::split_qa(c, label_fraction).second;
      }
      std::ofstream file;
      if (!decode_out.empty()) {
        file.open(decode_out, std::ios::binary);
        require(file.good(), ErrorCode::kIo, "cannot write " + decode_out);
      }
      std::ostream& out = decode_out.empty() ? std::cout : file;
      int correct = 0;
      for (const auto& qa : pairs) {
        nlohmann::ordered_json rec;
        rec["question"] = c.vocab.decode(qa.question);
        std::vector<TokenId> tokens;
        if (greedy_only) {
          tokens = greedy_generate(lm, qa.question, decode.max_new_tokens, decode.stop_at_eos).tokens;
        } else {
          const auto r = dsvd_decode(lm, ensemble, qa.question, decode);
          tokens = r.tokens;
          rec["rollbacks"] = r.rollback_count();
          rec["triggers"] = r.triggers.size();
        }
        rec["response"] = c.vocab.decode(tokens);
        if (!qa.ground_truth.empty()) {
          rec["truth"] = c.vocab.decode(qa.ground_truth);
          rec["correct"] = exact_match(tokens, qa.ground_truth);
          correct += exact_match(tokens, qa.ground_truth);
        }
        out << rec.dump() << '\n';
      }
      if (prompt_text.empty()) std::cerr << "exact_match " << correct << " / " << pairs.size() << '\n';
    } else if (*eval) {
      const double a = evaluate_auroc(load_ensemble(ensemble_path), probe_set_for(load_dataset(labels_path), features));
      std::cout << "auroc " << a << '\n';
      if (!auroc_out.empty()) {
        std::ofstream out(auroc_out, std::ios::binary);
        require(out.good(), ErrorCode::kIo, "cannot write " + auroc_out);
        out << "features,auroc\n" << features << ',' << a << '\n';
      }
    } else if (*lat) {
      bench.params.trigger_mode = parse_trigger_mode(bench_trigger);
      bench.params.penalty_mode = parse_penalty_mode(bench_penalty);
      bench.rollback_counts = parse_id_list(rollback_list);
      TransformerWeights<float> weights;
      if (!model_path.empty()) {
        weights = load_weights(model_path);
      } else {
        TransformerConfig cfg;
        cfg.vocab_size = bench_vocab;
        cfg.n_layers = bench_layers;
        cfg.d_model = bench_d;
        cfg.n_heads = 4;
        cfg.max_context = bench.params.max_new_tokens + 64;
        weights = TransformerWeights<float>::random(cfg, seed);
      }
      const Transformer lm(weights);
      const auto ensemble =
          !ensemble_path.empty()
              ? load_ensemble(ensemble_path)
              : ProbingEnsemble::random(lm.state_layers(), lm.model_dim(), bench_hidden, ProbeActivation::kRelu, seed);
      std::mt19937_64 rng(seed);
      std::vector<std::vector<TokenId>> prompts;
      for (int i = 0; i < bench_prompts; ++i) {
        std::vector<TokenId> p{0};  // <bos>
        for (int j = 0; j < 3 + i % 3; ++j)
          p.push_back(std::uniform_int_distribution<TokenId>(3, lm.vocab_size() - 1)(rng));
        prompts.push_back(p);
      }
      const auto records = bench_latency(lm, ensemble, prompts, bench);
      for (const auto& r : records)
        std::printf("%s rollbacks=%d prompts=%zu ms/token=%.4f over_greedy=%+.1f%%\n", r.mode.c_str(), r.rollbacks,
                    r.prompts, r.ms_per_token, r.percent_over_greedy);
      if (!bench_out.empty()) write_latency_csv(records, bench_out);
    } else if (*pipe) {
      PipelineConfig cfg;
      if (!config_path.empty()) cfg = load_config(config_path);
      if (app.count("--seed") > 0) cfg.seed = seed;
      for (const auto& kv : overrides) {
        const auto eq = kv.find('=');
        require(eq != std::string::npos, ErrorCode::kFormat, "--set expects key=value, got '" + kv + "'");
        set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
      }
      const auto r = run_pipeline(cfg, &std::cerr);
      std::cout << "greedy_em " << r.greedy_correct << " / " << r.eval_questions << '\n'
                << "dsvd_em " << r.dsvd_correct << " / " << r.eval_questions << " (rollbacks " << r.rollbacks << ")\n";
      for (const auto& [name, value] : r.auroc) std::cout << "auroc_" << name << ' ' << value << '\n';
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
