// Copyright 2026 The DSVD Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <string>

#include "dsvd/binary_io.hpp"
#include "dsvd/common.hpp"
#include "dsvd/labeler/dataset.hpp"

// Dataset layout:
//   <name>.jsonl      one JSON object per sequence
//   <name>.jsonl.bin  "DSVDST1" magic, then float32 blocks of (layers x dim)
// Record fields: index, class ("correct"|"hallucinated"), rouge_l, question,
// response, ground_truth, labels, scores, layers, dim, states_offset,
// states_blocks. The blocks at states_offset (byte offset into the sidecar)
// are the question states followed by one block per response token.
namespace dsvd {

inline std::filesystem::path dataset_sidecar(const std::filesystem::path& jsonl) {
  auto p = jsonl;
  p += ".bin";
  return p;
}

inline void save_dataset(const LabeledDataset& ds, const std::filesystem::path& jsonl) {
  std::ofstream text(jsonl);
  std::ofstream bin(dataset_sidecar(jsonl), std::ios::binary);
  require(text.good() && bin.good(), ErrorCode::kIo, "cannot write dataset " + jsonl.string());
  binary::write_magic(bin, "DSVDST1");
  const std::size_t block = static_cast<std::size_t>(ds.layer_count) * static_cast<std::size_t>(ds.dim);
  auto write_block = [&](const LayerStates& s) {
    require(s.layer_count() == ds.layer_count && s.dim() == ds.dim, ErrorCode::kDimensionMismatch,
            "state block shape differs from dataset header");
    binary::write_floats(bin, std::span<const float>(s.rows.data(), block));
  };
  for (const auto& seq : ds.sequences) {
    require(seq.token_states.size() == seq.response.size(), ErrorCode::kDimensionMismatch,
            "sequence without per-token states");
    nlohmann::json rec;
    rec["index"] = seq.source_index;
    rec["class"] = std::string(to_string(seq.cls));
    rec["rouge_l"] = seq.rouge_l;
    rec["question"] = seq.question;
    rec["response"] = seq.response;
    rec["ground_truth"] = seq.ground_truth;
    rec["labels"] = seq.labels;
    rec["scores"] = seq.scores;
    rec["layers"] = ds.layer_count;
    rec["dim"] = ds.dim;
    rec["states_offset"] = static_cast<std::uint64_t>(bin.tellp());
    rec["states_blocks"] = seq.token_states.size() + 1;
    write_block(seq.question_states);
    for (const auto& s : seq.token_states) write_block(s);
    text << rec.dump() << '\n';
  }
  require(text.good() && bin.good(), ErrorCode::kIo, "write failed for " + jsonl.string());
}

inline LabeledDataset load_dataset(const std::filesystem::path& jsonl) {
  std::ifstream text(jsonl);
  std::ifstream bin(dataset_sidecar(jsonl), std::ios::binary);
  require(text.good() && bin.good(), ErrorCode::kIo, "cannot open dataset " + jsonl.string());
  binary::expect_magic(bin, "DSVDST1");
  LabeledDataset ds;
  std::string line;
  bool first = true;
  auto read_block = [&]() {
    LayerStates s;
    s.rows.resize(ds.layer_count, ds.dim);
    binary::read_floats(bin, std::span<float>(s.rows.data(), static_cast<std::size_t>(s.rows.size())));
    return s;
  };
  while (std::getline(text, line)) {
    if (line.empty()) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
      LabeledSequence seq;
      const int layers = rec.at("layers").get<int>();
      const int dim = rec.at("dim").get<int>();
      if (first) {
        ds.layer_count = layers;
        ds.dim = dim;
        first = false;
      }
      require(layers == ds.layer_count && dim == ds.dim, ErrorCode::kDimensionMismatch,
              "records disagree on state shape");
      seq.source_index = rec.at("index").get<std::size_t>();
      const auto cls = rec.at("class").get<std::string>();
      require(cls == "correct" || cls == "hallucinated", ErrorCode::kFormat, "unknown class " + cls);
      seq.cls = cls == "correct" ? ResponseClass::kCorrect : ResponseClass::kIncorrect;
      seq.rouge_l = rec.at("rouge_l").get<double>();
      rec.at("question").get_to(seq.question);
      rec.at("response").get_to(seq.response);
      rec.at("ground_truth").get_to(seq.ground_truth);
      rec.at("labels").get_to(seq.labels);
      rec.at("scores").get_to(seq.scores);
      const auto blocks = rec.at("states_blocks").get<std::size_t>();
      require(blocks == seq.response.size() + 1 && seq.labels.size() == seq.response.size(), ErrorCode::kFormat,
              "record " + std::to_string(seq.source_index) + " has inconsistent lengths");
      require(valid_label_shape(seq.labels), ErrorCode::kFormat, "record has malformed labels");
      bin.seekg(static_cast<std::streamoff>(rec.at("states_offset").get<std::uint64_t>()));
      seq.question_states = read_block();
      for (std::size_t i = 0; i + 1 < blocks; ++i) seq.token_states.push_back(read_block());
      ds.sequences.push_back(std::move(seq));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kFormat, jsonl.string() + ": " + e.what());
    }
  }
  return ds;
}

}  // namespace dsvd
