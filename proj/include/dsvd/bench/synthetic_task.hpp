// Copyright 2026 The DSVD Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "dsvd/common.hpp"
#include "dsvd/labeler/dataset.hpp"
#include "dsvd/vocabulary.hpp"

namespace dsvd {

/// Entity question answering over a fact table mapping each entity to a
/// (region, city, district) attribute. Statements read
///   <bos> where <entity> ? <region> <city> <district> <eos>
/// and questions are the statement prefix up to "?".
///
/// A corrupted fact is stated `corrupted_copies` times. `wrong_copies` of
/// those use one shared wrong region followed by a different random city and
/// district each time, the rest state the truth. When the wrong statements
/// are the majority, the trained LM's greedy answer starts with the wrong
/// region, but no single wrong continuation is as likely as the true one.
/// Every other fact is stated `clean_copies` times, correctly.
struct SyntheticQATask {
  int entities = 400;
  int regions = 8;
  int cities = 24;
  int districts = 24;
  double corruption_rate = 0.5;
  double majority_wrong_rate = 0.5;  // share of corrupted facts with more wrong than true statements
  int clean_copies = 3;
  int corrupted_copies = 6;
  std::uint64_t seed = 1;

  void validate() const {
    require(entities >= 1 && regions >= 2 && cities >= 1 && districts >= 1, ErrorCode::kEmptyInput,
            "entity and attribute sets must be non-empty (at least two regions)");
    require(corruption_rate >= 0.0 && corruption_rate <= 1.0, ErrorCode::kInvalidArgument,
            "corruption rate must be in [0, 1]");
    require(majority_wrong_rate >= 0.0 && majority_wrong_rate <= 1.0, ErrorCode::kInvalidArgument,
            "majority-wrong rate must be in [0, 1]");
    require(clean_copies >= 1 && corrupted_copies >= 3, ErrorCode::kInvalidArgument,
            "need at least one clean and three corrupted copies");
  }
};

struct Fact {
  TokenId entity = 0;
  std::array<TokenId, 3> attribute{};
  bool corrupted = false;
  int wrong_statements = 0;
  TokenId wrong_region = -1;

  bool majority_wrong(int copies) const { return 2 * wrong_statements > copies; }
};

struct SyntheticCorpus {
  Vocabulary vocab;
  std::vector<Fact> facts;
  std::vector<std::vector<TokenId>> statements;  // shuffled LM training sequences
  std::vector<bool> statement_corrupted;         // parallel to statements
  std::vector<QAPair> qa;                        // one per fact, fact order

  std::size_t corrupted_facts() const {
    return static_cast<std::size_t>(std::count_if(facts.begin(), facts.end(), [](const Fact& f) { return f.corrupted; }));
  }
  std::size_t corrupted_statements() const {
    return static_cast<std::size_t>(std::count(statement_corrupted.begin(), statement_corrupted.end(), true));
  }
};

inline std::vector<TokenId> question_tokens(const Vocabulary& v, TokenId entity) {
  return {v.bos(), v.id("where"), entity, v.id("?")};
}

/// Deterministic under `task.seed`.
inline SyntheticCorpus gen_corpus(const SyntheticQATask& task) {
  task.validate();
  SyntheticCorpus c;
  auto& v = c.vocab;
  v.add("where");
  v.add("?");
  std::vector<TokenId> entities, regions, cities, districts;
  for (int i = 0; i < task.entities; ++i) entities.push_back(v.add("e" + std::to_string(i)));
  for (int i = 0; i < task.regions; ++i) regions.push_back(v.add("r" + std::to_string(i)));
  for (int i = 0; i < task.cities; ++i) cities.push_back(v.add("c" + std::to_string(i)));
  for (int i = 0; i < task.districts; ++i) districts.push_back(v.add("d" + std::to_string(i)));

  std::mt19937_64 rng(task.seed);
  auto pick = [&rng](const std::vector<TokenId>& from) {
    return from[std::uniform_int_distribution<std::size_t>(0, from.size() - 1)(rng)];
  };
  std::bernoulli_distribution corrupt(task.corruption_rate);
  std::bernoulli_distribution majority(task.majority_wrong_rate);

  auto statement = [&](TokenId e, TokenId r, TokenId city, TokenId d) {
    auto s = question_tokens(v, e);
    s.insert(s.end(), {r, city, d, v.eos()});
    return s;
  };
  std::vector<std::pair<std::vector<TokenId>, bool>> pending;
  for (TokenId e : entities) {
    Fact f;
    f.entity = e;
    f.attribute = {pick(regions), pick(cities), pick(districts)};
    f.corrupted = corrupt(rng);
    const int copies = f.corrupted ? task.corrupted_copies : task.clean_copies;
    if (f.corrupted) {
      const int minority = (task.corrupted_copies - 1) / 2;
      f.wrong_statements = majority(rng) ? task.corrupted_copies - minority : minority;
      do {
        f.wrong_region = pick(regions);
      } while (f.wrong_region == f.attribute[0]);
    }
    for (int i = 0; i < copies; ++i) {
      const bool wrong = i < f.wrong_statements;
      TokenId city = f.attribute[1], d = f.attribute[2];
      if (wrong) {
        do {
          city = pick(cities);
          d = pick(districts);
        } while (city == f.attribute[1] && d == f.attribute[2]);
      }
      pending.emplace_back(statement(e, wrong ? f.wrong_region : f.attribute[0], city, d), wrong);
    }
    c.qa.push_back({question_tokens(v, e), {f.attribute.begin(), f.attribute.end()}});
    c.facts.push_back(f);
  }
  std::shuffle(pending.begin(), pending.end(), rng);
  for (auto& [s, wrong] : pending) {
    c.statements.push_back(std::move(s));
    c.statement_corrupted.push_back(wrong);
  }
  return c;
}

/// Exact match on the answer tokens, EOS excluded.
inline bool exact_match(const std::vector<TokenId>& response, const std::vector<TokenId>& truth) {
  return response == truth;
}

/// Writes vocab.txt, corpus.txt (one statement per line), qa.tsv
/// (question <tab> answer) and facts.csv into `dir`.
inline void save_corpus(const SyntheticCorpus& c, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  c.vocab.save(dir / "vocab.txt");
  auto open = [&](const char* name) {
    std::ofstream out(dir / name, std::ios::binary);
    require(out.good(), ErrorCode::kIo, "cannot write " + (dir / name).string());
    return out;
  };
  auto corpus = open("corpus.txt");
  for (const auto& s : c.statements) corpus << c.vocab.decode(s) << '\n';
  auto qa = open("qa.tsv");
  for (const auto& p : c.qa) qa << c.vocab.decode(p.question) << '\t' << c.vocab.decode(p.ground_truth) << '\n';
  auto facts = open("facts.csv");
  facts << "entity,region,city,district,corrupted,wrong_statements,wrong_region\n";
  for (const auto& f : c.facts) {
    facts << c.vocab.symbol(f.entity) << ',' << c.vocab.symbol(f.attribute[0]) << ',' << c.vocab.symbol(f.attribute[1])
          << ',' << c.vocab.symbol(f.attribute[2]) << ',' << (f.corrupted ? 1 : 0) << ',' << f.wrong_statements << ','
          << (f.wrong_region >= 0 ? c.vocab.symbol(f.wrong_region) : "") << '\n';
  }
}

/// Reads the files written by save_corpus. Statement corruption flags are
/// not stored and come back all false.
inline SyntheticCorpus load_corpus(const std::filesystem::path& dir) {
  SyntheticCorpus c;
  c.vocab = Vocabulary::load(dir / "vocab.txt");
  auto open = [&](const char* name) {
    std::ifstream in(dir / name, std::ios::binary);
    require(in.good(), ErrorCode::kIo, "cannot read " + (dir / name).string());
    return in;
  };
  auto corpus = open("corpus.txt");
  for (std::string line; std::getline(corpus, line);) {
    c.statements.push_back(c.vocab.encode(line));
    c.statement_corrupted.push_back(false);
  }
  auto qa = open("qa.tsv");
  for (std::string line; std::getline(qa, line);) {
    const auto tab = line.find('\t');
    require(tab != std::string::npos, ErrorCode::kFormat, "qa.tsv line without tab");
    c.qa.push_back({c.vocab.encode(line.substr(0, tab)), c.vocab.encode(line.substr(tab + 1))});
  }
  auto facts = open("facts.csv");
  std::string line;
  std::getline(facts, line);
  while (std::getline(facts, line)) {
    std::vector<std::string> f;
    std::size_t start = 0;
    for (std::size_t comma; (comma = line.find(',', start)) != std::string::npos; start = comma + 1)
      f.push_back(line.substr(start, comma - start));
    f.push_back(line.substr(start));
    require(f.size() == 7, ErrorCode::kFormat, "facts.csv row needs 7 fields");
    Fact fact;
    fact.entity = c.vocab.id(f[0]);
    fact.attribute = {c.vocab.id(f[1]), c.vocab.id(f[2]), c.vocab.id(f[3])};
    fact.corrupted = f[4] == "1";
    fact.wrong_statements = std::stoi(f[5]);
    fact.wrong_region = f[6].empty() ? -1 : c.vocab.id(f[6]);
    c.facts.push_back(fact);
  }
  require(c.facts.size() == c.qa.size(), ErrorCode::kFormat, "facts.csv and qa.tsv disagree in length");
  return c;
}

}  // namespace dsvd
