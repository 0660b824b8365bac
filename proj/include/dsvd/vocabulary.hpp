// Copyright 2026 The DSVD Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "dsvd/common.hpp"

namespace dsvd {

/// Ordered symbol table. The three special symbols always occupy ids 0..2.
class Vocabulary {
 public:
  static constexpr std::string_view kBos = "<bos>";
  static constexpr std::string_view kEos = "<eos>";
  static constexpr std::string_view kPad = "<pad>";

  Vocabulary() {
    add(std::string(kBos));
    add(std::string(kEos));
    add(std::string(kPad));
  }

  /// Returns the id of `symbol`, inserting it if new.
  TokenId add(const std::string& symbol) {
    require(!symbol.empty() && symbol.find('\n') == std::string::npos,
            ErrorCode::kInvalidArgument, "vocabulary symbols must be non-empty single-line strings");
    if (auto it = index_.find(symbol); it != index_.end()) return it->second;
    const auto id = static_cast<TokenId>(symbols_.size());
    symbols_.push_back(symbol);
    index_.emplace(symbol, id);
    return id;
  }

  TokenId id(const std::string& symbol) const {
    auto it = index_.find(symbol);
    require(it != index_.end(), ErrorCode::kTokenOutOfRange, "unknown symbol '" + symbol + "'");
    return it->second;
  }

  bool contains(const std::string& symbol) const { return index_.count(symbol) != 0; }

  const std::string& symbol(TokenId id) const {
    require(id >= 0 && static_cast<std::size_t>(id) < symbols_.size(), ErrorCode::kTokenOutOfRange,
            "token id " + std::to_string(id));
    return symbols_[static_cast<std::size_t>(id)];
  }

  int size() const { return static_cast<int>(symbols_.size()); }
  TokenId bos() const { return 0; }
  TokenId eos() const { return 1; }
  TokenId pad() const { return 2; }

  /// Whitespace tokenization; every word must already be a symbol.
  std::vector<TokenId> encode(const std::string& text) const {
    std::istringstream in(text);
    std::vector<TokenId> out;
    for (std::string word; in >> word;) out.push_back(id(word));
    return out;
  }

  std::string decode(const std::vector<TokenId>& ids) const {
    std::string out;
    for (TokenId t : ids) {
      if (!out.empty()) out += ' ';
      out += symbol(t);
    }
    return out;
  }

  /// One symbol per line; line number is the id.
  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), ErrorCode::kIo, "cannot write " + path.string());
    for (const auto& s : symbols_) out << s << '\n';
  }

  static Vocabulary load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), ErrorCode::kIo, "cannot read " + path.string());
    Vocabulary vocab;
    vocab.symbols_.clear();
    vocab.index_.clear();
    for (std::string line; std::getline(in, line);) {
      require(!vocab.contains(line), ErrorCode::kFormat, "duplicate symbol '" + line + "'");
      vocab.add(line);
    }
    require(vocab.size() >= 3 && vocab.symbols_[0] == kBos && vocab.symbols_[1] == kEos &&
                vocab.symbols_[2] == kPad,
            ErrorCode::kFormat, "vocabulary must start with <bos>, <eos>, <pad>");
    return vocab;
  }

 private:
  std::vector<std::string> symbols_;
  std::unordered_map<std::string, TokenId> index_;
};

}  // namespace dsvd
