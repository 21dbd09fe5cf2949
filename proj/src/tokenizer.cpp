// Copyright 2026 The MEDOS Authors.
// SPDX-License-Identifier: Apache-2.0

#include "medos/tokenizer.hpp"

#include <algorithm>
#include <map>

#include "medos/error.hpp"
#include "medos/text.hpp"

namespace medos::tok {

const std::vector<std::string>& special_tokens() {
  static const std::vector<std::string> s{"<pad>", "<s>", "</s>", "<unk>"};
  return s;
}

Tokenizer::Tokenizer() : Tokenizer(special_tokens()) {}

Tokenizer::Tokenizer(std::vector<std::string> vocab) : vocab_(std::move(vocab)) {
  const auto& sp = special_tokens();
  if (vocab_.size() < sp.size() || !std::equal(sp.begin(), sp.end(), vocab_.begin())) {
    throw ContractError("tokenizer: vocabulary must start with <pad> <s> </s> <unk>");
  }
  for (std::size_t i = 0; i < vocab_.size(); ++i) {
    if (vocab_[i].empty() || vocab_[i].find(' ') != std::string::npos) {
      throw ContractError("tokenizer: invalid vocabulary entry at " + std::to_string(i));
    }
    if (!index_.emplace(vocab_[i], static_cast<int>(i)).second) {
      throw ContractError("tokenizer: duplicate vocabulary entry '" + vocab_[i] + "'");
    }
  }
}

Tokenizer Tokenizer::build(std::span<const std::string> texts, std::size_t min_count, std::size_t max_vocab) {
  std::map<std::string, std::size_t> counts;
  for (const auto& t : texts) {
    for (auto& w : text::split_words(text::normalize_whitespace(t))) ++counts[std::move(w)];
  }
  const auto& sp = special_tokens();
  std::vector<std::pair<std::string, std::size_t>> items;
  for (auto& [w, c] : counts) {
    if (c >= min_count && std::find(sp.begin(), sp.end(), w) == sp.end()) items.emplace_back(w, c);
  }
  std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> vocab = sp;
  for (auto& [w, c] : items) {
    if (max_vocab != 0 && vocab.size() >= max_vocab) break;
    vocab.push_back(w);
  }
  return Tokenizer(std::move(vocab));
}

std::vector<int> Tokenizer::encode(std::string_view t) const {
  std::vector<int> out;
  for (const auto& w : text::split_words(text::normalize_whitespace(t))) out.push_back(id(w));
  return out;
}

std::string Tokenizer::decode(std::span<const int> ids) const {
  std::string out;
  for (const int i : ids) {
    if (i < kNumSpecial) continue;
    if (!out.empty()) out += ' ';
    out += word(i);
  }
  return out;
}

int Tokenizer::id(std::string_view w) const {
  const auto it = index_.find(std::string(w));
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Tokenizer::word(int i) const {
  if (i < 0 || static_cast<std::size_t>(i) >= vocab_.size()) {
    throw ContractError("tokenizer: id " + std::to_string(i) + " out of range");
  }
  return vocab_[static_cast<std::size_t>(i)];
}

}  // namespace medos::tok
