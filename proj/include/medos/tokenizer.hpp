// Copyright 2026 The MEDOS Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace medos::tok {

inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;  // also the source separator
inline constexpr int kUnk = 3;
inline constexpr int kNumSpecial = 4;

// Whitespace word-level vocabulary. Text whose words are all in the
// vocabulary round-trips exactly through encode/decode (after whitespace
// normalization).
class Tokenizer {
 public:
  Tokenizer();
  // vocab[0..3] must be the special tokens.
  explicit Tokenizer(std::vector<std::string> vocab);

  // Words ordered by frequency (descending) then bytewise. max_vocab counts
  // the special tokens; 0 means unlimited.
  static Tokenizer build(std::span<const std::string> texts, std::size_t min_count = 1, std::size_t max_vocab = 0);

  std::vector<int> encode(std::string_view text) const;  // no sentinels
  // Special tokens are dropped.
  std::string decode(std::span<const int> ids) const;

  int id(std::string_view word) const;  // kUnk when unknown
  const std::string& word(int id) const;
  std::size_t size() const noexcept { return vocab_.size(); }
  const std::vector<std::string>& vocab() const noexcept { return vocab_; }

  friend bool operator==(const Tokenizer& a, const Tokenizer& b) { return a.vocab_ == b.vocab_; }

 private:
  std::vector<std::string> vocab_;
  std::unordered_map<std::string, int> index_;
};

const std::vector<std::string>& special_tokens();

}  // namespace medos::tok
