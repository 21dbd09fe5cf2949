// Copyright 2026 The MEDOS Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "medos/corpus.hpp"
#include "medos/model.hpp"
#include "medos/tokenizer.hpp"

namespace medos::gen {

struct GenerationConfig {
  std::size_t beam_size = 5;
  std::size_t no_repeat_ngram = 3;  // 0 disables
  std::size_t max_length = 100;     // generated tokens, </s> included
  std::size_t min_length = 0;       // </s> is blocked before this many tokens
  double length_penalty = 0.0;      // score = logprob / length^penalty
  std::vector<int> banned_tokens;   // never generated

  void validate() const;
};

// Log-probabilities of the next token after `prefix` (which starts with <s>).
using NextTokenScorer = std::function<std::vector<double>(std::span<const int> prefix)>;

struct Hypothesis {
  std::vector<int> tokens;  // generated tokens, without <s>; ends with </s> when finished
  double logprob = 0.0;
  double score = 0.0;
  bool finished = false;
};

struct GenerationResult {
  std::vector<int> tokens;  // best hypothesis without <s> and </s>
  double logprob = 0.0;
  double score = 0.0;
  bool truncated = false;             // no hypothesis reached </s>
  std::vector<Hypothesis> finished;   // every completed hypothesis kept by the search, best first
};

double penalized_score(double logprob, std::size_t length, double penalty);

// True when appending `token` to `tokens` would repeat an n-gram of size n.
bool repeats_ngram(std::span<const int> tokens, int token, std::size_t n);

GenerationResult beam_search(const NextTokenScorer& scorer, const GenerationConfig& cfg);
GenerationResult greedy(const NextTokenScorer& scorer, const GenerationConfig& cfg);

// Scorer over a model with the encoder memory computed once.
NextTokenScorer model_scorer(const model::ModelParams& p, const model::TokenizedSources& s);

// Caps max_length by the model's target length.
GenerationConfig for_model(const model::ModelParams& p, GenerationConfig cfg);

GenerationResult beam_search(const model::ModelParams& p, const model::TokenizedSources& s,
                             const GenerationConfig& cfg);

struct Summary {
  std::string product_id;
  std::string text;
  double logprob = 0.0;
  bool truncated = false;
};

// Beam search with <pad>, <s> and <unk> added to the banned tokens.
GenerationResult decode_summary(const model::ModelParams& p, const model::TokenizedSources& s,
                                const GenerationConfig& cfg);

Summary summarize_product(const model::ModelParams& p, const tok::Tokenizer& tk, const corpus::Product& product,
                          const GenerationConfig& cfg, model::SourceSelection sel = {});

// Products are decoded in parallel; output order follows the input.
std::vector<Summary> summarize_all(const model::ModelParams& p, const tok::Tokenizer& tk,
                                   std::span<const corpus::Product> products, const GenerationConfig& cfg,
                                   model::SourceSelection sel = {});

std::string serialize_summary(const Summary& s);
Summary parse_summary(std::string_view line);
void write_summaries(std::span<const Summary> s, const std::string& path);
std::vector<Summary> read_summaries(const std::string& path);

}  // namespace medos::gen
