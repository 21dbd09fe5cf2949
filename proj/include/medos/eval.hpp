// Copyright 2026 The MEDOS Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "medos/corpus.hpp"
#include "medos/generate.hpp"
#include "medos/model.hpp"
#include "medos/tokenizer.hpp"

namespace medos::eval {

enum class RougeVariant { R1, R2, RL };
std::string_view to_string(RougeVariant v);
RougeVariant parse_variant(std::string_view s);  // r1 | r2 | rl (any case)

struct RougeScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  RougeVariant variant = RougeVariant::R1;
};

// Lowercased maximal runs of ASCII letters/digits; bytes >= 0x80 count as
// letters so UTF-8 words stay whole.
std::vector<std::string> rouge_tokens(std::string_view text);

RougeScore rouge_n(std::string_view candidate, std::string_view reference, std::size_t n);
RougeScore rouge_l(std::string_view candidate, std::string_view reference);
RougeScore rouge(std::string_view candidate, std::string_view reference, RougeVariant v);
std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b);

enum class MultiRef { max, mean };
std::string_view to_string(MultiRef m);
MultiRef parse_multi_ref(std::string_view s);

struct ProductScores {
  std::string product_id;
  std::size_t references = 0;
  std::map<RougeVariant, RougeScore> scores;
};

struct EvalReport {
  std::vector<RougeVariant> variants;
  MultiRef multi_ref = MultiRef::max;
  std::vector<ProductScores> per_product;
  std::map<RougeVariant, RougeScore> corpus;  // arithmetic means over per_product
  std::vector<std::string> skipped;           // no reference available

  nlohmann::ordered_json to_json() const;
  std::string render_table() const;  // percent scale
};

struct CandidateSummary {
  std::string product_id;
  std::string text;
};

// References are the product's gold summaries, or its stored annotation of
// `annotation_kind` when given. Multi-reference scores take the best F1
// reference (max) or average P/R/F1 over references (mean).
EvalReport corpus_rouge(std::span<const CandidateSummary> summaries, std::span<const corpus::Product> products,
                        std::span<const RougeVariant> variants, MultiRef multi_ref = MultiRef::max,
                        const std::optional<std::string>& annotation_kind = std::nullopt);

struct TTestResult {
  std::size_t n = 0;
  std::size_t df = 0;
  double mean_diff = 0.0;
  std::optional<double> t;
  std::optional<double> p;  // two-sided
  bool degenerate = false;
  std::string note;
};

TTestResult paired_t_test(std::span<const double> a, std::span<const double> b);

struct RatingsMatrix {
  std::vector<std::vector<int>> ratings;  // items x raters
  std::vector<int> categories;            // declared category set
};

struct KappaResult {
  std::optional<double> kappa;
  double p_bar = 0.0;
  double p_e = 0.0;
  bool degenerate = false;
  std::string note;
};

KappaResult fleiss_kappa(const RatingsMatrix& m);

struct Judgment {
  std::vector<std::string> models;  // models shown in this judgment
  std::string best;
  std::string worst;
};

struct BestWorstResult {
  std::map<std::string, double> scores;
  std::map<std::string, std::size_t> judgments;  // judgments each model appeared in
  std::vector<std::string> rejected;             // one entry per rejected judgment
};

// (#best - #worst) / #judgments containing the model.
BestWorstResult best_worst_scores(std::span<const Judgment> judgments);

struct SourceOverlapEntry {
  std::optional<RougeScore> mean;  // absent when no product has the source
  std::size_t products = 0;
  std::size_t absent = 0;
};

struct SourceOverlap {
  SourceOverlapEntry reviews, description, qa;
  nlohmann::ordered_json to_json() const;
};

// ROUGE-1 of each summary against the product's concatenated reviews, its
// description and its concatenated QA pairs.
SourceOverlap source_overlap(std::span<const CandidateSummary> summaries, std::span<const corpus::Product> products);

struct AblationRow {
  std::string label;
  model::SourceSelection sources;
  std::map<RougeVariant, double> f1;  // in [0, 1]
  std::vector<CandidateSummary> summaries;
};

struct AblationTable {
  std::vector<AblationRow> rows;
  nlohmann::ordered_json to_json() const;
  std::string render_table() const;  // percent scale
};

// The four source configurations, full first, reviews-only last.
const std::vector<std::pair<std::string, model::SourceSelection>>& ablation_configurations();

AblationTable run_ablation(const model::ModelParams& p, const tok::Tokenizer& tk,
                           std::span<const corpus::Product> test, const gen::GenerationConfig& cfg,
                           MultiRef multi_ref = MultiRef::max,
                           const std::optional<std::string>& annotation_kind = std::nullopt);

}  // namespace medos::eval
