// Copyright 2026 The MEDOS Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "medos/corpus.hpp"
#include "medos/embed.hpp"
#include "medos/sdc_params.hpp"

// Synthetic quadruplet construction: a review close to both the description
// and the question-answers is chosen as pseudo-summary, and its k nearest
// sibling reviews become the input.
namespace medos::sdc {

// Review-review cosine similarities with a zeroed diagonal.
struct SimilarityMatrix {
  Matrix values;
  std::vector<std::string> review_keys;
};

enum class ScoreKind { ds, ds_absent, qs, qs_absent, ss };

struct ScoreVector {
  std::vector<double> values;
  ScoreKind kind = ScoreKind::ss;
};

struct SyntheticQuadruplet {
  std::string product_id;
  std::vector<std::size_t> input_indices;
  std::vector<std::string> input_review_ids;
  std::vector<std::string> input_reviews;
  std::optional<std::string> description;
  std::vector<std::string> qa;
  std::size_t pseudo_summary_index = 0;
  std::string pseudo_summary_id;
  std::string pseudo_summary;
  double ss_score = 0.0;
  std::vector<double> input_review_sims;

  friend bool operator==(const SyntheticQuadruplet&, const SyntheticQuadruplet&) = default;
};

SimilarityMatrix review_similarity_matrix(const embed::EmbeddingMatrix& e_r);

// `e_d` null means the product has no description: zero vector, kind ds_absent.
ScoreVector description_scores(const embed::EmbeddingMatrix& e_r, const embed::EmbeddingMatrix* e_d);

// Per-review mean similarity over the question-answer embeddings (one row each).
ScoreVector qa_scores(const embed::EmbeddingMatrix& e_r, std::span<const embed::EmbeddingMatrix> e_q);

ScoreVector combined_scores(const ScoreVector& ds, const ScoreVector& qs, double lambda1, double lambda2);

// Indices with ss_i >= nearest-rank percentile of ss, ordered by (ss desc, index asc).
std::vector<std::size_t> select_pseudo_summaries(const ScoreVector& ss, double percentile);

// Rank of the nearest-rank percentile, in [1, n].
std::size_t nearest_rank(double percentile, std::size_t n);

// The k most similar other reviews of `r_index`, ordered by (sim desc, index asc).
std::vector<std::size_t> select_input_reviews(const SimilarityMatrix& sim, std::size_t r_index, std::size_t k);

struct ProductEmbeddings {
  embed::EmbeddingMatrix reviews;
  std::optional<embed::EmbeddingMatrix> description;
  std::vector<embed::EmbeddingMatrix> qa;  // one single-row matrix per pair
};

ProductEmbeddings product_embeddings(const corpus::Product& p, const embed::EmbeddingStore& store);

enum class Mode { full, reviews_only, random };

std::string_view to_string(Mode m);
Mode parse_mode(std::string_view s);

struct BuildResult {
  std::vector<SyntheticQuadruplet> quadruplets;
  std::optional<std::string> skip_reason;
};

// Full-mode construction for one product. Products without description and
// question-answers are skipped with a reason.
BuildResult build_quadruplets(const corpus::Product& p, const ProductEmbeddings& emb, const SdcHyperparams& hp);

// Mode-aware variant. `seed` is only used by Mode::random.
BuildResult build_quadruplets(const corpus::Product& p, const ProductEmbeddings& emb, const SdcHyperparams& hp,
                              Mode mode, std::uint64_t seed);

struct SkippedProduct {
  std::string product_id;
  std::string reason;
};

struct SdcRun {
  std::vector<SyntheticQuadruplet> quadruplets;  // ordered by (product_id, ss desc)
  std::vector<SkippedProduct> skipped;
};

// Runs construction over a corpus. QA pairs are truncated to m_cap and
// products failing validation are skipped. Per-product seeds for random mode
// are drawn in product_id order from one generator seeded with `seed`.
SdcRun run_sdc(const corpus::Corpus& c, const embed::EmbeddingStore& store, const SdcHyperparams& hp,
               Mode mode = Mode::full, std::uint64_t seed = 0, bool parallel = true);

std::string serialize_quadruplet(const SyntheticQuadruplet& q);
SyntheticQuadruplet parse_quadruplet(std::string_view line);
void write_quadruplets(std::span<const SyntheticQuadruplet> qs, const std::string& path);
std::vector<SyntheticQuadruplet> read_quadruplets(const std::string& path);

}  // namespace medos::sdc
