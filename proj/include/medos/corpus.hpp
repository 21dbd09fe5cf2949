// Copyright 2026 The MEDOS Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "medos/sdc_params.hpp"

namespace medos::corpus {

struct Review {
  std::string review_id;
  std::string text;
  std::optional<int> rating;

  friend bool operator==(const Review&, const Review&) = default;
};

struct QAPair {
  std::string question;
  std::string answer;
  std::string concatenated;  // question + " " + answer

  static QAPair make(std::string question, std::string answer);
  friend bool operator==(const QAPair&, const QAPair&) = default;
};

// A reference summary produced by the annotation client, with the raw
// completion kept for re-normalization.
struct Annotation {
  std::string summary;
  std::string raw;
  std::string prompt_hash;

  friend bool operator==(const Annotation&, const Annotation&) = default;
};

struct Product {
  std::string product_id;
  std::string domain;
  std::vector<Review> reviews;
  std::optional<std::string> description;  // absent, never ""
  std::vector<QAPair> qa_pairs;
  std::optional<std::vector<std::string>> gold_summaries;
  std::map<std::string, Annotation> annotations;  // keyed by prompt kind

  friend bool operator==(const Product&, const Product&) = default;
};

enum class Split { train, dev, test };

std::string_view to_string(Split s);
// Throws ContractError on anything other than train/dev/test.
Split parse_split(std::string_view s);

struct Corpus {
  std::vector<Product> products;
  Split split = Split::train;
  std::map<std::string, std::string> provenance;
};

struct LineError {
  std::size_t line = 0;  // 1-based
  std::string message;
};

struct LoadReport {
  std::string path;
  std::size_t lines_read = 0;
  std::size_t products_loaded = 0;
  std::vector<LineError> errors;
  std::vector<std::string> warnings;

  std::string to_json() const;
};

struct LoadResult {
  Corpus corpus;
  LoadReport report;
};

// Reads one product record per line. Malformed lines are recorded in the
// report and skipped; a missing file throws DataError.
LoadResult load_corpus(const std::string& path, Split split);

// Parses one record; throws DataError describing the first problem.
Product parse_product(std::string_view line);
std::string serialize_product(const Product& p);

void write_corpus(const Corpus& c, const std::string& path);

enum class ViolationCode {
  empty_product_id,
  empty_reviews,
  empty_review_text,
  duplicate_review_id,
  empty_question,
  empty_answer,
  qa_concat_mismatch,
  qa_over_cap,
  empty_description,
  insufficient_reviews_for_sdc,
};

struct Violation {
  ViolationCode code;
  std::string message;

  friend bool operator==(const Violation&, const Violation&) = default;
};

std::vector<Violation> validate_product(const Product& p, const SdcHyperparams& cfg);

// Keeps the first min(|qa|, m_cap) pairs.
Product truncate_qa(Product p, std::size_t m_cap);

}  // namespace medos::corpus
