// Copyright 2026 The MEDOS Authors.
// SPDX-License-Identifier: Apache-2.0

#include "medos/corpus.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "medos/error.hpp"
#include "medos/text.hpp"

namespace medos {

void SdcHyperparams::validate() const {
  if (k == 0) throw ContractError("sdc: k must be positive");
  if (!(percentile > 0.0 && percentile <= 100.0)) {
    throw ContractError("sdc: percentile must be in (0, 100]");
  }
  if (lambda1 < 0.0 || lambda2 < 0.0) throw ContractError("sdc: lambdas must be non-negative");
  if (!(lambda1 + lambda2 > 0.0)) throw ContractError("sdc: lambda1 + lambda2 must be positive");
  if (m_cap == 0) throw ContractError("sdc: m_cap must be positive");
}

namespace corpus {

using nlohmann::ordered_json;
using text::normalize_whitespace;

QAPair QAPair::make(std::string question, std::string answer) {
  QAPair qa{std::move(question), std::move(answer), {}};
  qa.concatenated = qa.question + " " + qa.answer;
  return qa;
}

std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::dev: return "dev";
    case Split::test: return "test";
  }
  return "train";
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "dev") return Split::dev;
  if (s == "test") return Split::test;
  throw ContractError("unknown split '" + std::string(s) + "' (expected train, dev or test)");
}

namespace {

std::string require_text(const ordered_json& j, const char* field, const std::string& where) {
  if (!j.contains(field) || !j.at(field).is_string()) {
    throw DataError(where + ": field '" + field + "' must be a string");
  }
  std::string t = normalize_whitespace(j.at(field).get<std::string>());
  if (t.empty()) throw DataError(where + ": field '" + field + "' is empty");
  return t;
}

Review parse_review(const ordered_json& j, std::size_t index) {
  const std::string where = "reviews[" + std::to_string(index) + "]";
  Review r;
  if (j.is_string()) {
    r.review_id = "r" + std::to_string(index);
    r.text = normalize_whitespace(j.get<std::string>());
    if (r.text.empty()) throw DataError(where + ": empty review text");
    return r;
  }
  if (!j.is_object()) throw DataError(where + ": expected string or object");
  r.text = require_text(j, "text", where);
  if (j.contains("review_id")) {
    if (!j.at("review_id").is_string()) throw DataError(where + ": review_id must be a string");
    r.review_id = j.at("review_id").get<std::string>();
  } else {
    r.review_id = "r" + std::to_string(index);
  }
  if (j.contains("rating") && !j.at("rating").is_null()) {
    if (!j.at("rating").is_number_integer()) throw DataError(where + ": rating must be an integer");
    const int rating = j.at("rating").get<int>();
    if (rating < 1 || rating > 5) throw DataError(where + ": rating out of range 1-5");
    r.rating = rating;
  }
  return r;
}

std::vector<std::string> parse_string_list(const ordered_json& j, const char* field) {
  if (!j.is_array()) throw DataError(std::string("field '") + field + "' must be an array");
  std::vector<std::string> out;
  for (const auto& s : j) {
    if (!s.is_string()) throw DataError(std::string("field '") + field + "' must hold strings");
    out.push_back(normalize_whitespace(s.get<std::string>()));
  }
  return out;
}

}  // namespace

Product parse_product(std::string_view line) {
  ordered_json j;
  try {
    j = ordered_json::parse(line);
  } catch (const ordered_json::parse_error& e) {
    throw DataError(std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw DataError("record must be a JSON object");

  Product p;
  if (!j.contains("product_id") || !j.at("product_id").is_string()) {
    throw DataError("field 'product_id' must be a string");
  }
  p.product_id = j.at("product_id").get<std::string>();
  if (p.product_id.empty()) throw DataError("field 'product_id' is empty");
  if (j.contains("domain")) {
    if (!j.at("domain").is_string()) throw DataError("field 'domain' must be a string");
    p.domain = j.at("domain").get<std::string>();
  }

  if (!j.contains("reviews") || !j.at("reviews").is_array()) {
    throw DataError("field 'reviews' must be an array");
  }
  std::set<std::string> ids;
  for (std::size_t i = 0; i < j.at("reviews").size(); ++i) {
    Review r = parse_review(j.at("reviews")[i], i);
    if (!ids.insert(r.review_id).second) throw DataError("duplicate review_id '" + r.review_id + "'");
    p.reviews.push_back(std::move(r));
  }

  if (j.contains("description") && !j.at("description").is_null()) {
    if (!j.at("description").is_string()) throw DataError("field 'description' must be a string");
    std::string d = normalize_whitespace(j.at("description").get<std::string>());
    if (!d.empty()) p.description = std::move(d);
  }

  if (j.contains("qa")) {
    if (!j.at("qa").is_array()) throw DataError("field 'qa' must be an array");
    for (std::size_t i = 0; i < j.at("qa").size(); ++i) {
      const auto& q = j.at("qa")[i];
      const std::string where = "qa[" + std::to_string(i) + "]";
      if (!q.is_object()) throw DataError(where + ": expected object");
      p.qa_pairs.push_back(QAPair::make(require_text(q, "question", where), require_text(q, "answer", where)));
    }
  }

  if (j.contains("summaries") && !j.at("summaries").is_null()) {
    p.gold_summaries = parse_string_list(j.at("summaries"), "summaries");
  }

  if (j.contains("annotations")) {
    const auto& a = j.at("annotations");
    if (!a.is_object()) throw DataError("field 'annotations' must be an object");
    for (const auto& [kind, v] : a.items()) {
      if (!v.is_object()) throw DataError("annotation '" + kind + "' must be an object");
      Annotation ann;
      ann.summary = v.value("summary", "");
      ann.raw = v.value("raw", "");
      ann.prompt_hash = v.value("prompt_hash", "");
      p.annotations.emplace(kind, std::move(ann));
    }
  }
  return p;
}

std::string serialize_product(const Product& p) {
  ordered_json j;
  j["product_id"] = p.product_id;
  j["domain"] = p.domain;
  ordered_json reviews = ordered_json::array();
  for (const auto& r : p.reviews) {
    ordered_json jr;
    jr["review_id"] = r.review_id;
    jr["text"] = r.text;
    if (r.rating) jr["rating"] = *r.rating;
    reviews.push_back(std::move(jr));
  }
  j["reviews"] = std::move(reviews);
  j["description"] = p.description ? ordered_json(*p.description) : ordered_json(nullptr);
  ordered_json qa = ordered_json::array();
  for (const auto& q : p.qa_pairs) qa.push_back({{"question", q.question}, {"answer", q.answer}});
  j["qa"] = std::move(qa);
  j["summaries"] = p.gold_summaries ? ordered_json(*p.gold_summaries) : ordered_json(nullptr);
  if (!p.annotations.empty()) {
    ordered_json a = ordered_json::object();
    for (const auto& [kind, ann] : p.annotations) {
      a[kind] = {{"summary", ann.summary}, {"raw", ann.raw}, {"prompt_hash", ann.prompt_hash}};
    }
    j["annotations"] = std::move(a);
  }
  return j.dump();
}

std::string LoadReport::to_json() const {
  ordered_json j;
  j["path"] = path;
  j["lines_read"] = lines_read;
  j["products_loaded"] = products_loaded;
  ordered_json errs = ordered_json::array();
  for (const auto& e : errors) errs.push_back({{"line", e.line}, {"message", e.message}});
  j["errors"] = std::move(errs);
  j["warnings"] = warnings;
  return j.dump(2) + "\n";
}

LoadResult load_corpus(const std::string& path, Split split) {
  std::ifstream in(path);
  if (!in) throw DataError("corpus file not found: " + path);

  LoadResult result;
  result.corpus.split = split;
  result.corpus.provenance["path"] = path;
  result.corpus.provenance["split"] = std::string(to_string(split));
  result.report.path = path;

  std::set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (normalize_whitespace(line).empty()) continue;
    try {
      Product p = parse_product(line);
      if (!seen.insert(p.product_id).second) {
        throw DataError("duplicate product_id '" + p.product_id + "'");
      }
      result.corpus.products.push_back(std::move(p));
    } catch (const DataError& e) {
      result.report.errors.push_back({lineno, e.what()});
    }
  }
  result.report.lines_read = lineno;
  result.report.products_loaded = result.corpus.products.size();
  if (result.corpus.products.empty()) result.report.warnings.push_back("corpus contains no products");
  result.corpus.provenance["content_hash"] = text::file_hash(path);
  return result;
}

void write_corpus(const Corpus& c, const std::string& path) {
  std::string out;
  for (const auto& p : c.products) {
    out += serialize_product(p);
    out += '\n';
  }
  text::write_file_atomic(path, out);
}

std::vector<Violation> validate_product(const Product& p, const SdcHyperparams& cfg) {
  std::vector<Violation> v;
  if (p.product_id.empty()) v.push_back({ViolationCode::empty_product_id, "product_id is empty"});
  if (p.reviews.empty()) {
    v.push_back({ViolationCode::empty_reviews, "empty reviews"});
  } else if (p.reviews.size() < cfg.k + 1) {
    v.push_back({ViolationCode::insufficient_reviews_for_sdc,
                 "insufficient reviews for SDC: " + std::to_string(p.reviews.size()) + " < k+1 = " +
                     std::to_string(cfg.k + 1)});
  }
  std::set<std::string> ids;
  for (const auto& r : p.reviews) {
    if (normalize_whitespace(r.text).empty()) {
      v.push_back({ViolationCode::empty_review_text, "review '" + r.review_id + "' has empty text"});
    }
    if (!ids.insert(r.review_id).second) {
      v.push_back({ViolationCode::duplicate_review_id, "duplicate review_id '" + r.review_id + "'"});
    }
  }
  for (std::size_t i = 0; i < p.qa_pairs.size(); ++i) {
    const auto& q = p.qa_pairs[i];
    const std::string where = "qa[" + std::to_string(i) + "]";
    if (q.question.empty()) v.push_back({ViolationCode::empty_question, where + " has empty question"});
    if (q.answer.empty()) v.push_back({ViolationCode::empty_answer, where + " has empty answer"});
    if (q.concatenated != q.question + " " + q.answer) {
      v.push_back({ViolationCode::qa_concat_mismatch, where + " concatenation mismatch"});
    }
  }
  if (p.qa_pairs.size() > cfg.m_cap) {
    v.push_back({ViolationCode::qa_over_cap, std::to_string(p.qa_pairs.size()) +
                                                 " question-answer pairs exceed cap " +
                                                 std::to_string(cfg.m_cap)});
  }
  if (p.description && p.description->empty()) {
    v.push_back({ViolationCode::empty_description, "description present but empty"});
  }
  return v;
}

Product truncate_qa(Product p, std::size_t m_cap) {
  if (m_cap == 0) throw ContractError("truncate_qa: m_cap must be >= 1");
  if (p.qa_pairs.size() > m_cap) p.qa_pairs.resize(m_cap);
  return p;
}

}  // namespace corpus
}  // namespace medos
