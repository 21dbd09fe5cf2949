// Copyright 2026 The MEDOS Authors.
// SPDX-License-Identifier: Apache-2.0

#include "medos/sdc.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include <json.hpp>

#include "medos/error.hpp"
#include "medos/text.hpp"

namespace medos::sdc {

using embed::EmbeddingMatrix;
using nlohmann::ordered_json;

namespace {

// (score desc, index asc)
std::vector<std::size_t> rank_indices(std::span<const double> score, std::vector<std::size_t> idx) {
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (score[a] != score[b]) return score[a] > score[b];
    return a < b;
  });
  return idx;
}

void check_single_row(const EmbeddingMatrix& m, const char* what) {
  if (m.rows() != 1) throw ContractError(std::string(what) + " embedding must have exactly one row");
}

}  // namespace

SimilarityMatrix review_similarity_matrix(const EmbeddingMatrix& e_r) {
  if (e_r.rows() < 2) throw ContractError("review similarity needs at least 2 reviews");
  SimilarityMatrix sim{embed::cosine_sim(e_r, e_r), e_r.row_keys};
  for (std::size_t i = 0; i < sim.values.rows; ++i) sim.values(i, i) = 0.0;
  return sim;
}

ScoreVector description_scores(const EmbeddingMatrix& e_r, const EmbeddingMatrix* e_d) {
  if (e_d == nullptr) return {std::vector<double>(e_r.rows(), 0.0), ScoreKind::ds_absent};
  check_single_row(*e_d, "description");
  const Matrix s = embed::cosine_sim(e_r, *e_d);
  return {s.data, ScoreKind::ds};
}

ScoreVector qa_scores(const EmbeddingMatrix& e_r, std::span<const EmbeddingMatrix> e_q) {
  std::vector<double> acc(e_r.rows(), 0.0);
  if (e_q.empty()) return {acc, ScoreKind::qs_absent};
  for (const auto& q : e_q) {
    check_single_row(q, "question-answer");
    const Matrix s = embed::cosine_sim(e_r, q);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += s.data[i];
  }
  const double n = static_cast<double>(e_q.size());
  for (double& v : acc) v /= n;
  return {acc, ScoreKind::qs};
}

ScoreVector combined_scores(const ScoreVector& ds, const ScoreVector& qs, double lambda1, double lambda2) {
  if (ds.values.size() != qs.values.size()) throw ContractError("combined_scores: length mismatch");
  ScoreVector ss{std::vector<double>(ds.values.size()), ScoreKind::ss};
  for (std::size_t i = 0; i < ss.values.size(); ++i) {
    ss.values[i] = lambda1 * ds.values[i] + lambda2 * qs.values[i];
  }
  return ss;
}

std::size_t nearest_rank(double percentile, std::size_t n) {
  if (n == 0) throw ContractError("nearest_rank: empty score vector");
  const double r = std::ceil(percentile * static_cast<double>(n) / 100.0);
  return std::clamp<std::size_t>(r < 1.0 ? 1 : static_cast<std::size_t>(r), 1, n);
}

std::vector<std::size_t> select_pseudo_summaries(const ScoreVector& ss, double percentile) {
  const std::size_t n = ss.values.size();
  if (n < 2) throw ContractError("select_pseudo_summaries needs at least 2 scores");
  if (!(percentile > 0.0 && percentile <= 100.0)) throw ContractError("percentile must be in (0, 100]");
  std::vector<double> sorted = ss.values;
  std::sort(sorted.begin(), sorted.end());
  const double threshold = sorted[nearest_rank(percentile, n) - 1];
  std::vector<std::size_t> picked;
  for (std::size_t i = 0; i < n; ++i) {
    if (ss.values[i] >= threshold) picked.push_back(i);
  }
  return rank_indices(ss.values, std::move(picked));
}

std::vector<std::size_t> select_input_reviews(const SimilarityMatrix& sim, std::size_t r_index, std::size_t k) {
  const std::size_t n = sim.values.rows;
  if (n < k + 1) {
    throw ContractError("select_input_reviews: " + std::to_string(n) + " reviews cannot supply k=" +
                        std::to_string(k) + " inputs plus a pseudo-summary");
  }
  if (r_index >= n) throw ContractError("select_input_reviews: review index out of range");
  std::vector<std::size_t> others;
  for (std::size_t j = 0; j < n; ++j) {
    if (j != r_index) others.push_back(j);
  }
  const auto row = sim.values.row(r_index);
  auto ranked = rank_indices(row, std::move(others));
  ranked.resize(k);
  return ranked;
}

ProductEmbeddings product_embeddings(const corpus::Product& p, const embed::EmbeddingStore& store) {
  ProductEmbeddings e;
  std::vector<std::string> keys;
  for (const auto& r : p.reviews) keys.push_back(r.text);
  e.reviews = store.lookup(keys);
  // Rows are keyed by review id so errors and provenance name reviews.
  for (std::size_t i = 0; i < p.reviews.size(); ++i) e.reviews.row_keys[i] = p.reviews[i].review_id;
  if (p.description) {
    const std::string d[] = {*p.description};
    e.description = store.lookup(d);
  }
  for (const auto& q : p.qa_pairs) {
    const std::string k[] = {q.concatenated};
    e.qa.push_back(store.lookup(k));
  }
  return e;
}

std::string_view to_string(Mode m) {
  switch (m) {
    case Mode::full: return "full";
    case Mode::reviews_only: return "reviews-only";
    case Mode::random: return "random";
  }
  return "full";
}

Mode parse_mode(std::string_view s) {
  if (s == "full") return Mode::full;
  if (s == "reviews-only") return Mode::reviews_only;
  if (s == "random") return Mode::random;
  throw ContractError("unknown sdc mode '" + std::string(s) + "'");
}

namespace {

SyntheticQuadruplet make_quadruplet(const corpus::Product& p, const SimilarityMatrix& sim, std::size_t r,
                                    double score, std::size_t k) {
  SyntheticQuadruplet q;
  q.product_id = p.product_id;
  q.input_indices = select_input_reviews(sim, r, k);
  for (const std::size_t j : q.input_indices) {
    q.input_review_ids.push_back(p.reviews[j].review_id);
    q.input_reviews.push_back(p.reviews[j].text);
    q.input_review_sims.push_back(sim.values(r, j));
  }
  q.description = p.description;
  for (const auto& qa : p.qa_pairs) q.qa.push_back(qa.concatenated);
  q.pseudo_summary_index = r;
  q.pseudo_summary_id = p.reviews[r].review_id;
  q.pseudo_summary = p.reviews[r].text;
  q.ss_score = score;
  return q;
}

void require_valid(const corpus::Product& p, const SdcHyperparams& hp) {
  hp.validate();
  const auto v = corpus::validate_product(p, hp);
  if (!v.empty()) throw ContractError("product '" + p.product_id + "' is not SDC-eligible: " + v.front().message);
}

}  // namespace

BuildResult build_quadruplets(const corpus::Product& p, const ProductEmbeddings& emb, const SdcHyperparams& hp) {
  return build_quadruplets(p, emb, hp, Mode::full, 0);
}

BuildResult build_quadruplets(const corpus::Product& p, const ProductEmbeddings& emb, const SdcHyperparams& hp,
                              Mode mode, std::uint64_t seed) {
  require_valid(p, hp);
  if (emb.reviews.rows() != p.reviews.size()) throw ContractError("review embeddings do not match reviews");
  BuildResult out;
  const std::size_t n = p.reviews.size();
  const SimilarityMatrix sim = review_similarity_matrix(emb.reviews);

  std::vector<std::size_t> picked;
  ScoreVector ss;
  switch (mode) {
    case Mode::full: {
      if (!emb.description && emb.qa.empty()) {
        out.skip_reason = "no description and no question-answers";
        return out;
      }
      const auto ds = description_scores(emb.reviews, emb.description ? &*emb.description : nullptr);
      const auto qs = qa_scores(emb.reviews, emb.qa);
      ss = combined_scores(ds, qs, hp.lambda1, hp.lambda2);
      picked = select_pseudo_summaries(ss, hp.percentile);
      break;
    }
    case Mode::reviews_only: {
      ss.values.assign(n, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        const auto row = sim.values.row(i);
        ss.values[i] = std::accumulate(row.begin(), row.end(), 0.0) / static_cast<double>(n);
      }
      picked = select_pseudo_summaries(ss, hp.percentile);
      break;
    }
    case Mode::random: {
      const std::size_t count = n - nearest_rank(hp.percentile, n) + 1;
      std::vector<std::size_t> idx(n);
      std::iota(idx.begin(), idx.end(), 0);
      std::mt19937_64 rng(seed);
      std::shuffle(idx.begin(), idx.end(), rng);
      picked.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(count));
      ss.values.assign(n, 0.0);
      break;
    }
  }
  for (const std::size_t r : picked) out.quadruplets.push_back(make_quadruplet(p, sim, r, ss.values[r], hp.k));
  return out;
}

SdcRun run_sdc(const corpus::Corpus& c, const embed::EmbeddingStore& store, const SdcHyperparams& hp, Mode mode,
               std::uint64_t seed, bool parallel) {
  hp.validate();
  std::vector<const corpus::Product*> order;
  for (const auto& p : c.products) order.push_back(&p);
  std::stable_sort(order.begin(), order.end(),
                   [](const auto* a, const auto* b) { return a->product_id < b->product_id; });

  std::mt19937_64 master(seed);
  std::vector<std::uint64_t> seeds(order.size());
  for (auto& s : seeds) s = master();

  std::vector<BuildResult> results(order.size());
  std::vector<std::string> failures(order.size());
  const auto n = static_cast<std::ptrdiff_t>(order.size());
  auto one = [&](std::ptrdiff_t i) {
    const auto u = static_cast<std::size_t>(i);
    const corpus::Product p = corpus::truncate_qa(*order[u], hp.m_cap);
    const auto violations = corpus::validate_product(p, hp);
    if (!violations.empty()) {
      results[u].skip_reason = violations.front().message;
      return;
    }
    try {
      results[u] = build_quadruplets(p, product_embeddings(p, store), hp, mode, seeds[u]);
    } catch (const Error& e) {
      failures[u] = e.what();
    }
  };
  if (parallel) {
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t i = 0; i < n; ++i) one(i);
  } else {
    for (std::ptrdiff_t i = 0; i < n; ++i) one(i);
  }

  SdcRun run;
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (!failures[i].empty()) throw DataError("sdc failed for product '" + order[i]->product_id + "': " + failures[i]);
    if (results[i].skip_reason) run.skipped.push_back({order[i]->product_id, *results[i].skip_reason});
    for (auto& q : results[i].quadruplets) run.quadruplets.push_back(std::move(q));
  }
  return run;
}

std::string serialize_quadruplet(const SyntheticQuadruplet& q) {
  ordered_json j;
  j["product_id"] = q.product_id;
  j["pseudo_summary_index"] = q.pseudo_summary_index;
  j["pseudo_summary_id"] = q.pseudo_summary_id;
  j["pseudo_summary"] = q.pseudo_summary;
  j["ss_score"] = q.ss_score;
  j["input_indices"] = q.input_indices;
  j["input_review_ids"] = q.input_review_ids;
  j["input_reviews"] = q.input_reviews;
  j["input_review_sims"] = q.input_review_sims;
  j["description"] = q.description ? ordered_json(*q.description) : ordered_json(nullptr);
  j["qa"] = q.qa;
  return j.dump();
}

SyntheticQuadruplet parse_quadruplet(std::string_view line) {
  try {
    const auto j = ordered_json::parse(line);
    SyntheticQuadruplet q;
    q.product_id = j.at("product_id").get<std::string>();
    q.pseudo_summary_index = j.value("pseudo_summary_index", std::size_t{0});
    q.pseudo_summary_id = j.value("pseudo_summary_id", std::string{});
    q.pseudo_summary = j.at("pseudo_summary").get<std::string>();
    q.ss_score = j.value("ss_score", 0.0);
    q.input_indices = j.value("input_indices", std::vector<std::size_t>{});
    q.input_review_ids = j.value("input_review_ids", std::vector<std::string>{});
    q.input_reviews = j.at("input_reviews").get<std::vector<std::string>>();
    q.input_review_sims = j.value("input_review_sims", std::vector<double>{});
    if (j.contains("description") && !j.at("description").is_null()) q.description = j.at("description").get<std::string>();
    q.qa = j.value("qa", std::vector<std::string>{});
    return q;
  } catch (const ordered_json::exception& e) {
    throw DataError(std::string("malformed quadruplet record: ") + e.what());
  }
}

void write_quadruplets(std::span<const SyntheticQuadruplet> qs, const std::string& path) {
  std::string out;
  for (const auto& q : qs) {
    out += serialize_quadruplet(q);
    out += '\n';
  }
  text::write_file_atomic(path, out);
}

std::vector<SyntheticQuadruplet> read_quadruplets(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("quadruplet file not found: " + path);
  std::vector<SyntheticQuadruplet> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(parse_quadruplet(line));
  }
  return out;
}

}  // namespace medos::sdc
