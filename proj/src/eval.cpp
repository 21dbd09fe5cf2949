// Copyright 2026 The MEDOS Authors.
// SPDX-License-Identifier: Apache-2.0

#include "medos/eval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <set>

#include <boost/math/distributions/students_t.hpp>

#include "medos/error.hpp"

namespace medos::eval {

using nlohmann::ordered_json;

std::string_view to_string(RougeVariant v) {
  switch (v) {
    case RougeVariant::R1: return "R1";
    case RougeVariant::R2: return "R2";
    case RougeVariant::RL: return "RL";
  }
  return "?";
}

RougeVariant parse_variant(std::string_view s) {
  std::string l(s);
  for (char& c : l) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (l == "r1" || l == "rouge-1" || l == "rouge1") return RougeVariant::R1;
  if (l == "r2" || l == "rouge-2" || l == "rouge2") return RougeVariant::R2;
  if (l == "rl" || l == "rouge-l" || l == "rougel") return RougeVariant::RL;
  throw ContractError("unknown ROUGE variant '" + std::string(s) + "' (expected r1, r2 or rl)");
}

std::string_view to_string(MultiRef m) { return m == MultiRef::max ? "max" : "mean"; }

MultiRef parse_multi_ref(std::string_view s) {
  if (s == "max") return MultiRef::max;
  if (s == "mean") return MultiRef::mean;
  throw ContractError("unknown multi-reference mode '" + std::string(s) + "' (expected max or mean)");
}

std::vector<std::string> rouge_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (const char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    if (std::isalnum(u) || u >= 0x80) {
      cur += static_cast<char>(std::tolower(u));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

namespace {

RougeScore make_score(double overlap, double cand, double ref, RougeVariant v) {
  RougeScore s;
  s.variant = v;
  if (cand == 0 || ref == 0) return s;
  s.precision = overlap / cand;
  s.recall = overlap / ref;
  s.f1 = s.precision + s.recall > 0 ? 2 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

std::map<std::vector<std::string>, std::size_t> ngram_counts(const std::vector<std::string>& t, std::size_t n) {
  std::map<std::vector<std::string>, std::size_t> c;
  for (std::size_t i = 0; i + n <= t.size(); ++i) ++c[std::vector<std::string>(t.begin() + i, t.begin() + i + n)];
  return c;
}

RougeScore rouge_n_tokens(const std::vector<std::string>& c, const std::vector<std::string>& r, std::size_t n) {
  if (n == 0) throw ContractError("rouge_n: n must be >= 1");
  const RougeVariant v = n == 1 ? RougeVariant::R1 : RougeVariant::R2;
  const auto cc = ngram_counts(c, n);
  const auto rc = ngram_counts(r, n);
  std::size_t overlap = 0;
  for (const auto& [g, k] : cc) {
    const auto it = rc.find(g);
    if (it != rc.end()) overlap += std::min(k, it->second);
  }
  const double nc = c.size() >= n ? static_cast<double>(c.size() - n + 1) : 0.0;
  const double nr = r.size() >= n ? static_cast<double>(r.size() - n + 1) : 0.0;
  return make_score(static_cast<double>(overlap), nc, nr, v);
}

}  // namespace

RougeScore rouge_n(std::string_view candidate, std::string_view reference, std::size_t n) {
  return rouge_n_tokens(rouge_tokens(candidate), rouge_tokens(reference), n);
}

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

RougeScore rouge_l(std::string_view candidate, std::string_view reference) {
  const auto c = rouge_tokens(candidate);
  const auto r = rouge_tokens(reference);
  return make_score(static_cast<double>(lcs_length(c, r)), static_cast<double>(c.size()),
                    static_cast<double>(r.size()), RougeVariant::RL);
}

RougeScore rouge(std::string_view candidate, std::string_view reference, RougeVariant v) {
  switch (v) {
    case RougeVariant::R1: return rouge_n(candidate, reference, 1);
    case RougeVariant::R2: return rouge_n(candidate, reference, 2);
    case RougeVariant::RL: return rouge_l(candidate, reference);
  }
  throw ContractError("rouge: bad variant");
}

// ---------------------------------------------------------------- corpus

namespace {

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", 100.0 * v);
  return buf;
}

ordered_json score_json(const RougeScore& s) {
  return {{"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}};
}

std::optional<std::vector<std::string>> references_of(const corpus::Product& p,
                                                      const std::optional<std::string>& kind) {
  if (kind) {
    const auto it = p.annotations.find(*kind);
    if (it == p.annotations.end()) return std::nullopt;
    return std::vector<std::string>{it->second.summary};
  }
  if (!p.gold_summaries || p.gold_summaries->empty()) return std::nullopt;
  return *p.gold_summaries;
}

}  // namespace

EvalReport corpus_rouge(std::span<const CandidateSummary> summaries, std::span<const corpus::Product> products,
                        std::span<const RougeVariant> variants, MultiRef multi_ref,
                        const std::optional<std::string>& annotation_kind) {
  if (variants.empty()) throw ContractError("corpus_rouge: no metrics requested");
  std::map<std::string, const corpus::Product*> by_id;
  for (const auto& p : products) by_id[p.product_id] = &p;
  EvalReport rep;
  rep.variants.assign(variants.begin(), variants.end());
  rep.multi_ref = multi_ref;
  for (const auto& s : summaries) {
    const auto it = by_id.find(s.product_id);
    const auto refs = it == by_id.end() ? std::nullopt : references_of(*it->second, annotation_kind);
    if (!refs) {
      rep.skipped.push_back(s.product_id);
      continue;
    }
    ProductScores ps;
    ps.product_id = s.product_id;
    ps.references = refs->size();
    for (const RougeVariant v : variants) {
      RougeScore agg;
      agg.variant = v;
      for (std::size_t i = 0; i < refs->size(); ++i) {
        const RougeScore sc = rouge(s.text, (*refs)[i], v);
        if (multi_ref == MultiRef::max) {
          if (i == 0 || sc.f1 > agg.f1) agg = sc;
        } else {
          agg.precision += sc.precision / static_cast<double>(refs->size());
          agg.recall += sc.recall / static_cast<double>(refs->size());
          agg.f1 += sc.f1 / static_cast<double>(refs->size());
        }
      }
      ps.scores[v] = agg;
    }
    rep.per_product.push_back(std::move(ps));
  }
  for (const RougeVariant v : variants) {
    RougeScore m;
    m.variant = v;
    const double n = static_cast<double>(rep.per_product.size());
    for (const auto& ps : rep.per_product) {
      m.precision += ps.scores.at(v).precision / n;
      m.recall += ps.scores.at(v).recall / n;
      m.f1 += ps.scores.at(v).f1 / n;
    }
    rep.corpus[v] = m;
  }
  return rep;
}

ordered_json EvalReport::to_json() const {
  ordered_json j;
  j["multi_ref"] = to_string(multi_ref);
  j["metrics"] = ordered_json::array();
  for (const auto v : variants) j["metrics"].push_back(to_string(v));
  j["products"] = per_product.size();
  j["corpus"] = ordered_json::object();
  for (const auto v : variants) j["corpus"][std::string(to_string(v))] = score_json(corpus.at(v));
  j["skipped"] = skipped;
  return j;
}

std::string EvalReport::render_table() const {
  std::string out = "metric  P      R      F1\n";
  for (const auto v : variants) {
    const auto& s = corpus.at(v);
    out += std::string(to_string(v)) + "      " + pct(s.precision) + "  " + pct(s.recall) + "  " + pct(s.f1) + "\n";
  }
  out += "products: " + std::to_string(per_product.size()) + ", skipped: " + std::to_string(skipped.size()) + "\n";
  return out;
}

// ---------------------------------------------------------------- statistics

TTestResult paired_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ContractError("paired_t_test: lists differ in length");
  if (a.size() < 2) throw ContractError("paired_t_test: need at least 2 pairs");
  TTestResult r;
  r.n = a.size();
  r.df = r.n - 1;
  std::vector<double> d(r.n);
  for (std::size_t i = 0; i < r.n; ++i) d[i] = a[i] - b[i];
  double mean = 0.0;
  for (const double x : d) mean += x;
  mean /= static_cast<double>(r.n);
  double ss = 0.0;
  for (const double x : d) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / static_cast<double>(r.df));
  r.mean_diff = mean;
  if (sd == 0.0) {
    r.degenerate = true;
    r.note = "degenerate: zero variance";
    return r;
  }
  const double t = mean / (sd / std::sqrt(static_cast<double>(r.n)));
  r.t = t;
  const boost::math::students_t dist(static_cast<double>(r.df));
  r.p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
  return r;
}

KappaResult fleiss_kappa(const RatingsMatrix& m) {
  if (m.ratings.empty()) throw ContractError("fleiss_kappa: no items");
  if (m.categories.empty()) throw ContractError("fleiss_kappa: no categories declared");
  const std::size_t n = m.ratings.front().size();
  if (n < 2) throw ContractError("fleiss_kappa: need at least 2 raters per item");
  std::map<int, std::size_t> cat_index;
  for (const int c : m.categories) cat_index.emplace(c, cat_index.size());
  const std::size_t N = m.ratings.size();
  std::vector<double> col(cat_index.size(), 0.0);
  double p_bar = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    const auto& row = m.ratings[i];
    if (row.size() != n) throw ContractError("fleiss_kappa: item " + std::to_string(i) + " has a different rater count");
    std::vector<double> cnt(cat_index.size(), 0.0);
    for (const int r : row) {
      const auto it = cat_index.find(r);
      if (it == cat_index.end()) {
        throw ContractError("fleiss_kappa: rating " + std::to_string(r) + " outside the declared categories");
      }
      cnt[it->second] += 1.0;
    }
    double agree = 0.0;
    for (std::size_t j = 0; j < cnt.size(); ++j) {
      agree += cnt[j] * (cnt[j] - 1.0);
      col[j] += cnt[j];
    }
    p_bar += agree / (static_cast<double>(n) * static_cast<double>(n - 1));
  }
  KappaResult k;
  k.p_bar = p_bar / static_cast<double>(N);
  for (const double c : col) {
    const double pj = c / (static_cast<double>(N) * static_cast<double>(n));
    k.p_e += pj * pj;
  }
  if (k.p_e >= 1.0) {
    k.degenerate = true;
    k.note = "degenerate: no variance";
    return k;
  }
  k.kappa = (k.p_bar - k.p_e) / (1.0 - k.p_e);
  return k;
}

BestWorstResult best_worst_scores(std::span<const Judgment> judgments) {
  BestWorstResult r;
  std::map<std::string, long> net;
  for (std::size_t i = 0; i < judgments.size(); ++i) {
    const auto& j = judgments[i];
    const std::set<std::string> models(j.models.begin(), j.models.end());
    std::string why;
    if (models.size() < 2 || models.size() != j.models.size()) {
      why = "needs at least 2 distinct models";
    } else if (j.best == j.worst) {
      why = "best and worst are the same model";
    } else if (!models.count(j.best) || !models.count(j.worst)) {
      why = "best or worst not among the judged models";
    }
    if (!why.empty()) {
      r.rejected.push_back("judgment " + std::to_string(i) + ": " + why);
      continue;
    }
    for (const auto& mdl : models) {
      ++r.judgments[mdl];
      net.try_emplace(mdl, 0);
    }
    ++net[j.best];
    --net[j.worst];
  }
  for (const auto& [mdl, v] : net) r.scores[mdl] = static_cast<double>(v) / static_cast<double>(r.judgments[mdl]);
  return r;
}

// ---------------------------------------------------------------- source overlap

ordered_json SourceOverlap::to_json() const {
  ordered_json j;
  auto entry = [](const SourceOverlapEntry& e) {
    ordered_json o{{"products", e.products}, {"absent", e.absent}};
    o["r1"] = e.mean ? score_json(*e.mean) : ordered_json("absent");
    return o;
  };
  j["reviews"] = entry(reviews);
  j["description"] = entry(description);
  j["qa"] = entry(qa);
  return j;
}

SourceOverlap source_overlap(std::span<const CandidateSummary> summaries, std::span<const corpus::Product> products) {
  if (summaries.size() != products.size()) throw ContractError("source_overlap: summaries and products differ in count");
  SourceOverlap out;
  RougeScore acc[3];
  auto add = [&](SourceOverlapEntry& e, RougeScore& a, const std::optional<std::string>& src, const std::string& summ) {
    if (!src) {
      ++e.absent;
      return;
    }
    const RougeScore s = rouge_n(summ, *src, 1);
    a.precision += s.precision;
    a.recall += s.recall;
    a.f1 += s.f1;
    ++e.products;
  };
  for (std::size_t i = 0; i < products.size(); ++i) {
    const auto& p = products[i];
    if (summaries[i].product_id != p.product_id) {
      throw ContractError("source_overlap: summary " + std::to_string(i) + " is for " + summaries[i].product_id +
                          ", expected " + p.product_id);
    }
    std::optional<std::string> revs, qa;
    if (!p.reviews.empty()) {
      std::string s;
      for (const auto& r : p.reviews) s += r.text + " ";
      revs = s;
    }
    if (!p.qa_pairs.empty()) {
      std::string s;
      for (const auto& q : p.qa_pairs) s += q.concatenated + " ";
      qa = s;
    }
    add(out.reviews, acc[0], revs, summaries[i].text);
    add(out.description, acc[1], p.description, summaries[i].text);
    add(out.qa, acc[2], qa, summaries[i].text);
  }
  SourceOverlapEntry* entries[3] = {&out.reviews, &out.description, &out.qa};
  for (int k = 0; k < 3; ++k) {
    auto& e = *entries[k];
    if (e.products == 0) continue;
    const double n = static_cast<double>(e.products);
    e.mean = RougeScore{acc[k].precision / n, acc[k].recall / n, acc[k].f1 / n, RougeVariant::R1};
  }
  return out;
}

// ---------------------------------------------------------------- ablation

const std::vector<std::pair<std::string, model::SourceSelection>>& ablation_configurations() {
  static const std::vector<std::pair<std::string, model::SourceSelection>> rows{
      {"w. Reviews + Description + QA", {true, true}},
      {"w. Reviews + Description", {true, false}},
      {"w. Reviews + QA", {false, true}},
      {"w. Reviews", {false, false}},
  };
  return rows;
}

AblationTable run_ablation(const model::ModelParams& p, const tok::Tokenizer& tk,
                           std::span<const corpus::Product> test, const gen::GenerationConfig& cfg,
                           MultiRef multi_ref, const std::optional<std::string>& annotation_kind) {
  const std::vector<RougeVariant> variants{RougeVariant::R1, RougeVariant::R2, RougeVariant::RL};
  AblationTable t;
  for (const auto& [label, sel] : ablation_configurations()) {
    AblationRow row;
    row.label = label;
    row.sources = sel;
    for (const auto& s : gen::summarize_all(p, tk, test, cfg, sel)) row.summaries.push_back({s.product_id, s.text});
    const auto rep = corpus_rouge(row.summaries, test, variants, multi_ref, annotation_kind);
    for (const auto v : variants) row.f1[v] = rep.corpus.at(v).f1;
    t.rows.push_back(std::move(row));
  }
  return t;
}

ordered_json AblationTable::to_json() const {
  ordered_json rows_j = ordered_json::array();
  for (const auto& r : rows) {
    rows_j.push_back({{"configuration", r.label},
                      {"R1", r.f1.at(RougeVariant::R1)},
                      {"R2", r.f1.at(RougeVariant::R2)},
                      {"RL", r.f1.at(RougeVariant::RL)}});
  }
  return {{"rows", rows_j}};
}

std::string AblationTable::render_table() const {
  std::string out = "configuration                   R1     R2     RL\n";
  for (const auto& r : rows) {
    std::string label = r.label;
    label.resize(32, ' ');
    out += label + pct(r.f1.at(RougeVariant::R1)) + "  " + pct(r.f1.at(RougeVariant::R2)) + "  " +
           pct(r.f1.at(RougeVariant::RL)) + "\n";
  }
  return out;
}

}  // namespace medos::eval
