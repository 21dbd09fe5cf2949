// Copyright 2026 The MEDOS Authors.
// SPDX-License-Identifier: Apache-2.0

#include "medos/generate.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <limits>
#include <memory>

#include <json.hpp>

#include "medos/error.hpp"
#include "medos/kernels.hpp"
#include "medos/text.hpp"

namespace medos::gen {

void GenerationConfig::validate() const {
  if (beam_size < 1) throw ContractError("generate: beam_size must be >= 1");
  if (max_length < 1) throw ContractError("generate: max_length must be >= 1");
  if (min_length > max_length) throw ContractError("generate: min_length exceeds max_length");
  if (!std::isfinite(length_penalty)) throw ContractError("generate: length_penalty must be finite");
}

double penalized_score(double logprob, std::size_t length, double penalty) {
  if (penalty == 0.0) return logprob;
  return logprob / std::pow(static_cast<double>(std::max<std::size_t>(length, 1)), penalty);
}

bool repeats_ngram(std::span<const int> tokens, int token, std::size_t n) {
  if (n == 0 || tokens.size() + 1 < n) return false;
  const std::size_t m = tokens.size();
  // Candidate n-gram: tokens[m-n+1 .. m-1] + token.
  for (std::size_t start = 0; start + n <= m; ++start) {
    bool same = tokens[start + n - 1] == token;
    for (std::size_t j = 0; same && j + 1 < n; ++j) same = tokens[start + j] == tokens[m - n + 1 + j];
    if (same) return true;
  }
  return false;
}

namespace {

struct Candidate {
  std::size_t parent;
  int token;
  double logprob;
};

bool allowed(const GenerationConfig& cfg, std::span<const int> gen, int token) {
  if (std::find(cfg.banned_tokens.begin(), cfg.banned_tokens.end(), token) != cfg.banned_tokens.end()) return false;
  if (token == tok::kEos) return gen.size() + 1 >= cfg.min_length;
  return !repeats_ngram(gen, token, cfg.no_repeat_ngram);
}

std::vector<double> score_next(const NextTokenScorer& scorer, const std::vector<int>& gen) {
  std::vector<int> prefix;
  prefix.reserve(gen.size() + 1);
  prefix.push_back(tok::kBos);
  prefix.insert(prefix.end(), gen.begin(), gen.end());
  return scorer(prefix);
}

bool better(const Hypothesis& a, const Hypothesis& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.tokens < b.tokens;
}

GenerationResult finish(std::vector<Hypothesis> finished, std::vector<Hypothesis> live) {
  GenerationResult r;
  std::sort(finished.begin(), finished.end(), better);
  const Hypothesis* best = nullptr;
  if (!finished.empty()) {
    best = &finished.front();
  } else {
    std::sort(live.begin(), live.end(), better);
    if (!live.empty()) best = &live.front();
    r.truncated = true;
  }
  if (best != nullptr) {
    r.tokens = best->tokens;
    if (best->finished) r.tokens.pop_back();
    r.logprob = best->logprob;
    r.score = best->score;
  }
  r.finished = std::move(finished);
  return r;
}

}  // namespace

GenerationResult beam_search(const NextTokenScorer& scorer, const GenerationConfig& cfg) {
  cfg.validate();
  std::vector<Hypothesis> live{Hypothesis{}};
  std::vector<Hypothesis> finished;
  for (std::size_t len = 1; len <= cfg.max_length && !live.empty(); ++len) {
    std::vector<Candidate> cands;
    for (std::size_t h = 0; h < live.size(); ++h) {
      const auto lp = score_next(scorer, live[h].tokens);
      for (std::size_t t = 0; t < lp.size(); ++t) {
        const int tokid = static_cast<int>(t);
        if (!std::isfinite(lp[t]) || !allowed(cfg, live[h].tokens, tokid)) continue;
        cands.push_back({h, tokid, live[h].logprob + lp[t]});
      }
    }
    std::stable_sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
      if (a.logprob != b.logprob) return a.logprob > b.logprob;
      if (a.token != b.token) return a.token < b.token;
      return a.parent < b.parent;
    });
    std::vector<Hypothesis> next;
    for (std::size_t rank = 0; rank < cands.size() && next.size() < cfg.beam_size; ++rank) {
      const Candidate& c = cands[rank];
      Hypothesis h;
      h.tokens = live[c.parent].tokens;
      h.tokens.push_back(c.token);
      h.logprob = c.logprob;
      h.score = penalized_score(c.logprob, h.tokens.size(), cfg.length_penalty);
      if (c.token == tok::kEos) {
        // Completions compete for the same top-beam ranks as continuations.
        if (rank < cfg.beam_size) {
          h.finished = true;
          finished.push_back(std::move(h));
        }
      } else {
        next.push_back(std::move(h));
      }
    }
    live = std::move(next);
    if (live.empty() || finished.empty()) continue;
    if (cfg.length_penalty == 0.0) {
      // Log-probabilities only decrease, so no live hypothesis can overtake.
      double best_done = -std::numeric_limits<double>::infinity();
      for (const auto& f : finished) best_done = std::max(best_done, f.score);
      double best_live = -std::numeric_limits<double>::infinity();
      for (const auto& l : live) best_live = std::max(best_live, l.logprob);
      if (best_done >= best_live) break;
    } else if (finished.size() >= cfg.beam_size) {
      break;
    }
  }
  return finish(std::move(finished), std::move(live));
}

GenerationResult greedy(const NextTokenScorer& scorer, const GenerationConfig& cfg) {
  cfg.validate();
  Hypothesis h;
  while (h.tokens.size() < cfg.max_length) {
    const auto lp = score_next(scorer, h.tokens);
    int best = -1;
    for (std::size_t t = 0; t < lp.size(); ++t) {
      const int tokid = static_cast<int>(t);
      if (!std::isfinite(lp[t]) || !allowed(cfg, h.tokens, tokid)) continue;
      if (best < 0 || lp[t] > lp[static_cast<std::size_t>(best)]) best = tokid;
    }
    if (best < 0) break;
    h.tokens.push_back(best);
    h.logprob += lp[static_cast<std::size_t>(best)];
    if (best == tok::kEos) {
      h.finished = true;
      break;
    }
  }
  h.score = penalized_score(h.logprob, h.tokens.size(), cfg.length_penalty);
  std::vector<Hypothesis> finished, live;
  (h.finished ? finished : live).push_back(std::move(h));
  return finish(std::move(finished), std::move(live));
}

NextTokenScorer model_scorer(const model::ModelParams& p, const model::TokenizedSources& s) {
  auto mem = std::make_shared<model::EncoderStates>(model::fused_states(p, s));
  return [&p, mem](std::span<const int> prefix) {
    const Matrix lp = model::decode_logprobs(p, *mem, prefix);
    const auto last = lp.row(lp.rows - 1);
    return std::vector<double>(last.begin(), last.end());
  };
}

GenerationConfig for_model(const model::ModelParams& p, GenerationConfig cfg) {
  cfg.max_length = std::min(cfg.max_length, p.config.max_target_len);
  cfg.min_length = std::min(cfg.min_length, cfg.max_length);
  return cfg;
}

GenerationResult beam_search(const model::ModelParams& p, const model::TokenizedSources& s,
                             const GenerationConfig& cfg) {
  return beam_search(model_scorer(p, s), for_model(p, cfg));
}

GenerationResult decode_summary(const model::ModelParams& p, const model::TokenizedSources& s,
                                const GenerationConfig& cfg) {
  GenerationConfig c = cfg;
  for (const int t : {tok::kPad, tok::kBos, tok::kUnk}) {
    if (std::find(c.banned_tokens.begin(), c.banned_tokens.end(), t) == c.banned_tokens.end()) {
      c.banned_tokens.push_back(t);
    }
  }
  return beam_search(p, s, c);
}

Summary summarize_product(const model::ModelParams& p, const tok::Tokenizer& tk, const corpus::Product& product,
                          const GenerationConfig& cfg, model::SourceSelection sel) {
  if (product.reviews.empty()) throw ContractError("summarize: product " + product.product_id + " has no reviews");
  const auto r = decode_summary(p, model::tokenize_product(tk, p.config, product, sel), cfg);
  return {product.product_id, tk.decode(r.tokens), r.logprob, r.truncated};
}

std::vector<Summary> summarize_all(const model::ModelParams& p, const tok::Tokenizer& tk,
                                   std::span<const corpus::Product> products, const GenerationConfig& cfg,
                                   model::SourceSelection sel) {
  std::vector<Summary> out(products.size());
  std::vector<std::exception_ptr> errs(products.size());
#pragma omp parallel for schedule(dynamic, 1) if (products.size() > 1 && !kernels::in_parallel())
  for (std::size_t i = 0; i < products.size(); ++i) {
    try {
      out[i] = summarize_product(p, tk, products[i], cfg, sel);
    } catch (...) {
      errs[i] = std::current_exception();
    }
  }
  for (auto& e : errs)
    if (e) std::rethrow_exception(e);
  return out;
}

std::string serialize_summary(const Summary& s) {
  nlohmann::ordered_json j{{"product_id", s.product_id}, {"summary", s.text}, {"logprob", s.logprob}};
  if (s.truncated) j["truncated"] = true;
  return j.dump();
}

Summary parse_summary(std::string_view line) {
  try {
    const auto j = nlohmann::json::parse(line);
    return {j.at("product_id").get<std::string>(), j.at("summary").get<std::string>(), j.value("logprob", 0.0),
            j.value("truncated", false)};
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad summary record: ") + e.what());
  }
}

void write_summaries(std::span<const Summary> s, const std::string& path) {
  std::string out;
  for (const auto& x : s) out += serialize_summary(x) + "\n";
  text::write_file_atomic(path, out);
}

std::vector<Summary> read_summaries(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("summary file not found: " + path);
  std::vector<Summary> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(parse_summary(line));
  }
  return out;
}

}  // namespace medos::gen
