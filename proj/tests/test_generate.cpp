// Copyright 2026 The MEDOS Authors.
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <map>
#include <random>

#include "medos/error.hpp"
#include "medos/generate.hpp"
#include "model_fixtures.hpp"
#include "test_util.hpp"

using namespace medos;
using namespace medos::gen;
using medos::testing::random_sources;
using medos::testing::tiny_config;

namespace {

// Scorer from an explicit table keyed by generated prefix; unknown prefixes
// put all mass on </s>.
NextTokenScorer table_scorer(std::map<std::vector<int>, std::vector<double>> probs, std::size_t vocab) {
  return [probs = std::move(probs), vocab](std::span<const int> prefix) {
    const std::vector<int> gen(prefix.begin() + 1, prefix.end());
    std::vector<double> lp(vocab, -std::numeric_limits<double>::infinity());
    const auto it = probs.find(gen);
    if (it == probs.end()) {
      lp[tok::kEos] = 0.0;
      return lp;
    }
    for (std::size_t t = 0; t < vocab; ++t) lp[t] = it->second[t] > 0 ? std::log(it->second[t]) : lp[t];
    return lp;
  };
}

std::size_t max_ngram_count(const std::vector<int>& s, std::size_t n) {
  std::map<std::vector<int>, std::size_t> c;
  std::size_t best = 0;
  for (std::size_t i = 0; i + n <= s.size(); ++i) best = std::max(best, ++c[std::vector<int>(s.begin() + i, s.begin() + i + n)]);
  return best;
}

model::ModelParams random_model(std::size_t vocab, std::uint64_t seed) {
  auto p = model::init_params(tiny_config(vocab, 8, 1, 2), seed);
  std::mt19937_64 rng(seed);
  medos::testing::randomize_gates(p, rng, 0.5);
  // Sharper output distributions than the default init.
  for (double& v : p["dec.out.bias"].data) v = std::normal_distribution<double>(0.0, 1.5)(rng);
  return p;
}

// Log-probability of a complete generated sequence (without <s>) scored in one decoder pass.
double sequence_logprob(const model::ModelParams& p, const model::EncoderStates& mem, const std::vector<int>& gen) {
  std::vector<int> prefix{tok::kBos};
  prefix.insert(prefix.end(), gen.begin(), gen.end() - 1);
  const Matrix lp = model::decode_logprobs(p, mem, prefix);
  double s = 0.0;
  for (std::size_t i = 0; i < gen.size(); ++i) s += lp(i, static_cast<std::size_t>(gen[i]));
  return s;
}

}  // namespace

TEST_CASE("repeats_ngram") {
  const std::vector<int> s{5, 6, 7, 5, 6};
  CHECK(repeats_ngram(s, 7, 3));
  CHECK_FALSE(repeats_ngram(s, 8, 3));
  CHECK(repeats_ngram(s, 5, 1));
  CHECK_FALSE(repeats_ngram(s, 9, 1));
  CHECK(repeats_ngram(s, 7, 2));
  CHECK_FALSE(repeats_ngram(s, 8, 2));
  CHECK(repeats_ngram(s, 7, 3));
  CHECK_FALSE(repeats_ngram(s, 7, 0));
  CHECK_FALSE(repeats_ngram(std::vector<int>{5}, 5, 3));
  CHECK(repeats_ngram(std::vector<int>{5, 5}, 5, 2));
}

TEST_CASE("beam search on a hand-built table") {
  // After the empty prefix: </s> 0.3, a(4) 0.7. After "a": </s> 0.9, b(5) 0.1.
  const std::map<std::vector<int>, std::vector<double>> probs{
      {{}, {0, 0, 0.3, 0, 0.7, 0}},
      {{4}, {0, 0, 0.9, 0, 0, 0.1}},
      {{4, 5}, {0, 0, 1.0, 0, 0, 0}},
  };
  const auto sc = table_scorer(probs, 6);
  GenerationConfig cfg;
  SUBCASE("best completed hypothesis wins") {
    const auto r = beam_search(sc, cfg);
    CHECK(r.tokens == std::vector<int>{4});
    CHECK(r.logprob == doctest::Approx(std::log(0.63)));
    CHECK_FALSE(r.truncated);
    CHECK(r.finished.front().score == r.score);
  }
  SUBCASE("min_length blocks early </s>") {
    cfg.min_length = 3;
    const auto r = beam_search(sc, cfg);
    CHECK(r.tokens == std::vector<int>{4, 5});
  }
  SUBCASE("max_length truncation returns the best unfinished hypothesis") {
    cfg.max_length = 1;
    cfg.banned_tokens = {tok::kEos};
    const auto r = beam_search(sc, cfg);
    CHECK(r.truncated);
    CHECK(r.tokens == std::vector<int>{4});
  }
  SUBCASE("length penalty favours longer output") {
    cfg.length_penalty = 1.0;
    // "a </s>": log(.63)/2 = -0.231 beats "</s>": log(.3)/1 = -1.204.
    const auto r = beam_search(sc, cfg);
    CHECK(r.tokens == std::vector<int>{4});
    CHECK(r.score == doctest::Approx(std::log(0.63) / 2));
  }
  CHECK_THROWS_AS(beam_search(sc, GenerationConfig{.beam_size = 0}), ContractError);
}

TEST_CASE("beam 1 equals greedy on random tiny models") {
  std::mt19937_64 rng(31);
  for (std::uint64_t m = 0; m < 20; ++m) {
    const auto p = random_model(12, 100 + m);
    const auto src = random_sources(rng, p.config, m % 2 == 0, m % 3 == 0);
    GenerationConfig cfg;
    cfg.beam_size = 1;
    cfg.banned_tokens = {0, 1, 3};
    cfg = for_model(p, cfg);
    const auto sc = model_scorer(p, src);
    const auto b = beam_search(sc, cfg);
    const auto g = greedy(sc, cfg);
    CHECK(b.tokens == g.tokens);
    CHECK(b.logprob == g.logprob);
  }
}

TEST_CASE("beam 5 matches exhaustive enumeration with three tokens and length four") {
  std::mt19937_64 rng(37);
  const std::vector<int> alphabet{tok::kEos, 4, 5};
  for (std::uint64_t m = 0; m < 20; ++m) {
    const auto p = random_model(6, 200 + m);
    const auto src = random_sources(rng, p.config, true, m % 2 == 0);
    const auto mem = model::fused_states(p, src);
    for (const std::size_t ngram : {std::size_t{0}, std::size_t{3}}) {
      GenerationConfig cfg;
      cfg.max_length = 4;
      cfg.no_repeat_ngram = ngram;
      cfg.banned_tokens = {0, 1, 3};
      const auto r = beam_search(p, src, cfg);

      double best = -std::numeric_limits<double>::infinity();
      std::vector<int> arg;
      std::vector<int> seq;
      std::function<void()> rec = [&] {
        for (const int t : alphabet) {
          seq.push_back(t);
          bool ok = ngram == 0 || max_ngram_count(seq, ngram) <= 1;
          if (ok && t == tok::kEos) {
            const double lp = sequence_logprob(p, mem, seq);
            if (lp > best) {
              best = lp;
              arg = seq;
            }
          } else if (ok && seq.size() < 4) {
            rec();
          }
          seq.pop_back();
        }
      };
      rec();
      arg.pop_back();
      INFO("model " << m << " ngram " << ngram);
      CHECK(r.tokens == arg);
      CHECK(r.logprob == doctest::Approx(best).epsilon(1e-9));
    }
  }
}

TEST_CASE("beam dominance, monotone beam, and constraint soundness") {
  std::mt19937_64 rng(41);
  for (std::uint64_t m = 0; m < 20; ++m) {
    const auto p = random_model(10, 300 + m);
    const auto src = random_sources(rng, p.config, true, true);
    GenerationConfig cfg;
    cfg.banned_tokens = {0, 1, 3};
    const auto b5 = beam_search(p, src, cfg);
    cfg.beam_size = 1;
    const auto b1 = beam_search(p, src, cfg);
    for (const auto& f : b5.finished) CHECK(b5.score >= f.score);
    CHECK(b5.score >= b1.score);
    for (const auto* r : {&b5, &b1}) CHECK(max_ngram_count(r->tokens, 3) <= 1);
  }
}

TEST_CASE("summarize_product") {
  const std::vector<std::string> texts{"great sound and battery", "cheap case", "the sound is clear",
                                       "wireless earbuds", "is it waterproof ? yes"};
  const auto tk = tok::Tokenizer::build(texts);
  auto cfg_model = tiny_config(tk.size(), 8, 1, 2);
  cfg_model.max_review_len = 64;
  cfg_model.max_target_len = 20;
  auto p = model::init_params(cfg_model, 5);
  corpus::Product prod;
  prod.product_id = "x1";
  prod.reviews = {{"r1", "great sound and battery", std::nullopt}, {"r2", "cheap case", std::nullopt},
                  {"r3", "the sound is clear", std::nullopt}};
  prod.description = "wireless earbuds";
  prod.qa_pairs = {corpus::QAPair::make("is it waterproof ?", "yes")};
  std::mt19937_64 rng(5);
  medos::testing::randomize_gates(p, rng, 1.0);
  GenerationConfig cfg;
  const auto a = summarize_product(p, tk, prod, cfg);
  const auto b = summarize_product(p, tk, prod, cfg);
  CHECK(a.text == b.text);
  CHECK(a.logprob == b.logprob);
  auto no_desc = prod;
  no_desc.description.reset();
  const auto c = summarize_product(p, tk, no_desc, cfg);
  for (const auto* s : {&a, &c}) {
    const auto ids = tk.encode(s->text);
    CHECK(max_ngram_count(ids, 3) <= 1);
    for (const int id : ids) CHECK(id >= tok::kNumSpecial);
  }
  const auto all = summarize_all(p, tk, std::vector<corpus::Product>{prod, no_desc}, cfg);
  CHECK(all[0].text == a.text);
  CHECK(all[1].text == c.text);

  medos::testing::TempDir dir;
  write_summaries(all, dir.file("s.jsonl"));
  const auto back = read_summaries(dir.file("s.jsonl"));
  REQUIRE(back.size() == 2);
  CHECK(back[1].text == c.text);
  CHECK(back[0].logprob == a.logprob);

  corpus::Product empty;
  empty.product_id = "e";
  CHECK_THROWS_AS(summarize_product(p, tk, empty, cfg), ContractError);
}
