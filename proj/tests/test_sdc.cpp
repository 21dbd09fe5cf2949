// Copyright 2026 The MEDOS Authors.
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <random>

#include <doctest.h>

#include "medos/error.hpp"
#include "medos/kernels.hpp"
#include "medos/sdc.hpp"
#include "sdc_fixtures.hpp"
#include "test_util.hpp"

using namespace medos;
using namespace medos::sdc;
using embed::EmbeddingMatrix;
namespace oracle = medos::testing::oracle;

namespace {

EmbeddingMatrix rows(std::vector<std::vector<double>> r) {
  EmbeddingMatrix m;
  m.values = Matrix(r.size(), r.front().size());
  for (std::size_t i = 0; i < r.size(); ++i) {
    std::copy(r[i].begin(), r[i].end(), m.values.row(i).begin());
    m.row_keys.push_back("r" + std::to_string(i));
  }
  return m;
}

ScoreVector scores(std::vector<double> v) { return {std::move(v), ScoreKind::ss}; }

void check_against_oracle(const testing::SdcCase& c, const SdcHyperparams& hp) {
  const auto got = build_quadruplets(c.product, product_embeddings(c.product, c.store), hp);
  const auto want = oracle::build(c.vectors, hp.k, hp.percentile, hp.lambda1, hp.lambda2);
  if (!want) {
    CHECK(got.skip_reason.has_value());
    CHECK(got.quadruplets.empty());
    return;
  }
  REQUIRE(got.quadruplets.size() == want->size());
  for (std::size_t i = 0; i < want->size(); ++i) {
    const auto& g = got.quadruplets[i];
    const auto& w = (*want)[i];
    CHECK(g.pseudo_summary_index == w.pseudo_summary);
    CHECK(g.input_indices == w.inputs);
    CHECK(std::abs(g.ss_score - w.ss) < 1e-12);
  }
}

}  // namespace

TEST_CASE("review_similarity_matrix examples") {
  const auto same = review_similarity_matrix(rows({{1, 2}, {1, 2}}));
  CHECK(same.values(0, 0) == 0.0);
  CHECK(same.values(1, 1) == 0.0);
  CHECK(same.values(0, 1) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(same.values(1, 0) == doctest::Approx(1.0).epsilon(1e-12));

  const auto orth = review_similarity_matrix(rows({{1, 0}, {0, 1}}));
  CHECK(orth.values.data == std::vector<double>{0, 0, 0, 0});

  const double h = 1.0 / std::sqrt(2.0);
  const auto three = review_similarity_matrix(rows({{1, 0}, {h, h}, {0, 1}}));
  CHECK(three.values(0, 1) == doctest::Approx(0.70710678).epsilon(1e-8));
  CHECK(three.values(1, 0) == doctest::Approx(0.70710678).epsilon(1e-8));
  CHECK(three.values(0, 2) == 0.0);
  CHECK(three.values(2, 0) == 0.0);
  CHECK(three.values(1, 2) == doctest::Approx(0.70710678).epsilon(1e-8));
  CHECK(three.values(2, 1) == doctest::Approx(0.70710678).epsilon(1e-8));

  CHECK_THROWS_AS(review_similarity_matrix(rows({{1, 0}})), ContractError);
}

TEST_CASE("description_scores examples") {
  const auto ds = description_scores(rows({{3, 4}, {0, 1}}), nullptr);
  CHECK(ds.kind == ScoreKind::ds_absent);
  CHECK(ds.values == std::vector<double>{0, 0});

  const auto d1 = rows({{3, 4}});
  CHECK(description_scores(rows({{3, 4}, {0, 1}}), &d1).values[0] == doctest::Approx(1.0).epsilon(1e-12));

  const double h = 1.0 / std::sqrt(2.0);
  const auto d = rows({{h, h}});
  const auto s = description_scores(rows({{1, 0}, {0, 1}}), &d);
  CHECK(s.kind == ScoreKind::ds);
  CHECK(s.values[0] == doctest::Approx(0.7071).epsilon(1e-4));
  CHECK(s.values[1] == doctest::Approx(0.7071).epsilon(1e-4));

  const auto two_rows = rows({{1, 0}, {0, 1}});
  CHECK_THROWS_AS(description_scores(two_rows, &two_rows), ContractError);
}

TEST_CASE("qa_scores examples") {
  const auto e_r = rows({{1, 0}, {0, 1}});
  const std::vector<EmbeddingMatrix> one = {rows({{1, 0}})};
  const auto s1 = qa_scores(e_r, one);
  CHECK(s1.values[0] == doctest::Approx(1.0));
  CHECK(s1.values[1] == doctest::Approx(0.0));

  const std::vector<EmbeddingMatrix> two = {rows({{1, 0}}), rows({{0, 1}})};
  const auto s2 = qa_scores(e_r, two);
  CHECK(s2.values[0] == doctest::Approx(0.5));
  CHECK(s2.values[1] == doctest::Approx(0.5));

  const auto none = qa_scores(e_r, {});
  CHECK(none.kind == ScoreKind::qs_absent);
  CHECK(none.values == std::vector<double>{0, 0});

  const std::vector<EmbeddingMatrix> wrong = {rows({{1, 0, 0}})};
  CHECK_THROWS_AS(qa_scores(e_r, wrong), ContractError);
}

TEST_CASE("combined_scores examples") {
  const auto a = combined_scores(scores({1, 0}), scores({0, 1}), 0.5, 0.5);
  CHECK(a.values == std::vector<double>{0.5, 0.5});
  const auto b = combined_scores(scores({0.3, 0.9}), scores({0.7, 0.1}), 2.0, 0.0);
  CHECK(b.values == std::vector<double>{0.6, 1.8});
  const auto c = combined_scores(scores({0.8, 0.2}), scores({0.4, 0.6}), 0.5, 0.5);
  CHECK(c.values[0] == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(c.values[1] == doctest::Approx(0.4).epsilon(1e-12));
  CHECK_THROWS_AS(combined_scores(scores({1}), scores({1, 2}), 0.5, 0.5), ContractError);
}

TEST_CASE("select_pseudo_summaries: nearest-rank percentile") {
  // Ranks by value: index 3 is the largest, index 7 second.
  const auto ss = scores({0.1, 0.5, 0.3, 0.95, 0.2, 0.6, 0.4, 0.9, 0.0, 0.7});
  CHECK(nearest_rank(85, 10) == 9);
  CHECK(select_pseudo_summaries(ss, 85) == std::vector<std::size_t>{3, 7});

  CHECK(select_pseudo_summaries(scores({0.4, 0.4, 0.4, 0.4}), 85) == std::vector<std::size_t>{0, 1, 2, 3});

  CHECK(select_pseudo_summaries(ss, 100) == std::vector<std::size_t>{3});
  CHECK(select_pseudo_summaries(scores({0.2, 0.9, 0.1, 0.9}), 100) == std::vector<std::size_t>{1, 3});
  CHECK(select_pseudo_summaries(scores({0.2, 0.1}), 1e-9) == std::vector<std::size_t>{0, 1});
}

TEST_CASE("select_input_reviews") {
  SimilarityMatrix sim;
  sim.values = Matrix(4, 4);
  sim.values.data = {0, .2, .9, .5,  //
                     .2, 0, .1, .3,  //
                     .9, .1, 0, .4,  //
                     .5, .3, .4, 0};
  CHECK(select_input_reviews(sim, 0, 1) == std::vector<std::size_t>{2});
  CHECK(select_input_reviews(sim, 0, 3) == std::vector<std::size_t>{2, 3, 1});
  CHECK(select_input_reviews(sim, 3, 3) == std::vector<std::size_t>{0, 2, 1});
  CHECK_THROWS_AS(select_input_reviews(sim, 0, 4), ContractError);

  // N = 5, k = 2, integer vectors; brute-force oracle over all pairwise cosines.
  const std::vector<std::vector<double>> ints = {{1, 0, 2}, {2, 1, 0}, {1, 1, 1}, {0, 3, 1}, {2, 0, 3}};
  const auto m = review_similarity_matrix(rows(ints));
  for (std::size_t r = 0; r < ints.size(); ++r) {
    std::vector<double> s(ints.size(), 0.0);
    std::vector<std::size_t> others;
    for (std::size_t j = 0; j < ints.size(); ++j) {
      if (j == r) continue;
      s[j] = oracle::cosine(ints[r], ints[j]);
      others.push_back(j);
    }
    CHECK(select_input_reviews(m, r, 2) == oracle::best_subset(s, others, 2));
  }
}

TEST_CASE("build_quadruplets: forced selection with N = 2") {
  oracle::Product v;
  v.reviews = {{1, 0}, {0, 1}};
  v.description = oracle::Vec{1, 0};
  auto c = testing::make_case(v, "p");
  SdcHyperparams hp;
  hp.k = 1;
  hp.percentile = 100;
  const auto out = build_quadruplets(c.product, product_embeddings(c.product, c.store), hp);
  REQUIRE(out.quadruplets.size() == 1);
  const auto& q = out.quadruplets[0];
  CHECK(q.pseudo_summary == "p review 0");
  CHECK(q.input_reviews == std::vector<std::string>{"p review 1"});
  CHECK(q.description == std::optional<std::string>("p description"));
  CHECK(q.qa.empty());
}

TEST_CASE("build_quadruplets: N = 6 with description and QA matches the oracle") {
  oracle::Product v;
  v.reviews = {{1, 0, 0, 1}, {0, 1, 1, 0}, {1, 1, 0, 0}, {0, 0, 1, 1}, {1, 0, 1, 0}, {2, 1, 0, 1}};
  v.description = oracle::Vec{1, 1, 0, 1};
  v.qa = {{0, 1, 0, 1}, {1, 0, 0, 0}};
  const auto c = testing::make_case(v, "six");
  for (std::size_t k = 1; k <= 5; ++k) {
    for (double pct : {50.0, 85.0, 100.0}) {
      SdcHyperparams hp;
      hp.k = k;
      hp.percentile = pct;
      check_against_oracle(c, hp);
    }
  }
}

TEST_CASE("build_quadruplets skips products without description and QA") {
  oracle::Product v;
  v.reviews = {{1, 0}, {0, 1}, {1, 1}};
  const auto c = testing::make_case(v, "bare");
  SdcHyperparams hp;
  hp.k = 1;
  const auto out = build_quadruplets(c.product, product_embeddings(c.product, c.store), hp);
  CHECK(out.quadruplets.empty());
  REQUIRE(out.skip_reason.has_value());
}

TEST_CASE("property: oracle equivalence, exclusion and invariants on random products") {
  std::mt19937_64 rng(31337);
  for (int trial = 0; trial < 80; ++trial) {
    const auto v = testing::random_vectors(rng, 12, 6);
    const auto c = testing::make_case(v, "p" + std::to_string(trial));
    SdcHyperparams hp;
    hp.k = 1 + rng() % (v.reviews.size() - 1);
    hp.percentile = std::vector<double>{30, 50, 85, 90, 100}[rng() % 5];
    check_against_oracle(c, hp);

    const auto out = build_quadruplets(c.product, product_embeddings(c.product, c.store), hp);
    for (const auto& q : out.quadruplets) {
      CHECK(q.input_reviews.size() == hp.k);
      CHECK(std::find(q.input_review_ids.begin(), q.input_review_ids.end(), q.pseudo_summary_id) ==
            q.input_review_ids.end());
      CHECK(std::is_sorted(q.input_review_sims.rbegin(), q.input_review_sims.rend()));
    }

    // Scale invariance.
    auto scaled = v;
    for (auto& r : scaled.reviews)
      for (double& x : r) x *= 3.7;
    const auto sc = testing::make_case(scaled, c.product.product_id);
    const auto out2 = build_quadruplets(sc.product, product_embeddings(sc.product, sc.store), hp);
    REQUIRE(out2.quadruplets.size() == out.quadruplets.size());
    for (std::size_t i = 0; i < out.quadruplets.size(); ++i) {
      CHECK(out2.quadruplets[i].input_indices == out.quadruplets[i].input_indices);
      CHECK(out2.quadruplets[i].pseudo_summary_index == out.quadruplets[i].pseudo_summary_index);
    }
  }
}

TEST_CASE("property: raising lambda1 keeps the order of reviews whose ds and qs orders agree") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int trial = 0; trial < 500; ++trial) {
    const ScoreVector ds = scores({u(rng), u(rng)});
    const ScoreVector qs = scores({u(rng), u(rng)});
    const bool agree = (ds.values[0] - ds.values[1]) * (qs.values[0] - qs.values[1]) > 0;
    if (!agree) continue;
    const double l2 = std::abs(u(rng));
    const double l1a = std::abs(u(rng)), l1b = l1a + std::abs(u(rng));
    const auto a = combined_scores(ds, qs, l1a, l2);
    const auto b = combined_scores(ds, qs, l1b, l2);
    CHECK((a.values[0] > a.values[1]) == (b.values[0] > b.values[1]));
  }
}

namespace {

corpus::Corpus random_corpus(std::mt19937_64& rng, std::size_t n, embed::EmbeddingStore& store) {
  corpus::Corpus c;
  for (std::size_t i = 0; i < n; ++i) {
    auto sc = testing::make_case(testing::random_vectors(rng, 12, 5), "prod" + std::to_string(n - i));
    for (const auto& r : sc.product.reviews) store.put(r.text, sc.store.at(r.text));
    if (sc.product.description) store.put(*sc.product.description, sc.store.at(*sc.product.description));
    for (const auto& q : sc.product.qa_pairs) store.put(q.concatenated, sc.store.at(q.concatenated));
    c.products.push_back(sc.product);
  }
  return c;
}

}  // namespace

TEST_CASE("run_sdc is deterministic across parallelism and ordered by product then score") {
  std::mt19937_64 rng(77);
  embed::EmbeddingStore store;
  const auto c = random_corpus(rng, 30, store);
  SdcHyperparams hp;
  hp.k = 1;
  for (const Mode mode : {Mode::full, Mode::reviews_only, Mode::random}) {
    const auto serial = run_sdc(c, store, hp, mode, 42, false);
    for (int threads : {1, 3}) {
      kernels::set_num_threads(threads);
      const auto par = run_sdc(c, store, hp, mode, 42, true);
      CHECK(par.quadruplets == serial.quadruplets);
    }
    for (std::size_t i = 1; i < serial.quadruplets.size(); ++i) {
      const auto& a = serial.quadruplets[i - 1];
      const auto& b = serial.quadruplets[i];
      CHECK(a.product_id <= b.product_id);
      if (a.product_id == b.product_id && mode != Mode::random) CHECK(a.ss_score >= b.ss_score);
    }
  }
}

TEST_CASE("sdc modes produce distinct selections; random is seed-deterministic") {
  std::mt19937_64 rng(5150);
  embed::EmbeddingStore store;
  const auto c = random_corpus(rng, 20, store);
  SdcHyperparams hp;
  hp.k = 1;
  hp.percentile = 50;
  const auto full = run_sdc(c, store, hp, Mode::full, 1);
  const auto rev = run_sdc(c, store, hp, Mode::reviews_only, 1);
  const auto rnd = run_sdc(c, store, hp, Mode::random, 1);
  CHECK(full.quadruplets != rev.quadruplets);
  CHECK(full.quadruplets != rnd.quadruplets);
  CHECK(rev.quadruplets != rnd.quadruplets);
  CHECK(run_sdc(c, store, hp, Mode::random, 1).quadruplets == rnd.quadruplets);
  CHECK(run_sdc(c, store, hp, Mode::random, 2).quadruplets != rnd.quadruplets);
  CHECK_FALSE(full.skipped.empty());  // some random products have neither source
  CHECK(rev.skipped.empty());
}

TEST_CASE("reviews-only mode ranks by row mean of the similarity matrix") {
  oracle::Product v;
  v.reviews = {{1, 0}, {0.8, 0.6}, {0.6, 0.8}, {0.28, 0.96}};
  const auto c = testing::make_case(v, "p");
  SdcHyperparams hp;
  hp.k = 2;
  hp.percentile = 100;
  const auto out = build_quadruplets(c.product, product_embeddings(c.product, c.store), hp, Mode::reviews_only, 0);
  REQUIRE(out.quadruplets.size() == 1);
  // Row sums: 1.68, 2.56, 2.496, 2.016.
  CHECK(out.quadruplets[0].pseudo_summary_index == 1);
}

TEST_CASE("quadruplet records round-trip") {
  std::mt19937_64 rng(1);
  embed::EmbeddingStore store;
  const auto c = random_corpus(rng, 8, store);
  SdcHyperparams hp;
  hp.k = 1;
  const auto run = run_sdc(c, store, hp);
  testing::TempDir dir;
  write_quadruplets(run.quadruplets, dir.file("q.jsonl"));
  CHECK(read_quadruplets(dir.file("q.jsonl")) == run.quadruplets);
}
