// Copyright 2026 The MEDOS Authors.
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <filesystem>
#include <random>
#include <thread>

#include <doctest.h>
#include <httplib.h>
#include <json.hpp>

#include "medos/embed.hpp"
#include "medos/error.hpp"
#include "medos/kernels.hpp"
#include "test_util.hpp"

using namespace medos;
using namespace medos::embed;
using medos::testing::TempDir;
using medos::testing::write_text;

namespace {

EmbeddingMatrix rows(std::vector<std::vector<double>> r) {
  EmbeddingMatrix m;
  m.values = Matrix(r.size(), r.front().size());
  for (std::size_t i = 0; i < r.size(); ++i) {
    std::copy(r[i].begin(), r[i].end(), m.values.row(i).begin());
    m.row_keys.push_back("k" + std::to_string(i));
  }
  return m;
}

EmbeddingProviderConfig fallback(std::size_t dim = 64) {
  EmbeddingProviderConfig cfg;
  cfg.kind = ProviderKind::hashed_ngram_fallback;
  cfg.dimension = dim;
  return cfg;
}

}  // namespace

TEST_CASE("fallback embedder: identical texts give identical rows") {
  const std::vector<std::string> t = {"a", "a"};
  const auto m = embed_texts(fallback(), t);
  REQUIRE(m.rows() == 2);
  CHECK(std::equal(m.values.row(0).begin(), m.values.row(0).end(), m.values.row(1).begin()));
}

TEST_CASE("fallback embedder: rows have unit L2 norm") {
  const std::vector<std::string> t = {"x", "The battery lasts two days.", "ünïcödé text", "a b c d e f g h"};
  const auto m = embed_texts(fallback(384), t);
  for (std::size_t i = 0; i < m.rows(); ++i) CHECK(std::abs(kernels::norm2(m.values.row(i)) - 1.0) < 1e-9);
}

TEST_CASE("fallback embedder is byte-identical across thread counts and serial execution") {
  std::vector<std::string> t;
  for (int i = 0; i < 200; ++i) t.push_back("review number " + std::to_string(i * 7919) + " is fine");
  auto cfg = fallback(128);
  cfg.parallel = false;
  const auto serial = embed_texts(cfg, t);
  cfg.parallel = true;
  for (int threads : {1, 2, 4}) {
    kernels::set_num_threads(threads);
    CHECK(embed_texts(cfg, t).values == serial.values);
  }
}

TEST_CASE("precomputed embeddings are returned exactly, in query order") {
  TempDir dir;
  const auto path = dir.file("emb.jsonl");
  write_text(path,
             R"({"key":"alpha","vector":[0.1,0.2,0.30000000000000004]})" "\n"
             R"({"key":"beta","vector":[1e-300,-2.5,3]})" "\n"
             R"({"key":"gamma","vector":[7,8,9]})" "\n");
  EmbeddingProviderConfig cfg;
  cfg.kind = ProviderKind::precomputed_file;
  cfg.precomputed_path = path;
  const std::vector<std::string> q = {"gamma", "alpha", "beta"};
  const auto m = embed_texts(cfg, q);
  CHECK(m.values.data == std::vector<double>{7, 8, 9, 0.1, 0.2, 0.30000000000000004, 1e-300, -2.5, 3});
  CHECK(m.row_keys == q);

  const std::vector<std::string> missing = {"alpha", "delta"};
  CHECK_THROWS_WITH_AS(embed_texts(cfg, missing), "no stored embedding for key 'delta'", DataError);
}

TEST_CASE("embedding store save/load round-trips bitwise") {
  TempDir dir;
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd;
  EmbeddingStore s;
  for (int i = 0; i < 20; ++i) {
    std::vector<double> v(5);
    for (double& x : v) x = nd(rng);
    s.put("key " + std::to_string(i), v);
  }
  s.save(dir.file("s.jsonl"));
  const auto back = EmbeddingStore::load(dir.file("s.jsonl"));
  for (int i = 0; i < 20; ++i) CHECK(back.at("key " + std::to_string(i)) == s.at("key " + std::to_string(i)));
}

TEST_CASE("cosine_sim examples") {
  CHECK(cosine_sim(rows({{1, 0, 0}}), rows({{1, 0, 0}})).data[0] == 1.0);
  CHECK(cosine_sim(rows({{1, 0}}), rows({{0, 1}})).data[0] == 0.0);
  CHECK(cosine_sim(rows({{1, 1}}), rows({{1, 0}})).data[0] == doctest::Approx(0.70710678).epsilon(1e-8));
}

TEST_CASE("cosine_sim errors") {
  CHECK_THROWS_AS(cosine_sim(rows({{1, 0}}), rows({{1, 0, 0}})), ContractError);
  auto z = rows({{1, 0}, {0, 0}});
  z.row_keys[1] = "empty-review";
  CHECK_THROWS_WITH_AS(cosine_sim(z, rows({{1, 1}})), "cosine: zero-norm row 'empty-review'", ContractError);
}

TEST_CASE("property: cosine_sim(A, A) is symmetric with unit diagonal, and scale invariant") {
  std::mt19937_64 rng(99);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng() % 15, d = 1 + rng() % 12;
    std::vector<std::vector<double>> r(n, std::vector<double>(d));
    for (auto& row : r)
      for (double& x : row) x = nd(rng);
    const auto a = rows(r);
    const Matrix s = cosine_sim(a, a);
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(std::abs(s(i, i) - 1.0) < 1e-9);
      for (std::size_t j = 0; j < n; ++j) {
        CHECK(std::abs(s(i, j) - s(j, i)) < 1e-12);
        CHECK(std::abs(s(i, j)) <= 1.0 + 1e-12);
      }
    }
    auto scaled = a;
    const std::size_t row = rng() % n;
    for (double& x : scaled.values.row(row)) x *= 3.7;
    const Matrix s2 = cosine_sim(scaled, a);
    for (std::size_t i = 0; i < s.size(); ++i) CHECK(std::abs(s.data[i] - s2.data[i]) < 1e-9);
  }
}

TEST_CASE("external embedder reports transport failure with the retry count") {
  EmbeddingProviderConfig cfg;
  cfg.kind = ProviderKind::external_checkpoint;
  cfg.endpoint = "http://127.0.0.1:1/embed";
  cfg.max_retries = 2;
  cfg.retry_backoff_ms = 1;
  const std::vector<std::string> t = {"hello"};
  try {
    embed_texts(cfg, t);
    FAIL("expected TransportError");
  } catch (const TransportError& e) {
    CHECK(e.attempts() == 3);
    CHECK(std::string(e.what()).find("after 3 attempts") != std::string::npos);
  }
}

TEST_CASE("external embedder talks to an HTTP endpoint") {
  httplib::Server server;
  server.Post("/embed", [](const httplib::Request& req, httplib::Response& res) {
    const auto body = nlohmann::json::parse(req.body);
    nlohmann::json out;
    out["embeddings"] = nlohmann::json::array();
    for (const auto& t : body.at("texts")) {
      const double len = static_cast<double>(t.get<std::string>().size());
      out["embeddings"].push_back({len, 1.0, body.at("model") == "all-MiniLM-L12-v2" ? 2.0 : 0.0});
    }
    res.set_content(out.dump(), "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  EmbeddingProviderConfig cfg;
  cfg.kind = ProviderKind::external_checkpoint;
  cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/embed";
  cfg.batch_size = 2;
  const std::vector<std::string> t = {"a", "bbb", "cc"};
  const auto m = embed_texts(cfg, t);
  server.stop();
  th.join();
  CHECK(m.values.data == std::vector<double>{1, 1, 2, 3, 1, 2, 2, 1, 2});
}

TEST_CASE("embedding cache is reused and rebuilt when corrupted") {
  TempDir dir;
  const auto corpus_path = dir.file("corpus.jsonl");
  write_text(corpus_path, "");
  const std::vector<std::string> t = {"one", "two"};
  const auto first = ensure_cache(corpus_path, fallback(16), t);
  CHECK_FALSE(first.reused);
  CHECK(first.path.find("corpus.jsonl.embcache/hashed-ngram-fallback--all-MiniLM-L12-v2--d16/") != std::string::npos);
  const auto second = ensure_cache(corpus_path, fallback(16), t);
  CHECK(second.reused);
  CHECK(second.path == first.path);

  write_text(first.path, "{\"key\":\"one\",\"vector\":[1]}\n");
  const auto third = ensure_cache(corpus_path, fallback(16), t);
  CHECK_FALSE(third.reused);
  CHECK(EmbeddingStore::load(third.path).dimension() == 16);

  const std::vector<std::string> other = {"three"};
  CHECK(cache_path(corpus_path, fallback(16), other) != first.path);
}
