// Copyright 2026 The MEDOS Authors.
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "medos/annotate.hpp"
#include "medos/error.hpp"
#include "medos/text.hpp"
#include "test_util.hpp"

using namespace medos;
using namespace medos::annotate;
using medos::testing::TempDir;

namespace {

corpus::Product product(const std::string& id, std::size_t n_reviews) {
  corpus::Product p;
  p.product_id = id;
  for (std::size_t i = 0; i < n_reviews; ++i) p.reviews.push_back({id + "-r" + std::to_string(i), "review " + std::to_string(i), 5});
  return p;
}

corpus::Corpus test_corpus() {
  corpus::Corpus c;
  c.split = corpus::Split::test;
  for (const char* id : {"a1", "a2", "a3"}) {
    auto p = product(id, 2);
    p.gold_summaries = std::vector<std::string>{"gold"};
    c.products.push_back(p);
  }
  return c;
}

AnnotationClientConfig stub_config() {
  AnnotationClientConfig cfg;
  cfg.transport = TransportKind::stub;
  cfg.fixture_dir = medos::testing::data_path("annotate");
  cfg.backoff_ms = 0;
  cfg.max_retries = 3;
  return cfg;
}

std::vector<nlohmann::json> read_jsonl(const std::string& path) {
  std::vector<nlohmann::json> out;
  std::ifstream in(path);
  for (std::string line; std::getline(in, line);) out.push_back(nlohmann::json::parse(line));
  return out;
}

}  // namespace

TEST_CASE("gpt-r prompt lists every review as a JSON array") {
  auto p = product("x", 8);
  p.reviews[3].text = "says \"great\"";
  const std::string got = build_prompt(PromptKind::gpt_r, p);
  const std::string want =
      "Following are the reviews for a product. Generate a summary of the opinions as a review itself with a word "
      "limit of under 100 words. Use information from the given reviews only to generate the summary.\n"
      "reviews: [\"review 0\",\"review 1\",\"review 2\",\"says \\\"great\\\"\",\"review 4\",\"review 5\","
      "\"review 6\",\"review 7\"]";
  CHECK(got == want);
}

TEST_CASE("gpt-rdq prompt renders description and empty QA") {
  auto p = product("x", 2);
  p.description = "Steel body.";
  const std::string want =
      "Following are the reviews, description, and question-answers for a product. Generate a summary of the "
      "opinions as a review itself with a word limit of under 100 words. Use information from the given reviews, "
      "description, and question-answers only to generate the summary.\n"
      "reviews: [\"review 0\",\"review 1\"]\n"
      "description : \"Steel body.\"\n"
      "question-answers: []";
  CHECK(build_prompt(PromptKind::gpt_rdq, p) == want);

  p.description.reset();
  p.qa_pairs = {corpus::QAPair::make("Is it loud?", "No.")};
  const std::string got = build_prompt(PromptKind::gpt_rdq, p);
  CHECK(got.find("description : \"\"\n") != std::string::npos);
  CHECK(got.find("question-answers: [\"Is it loud? No.\"]") != std::string::npos);
}

TEST_CASE("prompt rendering is byte-stable across a serialization round trip") {
  auto p = product("x", 3);
  p.description = "Caf\xc3\xa9 grade.";
  p.qa_pairs = {corpus::QAPair::make("Q?", "A.")};
  const auto back = corpus::parse_product(corpus::serialize_product(p));
  for (auto k : {PromptKind::gpt_r, PromptKind::gpt_rdq}) {
    CHECK(build_prompt(k, p) == build_prompt(k, back));
    CHECK(build_prompt(k, p) == build_prompt(k, p));
  }
}

TEST_CASE("stub annotation stores normalized fixture text and records failures") {
  TempDir tmp;
  const auto cfg = stub_config();
  StubTransport stub(cfg.fixture_dir);
  const auto log = tmp.file("prov.jsonl");
  const auto res = annotate_testset(test_corpus(), cfg, PromptKind::gpt_r, stub, log);
  CHECK(res.annotated == 2);
  REQUIRE(res.failures.size() == 1);
  CHECK(res.failures[0].product_id == "a2");
  CHECK(res.failures[0].attempts == 4);

  const auto& a1 = res.corpus.products[0].annotations.at("gpt-r");
  CHECK(a1.raw == text::read_file(cfg.fixture_dir + "/a1.gpt-r.txt"));
  CHECK(a1.summary == "Sturdy kettle that boils fast. The lid can be stiff at first.");
  CHECK(a1.prompt_hash == text::hex64(text::fnv1a64(build_prompt(PromptKind::gpt_r, res.corpus.products[0]))));
  CHECK(res.corpus.products[2].annotations.at("gpt-r").summary == "Good blender, loud but powerful.");
  CHECK(res.corpus.products[1].annotations.empty());

  const auto recs = read_jsonl(log);
  REQUIRE(recs.size() == 3);
  std::size_t failed = 0;
  for (const auto& r : recs) {
    CHECK(r.at("kind") == "gpt-r");
    CHECK(r.contains("prompt_hash"));
    if (r.at("status") == "failed") ++failed;
  }
  CHECK(failed == 1);
}

TEST_CASE("annotation is idempotent") {
  const auto cfg = stub_config();
  StubTransport stub(cfg.fixture_dir);
  const auto first = annotate_testset(test_corpus(), cfg, PromptKind::gpt_r, stub);
  const auto second = annotate_testset(first.corpus, cfg, PromptKind::gpt_r, stub);
  CHECK(second.skipped == 2);
  CHECK(second.annotated == 0);
  CHECK(second.failures.size() == 1);
  CHECK(second.corpus.products == first.corpus.products);
}

TEST_CASE("rate-limited attempts are retried within the budget") {
  auto cfg = stub_config();
  StubTransport stub(cfg.fixture_dir);
  auto c = test_corpus();
  const auto ok = annotate_testset(c, cfg, PromptKind::gpt_rdq, stub);
  CHECK(ok.annotated == 3);
  CHECK(ok.corpus.products[2].annotations.at("gpt-rdq").summary == "Blender that crushes ice well.");

  cfg.max_retries = 1;
  StubTransport fresh(cfg.fixture_dir);
  const auto short_budget = annotate_testset(c, cfg, PromptKind::gpt_rdq, fresh);
  REQUIRE(short_budget.failures.size() == 1);
  CHECK(short_budget.failures[0].product_id == "a3");
  CHECK(short_budget.failures[0].attempts == 2);
}

TEST_CASE("annotation refuses non-test splits and bad configs") {
  auto c = test_corpus();
  c.split = corpus::Split::train;
  const auto cfg = stub_config();
  StubTransport stub(cfg.fixture_dir);
  CHECK_THROWS_AS(annotate_testset(c, cfg, PromptKind::gpt_r, stub), ContractError);
  auto bad = cfg;
  bad.max_in_flight = 0;
  CHECK_THROWS_AS(bad.validate(), ContractError);
  CHECK_THROWS_AS(parse_prompt_kind("gpt-x"), ContractError);
  CHECK_THROWS_AS(parse_transport("carrier-pigeon"), ContractError);
}

TEST_CASE("live transport needs the key from the environment") {
  AnnotationClientConfig cfg;
  cfg.transport = TransportKind::live;
  cfg.endpoint = "http://127.0.0.1:9/v1";
  cfg.api_key_env = "MEDOS_TEST_UNSET_KEY";
  ::unsetenv("MEDOS_TEST_UNSET_KEY");
  CHECK_THROWS_AS(LiveTransport{cfg}, ContractError);
}

TEST_CASE("live transport talks to a loopback endpoint") {
  httplib::Server srv;
  int calls = 0;
  std::string seen_auth;
  srv.Post("/v1/complete", [&](const httplib::Request& req, httplib::Response& res) {
    ++calls;
    seen_auth = req.get_header_value("Authorization");
    if (calls == 1) {
      res.status = 429;
      res.set_header("Retry-After", "0");
      return;
    }
    const auto body = nlohmann::json::parse(req.body);
    if (body.at("prompt").get<std::string>().find("review 0") == std::string::npos) {
      res.status = 400;
      return;
    }
    nlohmann::json out{{"choices", {{{"message", {{"content", "Loopback  summary."}}}}}}};
    res.set_content(out.dump(), "application/json");
  });
  const int port = srv.bind_to_any_port("127.0.0.1");
  std::thread th([&] { srv.listen_after_bind(); });
  srv.wait_until_ready();

  ::setenv("MEDOS_TEST_LIVE_KEY", "sk-test", 1);
  AnnotationClientConfig cfg;
  cfg.transport = TransportKind::live;
  cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/complete";
  cfg.api_key_env = "MEDOS_TEST_LIVE_KEY";
  cfg.backoff_ms = 0;
  cfg.max_in_flight = 1;
  cfg.timeout_ms = 5000;
  auto c = test_corpus();
  c.products.resize(1);
  auto tr = make_transport(cfg);
  const auto res = annotate_testset(c, cfg, PromptKind::gpt_r, *tr);
  srv.stop();
  th.join();

  CHECK(calls == 2);
  CHECK(seen_auth == "Bearer sk-test");
  REQUIRE(res.annotated == 1);
  CHECK(res.corpus.products[0].annotations.at("gpt-r").summary == "Loopback summary.");
}
