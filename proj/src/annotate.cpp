// Copyright 2026 The MEDOS Authors.
// SPDX-License-Identifier: Apache-2.0

#include "medos/annotate.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "medos/text.hpp"

namespace medos::annotate {

using nlohmann::json;
using nlohmann::ordered_json;

std::string_view to_string(PromptKind k) { return k == PromptKind::gpt_r ? "gpt-r" : "gpt-rdq"; }

PromptKind parse_prompt_kind(std::string_view s) {
  if (s == "gpt-r") return PromptKind::gpt_r;
  if (s == "gpt-rdq") return PromptKind::gpt_rdq;
  throw ContractError("unknown prompt kind '" + std::string(s) + "' (expected gpt-r or gpt-rdq)");
}

std::string_view to_string(TransportKind t) { return t == TransportKind::live ? "live" : "stub"; }

TransportKind parse_transport(std::string_view s) {
  if (s == "live") return TransportKind::live;
  if (s == "stub") return TransportKind::stub;
  throw ContractError("unknown transport '" + std::string(s) + "' (expected live or stub)");
}

namespace {

constexpr std::string_view kPromptR =
    "Following are the reviews for a product. Generate a summary of the opinions as a review itself with a word "
    "limit of under 100 words. Use information from the given reviews only to generate the summary.";
constexpr std::string_view kPromptRDQ =
    "Following are the reviews, description, and question-answers for a product. Generate a summary of the opinions "
    "as a review itself with a word limit of under 100 words. Use information from the given reviews, description, "
    "and question-answers only to generate the summary.";

std::string json_list(const std::vector<std::string>& items) { return json(items).dump(); }

}  // namespace

std::string build_prompt(PromptKind kind, const corpus::Product& p) {
  std::vector<std::string> reviews;
  for (const auto& r : p.reviews) reviews.push_back(r.text);
  if (kind == PromptKind::gpt_r) return std::string(kPromptR) + "\nreviews: " + json_list(reviews);
  std::vector<std::string> qa;
  for (const auto& q : p.qa_pairs) qa.push_back(q.concatenated);
  return std::string(kPromptRDQ) + "\nreviews: " + json_list(reviews) +
         "\ndescription : " + json(p.description.value_or("")).dump() + "\nquestion-answers: " + json_list(qa);
}

void AnnotationClientConfig::validate() const {
  if (max_retries < 0) throw ContractError("annotate: max_retries must be >= 0");
  if (max_in_flight == 0) throw ContractError("annotate: max_in_flight must be >= 1");
  if (rate_limit_per_minute < 0) throw ContractError("annotate: rate limit must be >= 0");
  if (transport == TransportKind::stub && fixture_dir.empty()) {
    throw ContractError("annotate: stub transport requires a fixture directory");
  }
  if (transport == TransportKind::live && endpoint.empty()) throw ContractError("annotate: live transport requires an endpoint");
}

// ---------------------------------------------------------------- transports

StubTransport::StubTransport(std::string fixture_dir) : dir_(std::move(fixture_dir)) {
  if (!std::filesystem::is_directory(dir_)) throw DataError("stub fixture directory not found: " + dir_);
}

std::string StubTransport::complete(const Request& r) {
  const std::string base = dir_ + "/" + r.product_id + "." + std::string(to_string(r.kind));
  if (std::filesystem::exists(base + ".fail")) throw Error("stub: injected failure for " + r.product_id);
  if (std::filesystem::exists(base + ".ratelimit")) {
    std::lock_guard lock(mu_);
    auto [it, fresh] = rate_limited_.try_emplace(base, 0);
    if (fresh) std::ifstream(base + ".ratelimit") >> it->second;
    if (it->second > 0) {
      --it->second;
      throw RateLimitedError("stub: rate limited", 0);
    }
  }
  if (!std::filesystem::exists(base + ".txt")) throw DataError("stub: no fixture " + base + ".txt");
  return text::read_file(base + ".txt");
}

LiveTransport::LiveTransport(AnnotationClientConfig cfg) : cfg_(std::move(cfg)) {
  const char* key = std::getenv(cfg_.api_key_env.c_str());
  if (key == nullptr || *key == '\0') {
    throw ContractError("live annotation needs the API key in environment variable " + cfg_.api_key_env);
  }
  api_key_ = key;
}

std::string LiveTransport::complete(const Request& r) {
  const auto scheme_end = cfg_.endpoint.find("://");
  if (scheme_end == std::string::npos) throw ContractError("annotation endpoint must be a URL: " + cfg_.endpoint);
  const auto path_start = cfg_.endpoint.find('/', scheme_end + 3);
  const std::string origin = cfg_.endpoint.substr(0, path_start);
  const std::string path = path_start == std::string::npos ? "/" : cfg_.endpoint.substr(path_start);
  httplib::Client client(origin);
  const auto secs = std::chrono::milliseconds(cfg_.timeout_ms);
  client.set_connection_timeout(std::chrono::duration_cast<std::chrono::seconds>(secs).count(), 0);
  client.set_read_timeout(std::chrono::duration_cast<std::chrono::seconds>(secs).count(), 0);
  client.set_bearer_token_auth(api_key_);
  const json body{{"model", cfg_.model}, {"prompt", r.prompt}};
  auto res = client.Post(path, body.dump(), "application/json");
  if (!res) throw Error("annotation endpoint unreachable: " + httplib::to_string(res.error()));
  if (res->status == 429) {
    int wait_ms = cfg_.backoff_ms;
    if (res->has_header("Retry-After")) wait_ms = std::atoi(res->get_header_value("Retry-After").c_str()) * 1000;
    throw RateLimitedError("annotation endpoint rate limited", wait_ms);
  }
  if (res->status != 200) throw Error("annotation endpoint returned HTTP " + std::to_string(res->status));
  try {
    const auto j = json::parse(res->body);
    if (j.contains("completion")) return j.at("completion").get<std::string>();
    return j.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception& e) {
    throw DataError(std::string("annotation endpoint returned a malformed body: ") + e.what());
  }
}

std::unique_ptr<Transport> make_transport(const AnnotationClientConfig& cfg) {
  cfg.validate();
  if (cfg.transport == TransportKind::stub) return std::make_unique<StubTransport>(cfg.fixture_dir);
  return std::make_unique<LiveTransport>(cfg);
}

// ---------------------------------------------------------------- driver

namespace {

class RateLimiter {
 public:
  explicit RateLimiter(double per_minute)
      : interval_(per_minute > 0 ? std::chrono::microseconds(static_cast<long long>(60e6 / per_minute))
                                 : std::chrono::microseconds(0)) {}
  void acquire() {
    if (interval_.count() == 0) return;
    std::chrono::steady_clock::time_point slot;
    {
      std::lock_guard lock(mu_);
      const auto now = std::chrono::steady_clock::now();
      slot = std::max(now, next_);
      next_ = slot + interval_;
    }
    std::this_thread::sleep_until(slot);
  }

 private:
  std::chrono::microseconds interval_;
  std::mutex mu_;
  std::chrono::steady_clock::time_point next_{};
};

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void append_line(const std::string& path, const std::string& line) {
  std::filesystem::path parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
  if (fd < 0) throw DataError("cannot open provenance log " + path);
  const std::string rec = line + "\n";
  const auto n = ::write(fd, rec.data(), rec.size());
  ::close(fd);
  if (n != static_cast<ssize_t>(rec.size())) throw DataError("short write to provenance log " + path);
}

struct Outcome {
  std::optional<std::string> raw;
  std::string error;
  int attempts = 0;
};

Outcome request_with_retries(Transport& tr, const Request& req, const AnnotationClientConfig& cfg,
                             RateLimiter& limiter) {
  Outcome o;
  const int budget = cfg.max_retries + 1;
  for (int attempt = 1; attempt <= budget; ++attempt) {
    o.attempts = attempt;
    limiter.acquire();
    int wait_ms = cfg.backoff_ms << std::min(attempt - 1, 10);
    try {
      o.raw = tr.complete(req);
      return o;
    } catch (const RateLimitedError& e) {
      o.error = e.what();
      wait_ms = std::max(wait_ms, e.retry_after_ms());
    } catch (const DataError& e) {
      o.error = e.what();
      return o;
    } catch (const Error& e) {
      o.error = e.what();
    }
    if (attempt < budget && wait_ms > 0) std::this_thread::sleep_for(std::chrono::milliseconds(wait_ms));
  }
  o.error += " (after " + std::to_string(o.attempts) + " attempts)";
  return o;
}

}  // namespace

AnnotateResult annotate_testset(const corpus::Corpus& c, const AnnotationClientConfig& cfg, PromptKind kind,
                                Transport& transport, const std::optional<std::string>& provenance_path) {
  cfg.validate();
  if (c.split != corpus::Split::test) throw ContractError("annotate: corpus must be a test split");
  AnnotateResult res;
  res.corpus = c;
  const std::string key(to_string(kind));
  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < c.products.size(); ++i) {
    if (c.products[i].annotations.count(key)) ++res.skipped;
    else todo.push_back(i);
  }
  std::vector<Request> reqs(todo.size());
  std::vector<Outcome> outs(todo.size());
  for (std::size_t j = 0; j < todo.size(); ++j) {
    reqs[j] = {c.products[todo[j]].product_id, kind, build_prompt(kind, c.products[todo[j]])};
  }
  RateLimiter limiter(cfg.rate_limit_per_minute);
  std::mutex log_mu;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t j = next++; j < todo.size(); j = next++) {
      outs[j] = request_with_retries(transport, reqs[j], cfg, limiter);
      if (!provenance_path) continue;
      ordered_json rec{{"time", utc_now()},
                       {"product_id", reqs[j].product_id},
                       {"kind", key},
                       {"transport", to_string(cfg.transport)},
                       {"endpoint", cfg.transport == TransportKind::live ? cfg.endpoint : cfg.fixture_dir},
                       {"model", cfg.model},
                       {"prompt_hash", text::hex64(text::fnv1a64(reqs[j].prompt))},
                       {"prompt", reqs[j].prompt},
                       {"attempts", outs[j].attempts},
                       {"status", outs[j].raw ? "ok" : "failed"}};
      if (outs[j].raw) rec["response"] = *outs[j].raw;
      else rec["error"] = outs[j].error;
      std::lock_guard lock(log_mu);
      append_line(*provenance_path, rec.dump());
    }
  };
  const std::size_t n_threads = std::min(cfg.max_in_flight, todo.size());
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  for (std::size_t j = 0; j < todo.size(); ++j) {
    auto& prod = res.corpus.products[todo[j]];
    if (outs[j].raw) {
      prod.annotations[key] = corpus::Annotation{text::normalize_whitespace(*outs[j].raw), *outs[j].raw,
                                                 text::hex64(text::fnv1a64(reqs[j].prompt))};
      ++res.annotated;
    } else {
      res.failures.push_back({prod.product_id, outs[j].error, outs[j].attempts});
    }
  }
  return res;
}

}  // namespace medos::annotate
