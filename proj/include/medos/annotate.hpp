// Copyright 2026 The MEDOS Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "medos/corpus.hpp"
#include "medos/error.hpp"

namespace medos::annotate {

enum class PromptKind { gpt_r, gpt_rdq };
std::string_view to_string(PromptKind k);  // "gpt-r" | "gpt-rdq"
PromptKind parse_prompt_kind(std::string_view s);

// Renders the reviews-only or reviews+description+QA annotation prompt.
// Lists are JSON string arrays; an absent description renders as "".
std::string build_prompt(PromptKind kind, const corpus::Product& p);

inline constexpr const char* kApiKeyEnv = "MEDOS_ANNOTATE_API_KEY";

enum class TransportKind { live, stub };
std::string_view to_string(TransportKind t);
TransportKind parse_transport(std::string_view s);

struct AnnotationClientConfig {
  std::string endpoint;  // URL for live transport
  std::string model;     // forwarded to the endpoint as-is
  TransportKind transport = TransportKind::stub;
  std::string fixture_dir;  // stub transport
  int max_retries = 3;
  int timeout_ms = 60000;
  double rate_limit_per_minute = 0.0;  // 0 = unlimited
  std::size_t max_in_flight = 2;
  int backoff_ms = 1000;  // doubled per retry
  std::string api_key_env = kApiKeyEnv;

  void validate() const;
};

// The endpoint asked the client to slow down.
class RateLimitedError : public Error {
 public:
  RateLimitedError(const std::string& what, int retry_after_ms) : Error(what), retry_after_ms_(retry_after_ms) {}
  int retry_after_ms() const noexcept { return retry_after_ms_; }

 private:
  int retry_after_ms_;
};

struct Request {
  std::string product_id;
  PromptKind kind = PromptKind::gpt_r;
  std::string prompt;
};

// One attempt; throws Error (transient), RateLimitedError, or DataError (not retried).
class Transport {
 public:
  virtual ~Transport() = default;
  virtual std::string complete(const Request& r) = 0;
};

// Reads <fixture_dir>/<product_id>.<kind>.txt. A sibling `.fail` file makes
// every attempt fail; a `.ratelimit` file holding N makes the first N attempts
// report a rate limit.
class StubTransport : public Transport {
 public:
  explicit StubTransport(std::string fixture_dir);
  std::string complete(const Request& r) override;

 private:
  std::string dir_;
  std::mutex mu_;
  std::map<std::string, int> rate_limited_;
};

// POSTs {"model", "prompt"} as JSON; accepts {"completion": "..."} or a
// chat-style {"choices": [{"message": {"content": "..."}}]} body. The bearer
// token is read from the configured environment variable.
class LiveTransport : public Transport {
 public:
  explicit LiveTransport(AnnotationClientConfig cfg);
  std::string complete(const Request& r) override;

 private:
  AnnotationClientConfig cfg_;
  std::string api_key_;
};

std::unique_ptr<Transport> make_transport(const AnnotationClientConfig& cfg);

struct Failure {
  std::string product_id;
  std::string error;
  int attempts = 0;
};

struct AnnotateResult {
  corpus::Corpus corpus;
  std::size_t annotated = 0;
  std::size_t skipped = 0;  // already annotated for this kind
  std::vector<Failure> failures;
};

// Products already holding an annotation of `kind` are left untouched.
// When provenance_path is set one JSON line per attempted product is appended.
AnnotateResult annotate_testset(const corpus::Corpus& c, const AnnotationClientConfig& cfg, PromptKind kind,
                                Transport& transport, const std::optional<std::string>& provenance_path = std::nullopt);

}  // namespace medos::annotate
