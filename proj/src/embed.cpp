// Copyright 2026 The MEDOS Authors.
// SPDX-License-Identifier: Apache-2.0

#include "medos/embed.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "medos/error.hpp"
#include "medos/kernels.hpp"
#include "medos/text.hpp"

namespace medos::embed {

using nlohmann::json;

std::string_view to_string(ProviderKind k) {
  switch (k) {
    case ProviderKind::external_checkpoint: return "external-checkpoint";
    case ProviderKind::precomputed_file: return "precomputed-file";
    case ProviderKind::hashed_ngram_fallback: return "hashed-ngram-fallback";
  }
  return "hashed-ngram-fallback";
}

ProviderKind parse_provider_kind(std::string_view s) {
  if (s == "external" || s == "external-checkpoint") return ProviderKind::external_checkpoint;
  if (s == "precomputed" || s == "precomputed-file") return ProviderKind::precomputed_file;
  if (s == "fallback" || s == "hashed-ngram-fallback") return ProviderKind::hashed_ngram_fallback;
  throw ContractError("unknown embedder kind '" + std::string(s) + "'");
}

void EmbeddingProviderConfig::validate() const {
  if (dimension == 0) throw ContractError("embedding dimension must be positive");
  if (kind == ProviderKind::precomputed_file && precomputed_path.empty()) {
    throw ContractError("precomputed embedder requires a file path");
  }
  if (max_retries < 0) throw ContractError("max_retries must be >= 0");
}

void EmbeddingMatrix::check() const {
  if (row_keys.size() != values.rows) throw ContractError("embedding matrix: row_keys/rows mismatch");
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values.data[i])) {
      throw NumericError("embedding matrix: non-finite entry in row '" + row_keys[i / values.cols] + "'");
    }
  }
}

EmbeddingMatrix EmbeddingMatrix::select_rows(std::span<const std::size_t> idx) const {
  EmbeddingMatrix out;
  out.values = Matrix(idx.size(), values.cols);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy_n(values.row(idx[i]).begin(), values.cols, out.values.row(i).begin());
    out.row_keys.push_back(row_keys[idx[i]]);
  }
  return out;
}

EmbeddingStore EmbeddingStore::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("embedding file not found: " + path);
  EmbeddingStore store;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      store.put(j.at("key").get<std::string>(), j.at("vector").get<std::vector<double>>());
    } catch (const json::exception& e) {
      throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return store;
}

void EmbeddingStore::save(const std::string& path) const {
  std::string out;
  for (const auto& [key, vec] : vectors_) {
    out += json{{"key", key}, {"vector", vec}}.dump();
    out += '\n';
  }
  text::write_file_atomic(path, out);
}

void EmbeddingStore::put(std::string key, std::vector<double> vec) {
  if (vec.empty()) throw DataError("embedding for '" + key + "' is empty");
  if (dimension_ == 0) dimension_ = vec.size();
  if (vec.size() != dimension_) {
    throw DataError("embedding for '" + key + "' has dimension " + std::to_string(vec.size()) +
                    ", expected " + std::to_string(dimension_));
  }
  vectors_[std::move(key)] = std::move(vec);
}

const std::vector<double>& EmbeddingStore::at(const std::string& key) const {
  const auto it = vectors_.find(key);
  if (it == vectors_.end()) throw DataError("no stored embedding for key '" + key + "'");
  return it->second;
}

EmbeddingMatrix EmbeddingStore::lookup(std::span<const std::string> keys) const {
  EmbeddingMatrix m;
  m.values = Matrix(keys.size(), dimension_);
  for (std::size_t i = 0; i < keys.size(); ++i) {
    const auto& v = at(keys[i]);
    std::copy(v.begin(), v.end(), m.values.row(i).begin());
    m.row_keys.push_back(keys[i]);
  }
  return m;
}

std::vector<double> hashed_ngram_embedding(std::string_view text, std::size_t dimension,
                                           std::uint64_t seed) {
  std::string padded = " ";
  for (const char ch : text) padded.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  padded.push_back(' ');

  std::vector<double> v(dimension, 0.0);
  for (std::size_t n = 2; n <= 3; ++n) {
    if (padded.size() < n) continue;
    const std::uint64_t n_seed = text::fnv1a64(std::string_view(reinterpret_cast<const char*>(&n), sizeof n), seed);
    for (std::size_t i = 0; i + n <= padded.size(); ++i) {
      const std::uint64_t h = text::fnv1a64(std::string_view(padded).substr(i, n), n_seed);
      v[h % dimension] += 1.0;
    }
  }
  const double norm = kernels::norm2(v);
  for (double& x : v) x /= norm;
  return v;
}

namespace {

EmbeddingMatrix embed_fallback(const EmbeddingProviderConfig& cfg, std::span<const std::string> texts) {
  EmbeddingMatrix m;
  m.values = Matrix(texts.size(), cfg.dimension);
  m.row_keys.assign(texts.begin(), texts.end());
  const auto n = static_cast<std::ptrdiff_t>(texts.size());
  auto one = [&](std::ptrdiff_t i) {
    const auto v = hashed_ngram_embedding(texts[static_cast<std::size_t>(i)], cfg.dimension, cfg.hash_seed);
    std::copy(v.begin(), v.end(), m.values.row(static_cast<std::size_t>(i)).begin());
  };
  if (cfg.parallel) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) one(i);
  } else {
    for (std::ptrdiff_t i = 0; i < n; ++i) one(i);
  }
  return m;
}

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

Endpoint split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ContractError("endpoint must be an http(s) URL: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

std::vector<std::vector<double>> post_batch(const EmbeddingProviderConfig& cfg, const Endpoint& ep,
                                            std::span<const std::string> batch) {
  const json body{{"model", cfg.checkpoint_name}, {"texts", std::vector<std::string>(batch.begin(), batch.end())}};
  const int attempts = cfg.max_retries + 1;
  std::string last_error;
  for (int attempt = 1; attempt <= attempts; ++attempt) {
    httplib::Client client(ep.origin);
    client.set_connection_timeout(5);
    client.set_read_timeout(60);
    auto res = client.Post(ep.path, body.dump(), "application/json");
    if (res && res->status == 200) {
      try {
        auto rows = json::parse(res->body).at("embeddings").get<std::vector<std::vector<double>>>();
        if (rows.size() != batch.size()) throw DataError("embedding endpoint returned wrong row count");
        return rows;
      } catch (const json::exception& e) {
        throw DataError(std::string("embedding endpoint returned malformed body: ") + e.what());
      }
    }
    last_error = res ? "HTTP " + std::to_string(res->status) : httplib::to_string(res.error());
    if (attempt < attempts) {
      std::this_thread::sleep_for(std::chrono::milliseconds(cfg.retry_backoff_ms * attempt));
    }
  }
  throw TransportError("embedding endpoint " + cfg.endpoint + " unavailable: " + last_error, attempts);
}

EmbeddingMatrix embed_external(const EmbeddingProviderConfig& cfg, std::span<const std::string> texts) {
  if (cfg.endpoint.empty()) throw TransportError("no embedding endpoint configured", 0);
  const Endpoint ep = split_url(cfg.endpoint);
  EmbeddingMatrix m;
  m.row_keys.assign(texts.begin(), texts.end());
  std::size_t dim = 0;
  std::vector<double> flat;
  for (std::size_t start = 0; start < texts.size(); start += cfg.batch_size) {
    const auto batch = texts.subspan(start, std::min(cfg.batch_size, texts.size() - start));
    for (auto& row : post_batch(cfg, ep, batch)) {
      if (dim == 0) dim = row.size();
      if (row.size() != dim || dim == 0) throw DataError("embedding endpoint returned ragged rows");
      flat.insert(flat.end(), row.begin(), row.end());
    }
  }
  m.values.rows = texts.size();
  m.values.cols = dim;
  m.values.data = std::move(flat);
  return m;
}

}  // namespace

EmbeddingMatrix embed_texts(const EmbeddingProviderConfig& cfg, std::span<const std::string> texts) {
  cfg.validate();
  if (texts.empty()) throw ContractError("embed_texts: no texts given");
  EmbeddingMatrix m;
  switch (cfg.kind) {
    case ProviderKind::hashed_ngram_fallback: m = embed_fallback(cfg, texts); break;
    case ProviderKind::precomputed_file: m = EmbeddingStore::load(cfg.precomputed_path).lookup(texts); break;
    case ProviderKind::external_checkpoint: m = embed_external(cfg, texts); break;
  }
  m.check();
  return m;
}

Matrix cosine_sim(const EmbeddingMatrix& a, const EmbeddingMatrix& b, bool parallel) {
  try {
    return kernels::cosine_matrix_checked(a.values, b.values, parallel);
  } catch (const ContractError& e) {
    // Re-raise zero-norm errors with the row key instead of the index.
    for (const auto* m : {&a, &b}) {
      for (std::size_t i = 0; i < m->rows(); ++i) {
        if (kernels::norm2(m->values.row(i)) == 0.0) {
          throw ContractError("cosine: zero-norm row '" + m->row_keys[i] + "'");
        }
      }
    }
    throw;
  }
}

std::vector<std::string> corpus_texts(const corpus::Corpus& c) {
  std::vector<std::string> out;
  std::set<std::string> seen;
  auto add = [&](const std::string& t) {
    if (seen.insert(t).second) out.push_back(t);
  };
  for (const auto& p : c.products) {
    for (const auto& r : p.reviews) add(r.text);
    if (p.description) add(*p.description);
    for (const auto& q : p.qa_pairs) add(q.concatenated);
  }
  return out;
}

std::string cache_path(const std::string& corpus_path, const EmbeddingProviderConfig& cfg,
                       std::span<const std::string> texts) {
  std::uint64_t h = text::fnv1a64(to_string(cfg.kind));
  h = text::fnv1a64(cfg.checkpoint_name, h);
  for (const auto& t : texts) {
    h = text::fnv1a64(t, h);
    h = text::fnv1a64(std::string_view("\n", 1), h);
  }
  std::string name = std::string(to_string(cfg.kind)) + "--";
  for (const char ch : cfg.checkpoint_name) name.push_back(std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' ? ch : '_');
  name += "--d" + std::to_string(cfg.dimension);
  return (std::filesystem::path(corpus_path + ".embcache") / name / (text::hex64(h) + ".jsonl")).string();
}

CacheResult ensure_cache(const std::string& corpus_path, const EmbeddingProviderConfig& cfg,
                         std::span<const std::string> texts) {
  CacheResult r{cache_path(corpus_path, cfg, texts), false};
  const std::string sum_path = r.path + ".sum";
  namespace fs = std::filesystem;
  if (fs::exists(r.path) && fs::exists(sum_path)) {
    if (text::normalize_whitespace(text::read_file(sum_path)) == text::file_hash(r.path)) {
      r.reused = true;
      return r;
    }
  }
  const EmbeddingMatrix m = embed_texts(cfg, texts);
  EmbeddingStore store;
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const auto row = m.values.row(i);
    store.put(m.row_keys[i], {row.begin(), row.end()});
  }
  store.save(r.path);
  text::write_file_atomic(sum_path, text::file_hash(r.path) + "\n");
  return r;
}

}  // namespace medos::embed
