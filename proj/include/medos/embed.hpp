// Copyright 2026 The MEDOS Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "medos/corpus.hpp"
#include "medos/matrix.hpp"

namespace medos::embed {

enum class ProviderKind { external_checkpoint, precomputed_file, hashed_ngram_fallback };

std::string_view to_string(ProviderKind k);
// Accepts the CLI spellings external / precomputed / fallback as well as the
// long names.
ProviderKind parse_provider_kind(std::string_view s);

struct EmbeddingProviderConfig {
  ProviderKind kind = ProviderKind::hashed_ngram_fallback;
  std::string checkpoint_name = "all-MiniLM-L12-v2";
  std::size_t dimension = 384;

  // precomputed-file
  std::string precomputed_path;

  // external-checkpoint: POST {"model", "texts"} -> {"embeddings": [[...]]}
  std::string endpoint;
  int max_retries = 3;
  int retry_backoff_ms = 200;
  std::size_t batch_size = 64;

  // hashed-ngram-fallback
  std::uint64_t hash_seed = 0x6d65646f73ULL;
  bool parallel = true;

  void validate() const;
};

struct EmbeddingMatrix {
  Matrix values;
  std::vector<std::string> row_keys;

  std::size_t rows() const noexcept { return values.rows; }
  std::size_t dimension() const noexcept { return values.cols; }

  // Checks |row_keys| == rows and that all entries are finite.
  void check() const;
  EmbeddingMatrix select_rows(std::span<const std::size_t> idx) const;
};

// key -> vector, loaded from / saved to the line-delimited {key, vector} format.
class EmbeddingStore {
 public:
  static EmbeddingStore load(const std::string& path);
  void save(const std::string& path) const;

  void put(std::string key, std::vector<double> vec);
  bool contains(const std::string& key) const { return vectors_.contains(key); }
  const std::vector<double>& at(const std::string& key) const;
  std::size_t size() const noexcept { return vectors_.size(); }
  std::size_t dimension() const noexcept { return dimension_; }

  // Rows for `keys`, in order; throws DataError naming the first missing key.
  EmbeddingMatrix lookup(std::span<const std::string> keys) const;

 private:
  std::map<std::string, std::vector<double>> vectors_;
  std::size_t dimension_ = 0;
};

// One row per text, in input order. Texts are looked up by their own
// content under the precomputed kind.
EmbeddingMatrix embed_texts(const EmbeddingProviderConfig& cfg, std::span<const std::string> texts);

// Deterministic L2-normalized hashed character 2/3-gram embedding.
std::vector<double> hashed_ngram_embedding(std::string_view text, std::size_t dimension,
                                           std::uint64_t seed);

// (i, j) = <A_i, B_j> / (|A_i| |B_j|).
Matrix cosine_sim(const EmbeddingMatrix& a, const EmbeddingMatrix& b, bool parallel = true);

// Distinct texts of a corpus (reviews, descriptions, concatenated QA) in
// first-occurrence order.
std::vector<std::string> corpus_texts(const corpus::Corpus& c);

// Cache location beside the corpus:
//   <corpus>.embcache/<kind>--<checkpoint>--d<dim>/<content-hash>.jsonl
// plus a `.sum` sidecar holding the file hash.
std::string cache_path(const std::string& corpus_path, const EmbeddingProviderConfig& cfg,
                       std::span<const std::string> texts);

struct CacheResult {
  std::string path;
  bool reused = false;
};

// Returns the cache file for `texts`, computing and atomically writing it when
// absent or when its checksum no longer matches.
CacheResult ensure_cache(const std::string& corpus_path, const EmbeddingProviderConfig& cfg,
                         std::span<const std::string> texts);

}  // namespace medos::embed
