// Copyright 2026 The MEDOS Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "medos/autograd.hpp"
#include "medos/matrix.hpp"
#include "medos/sdc.hpp"
#include "medos/tokenizer.hpp"

namespace medos::model {

enum class Arch { medos, concat };
std::string_view to_string(Arch a);
Arch parse_arch(std::string_view s);

struct ModelConfig {
  Arch arch = Arch::medos;
  std::size_t vocab_size = 0;
  std::size_t d_model = 32;
  std::size_t num_layers = 2;
  std::size_t num_heads = 4;
  std::size_t ffn_dim = 0;  // 0 means 4 * d_model
  std::size_t max_review_len = 256;
  std::size_t max_description_len = 64;
  std::size_t max_qa_len = 128;
  std::size_t max_target_len = 128;
  double dropout = 0.0;
  bool tie_embeddings = true;

  std::size_t ffn() const noexcept { return ffn_dim == 0 ? 4 * d_model : ffn_dim; }
  // Single-encoder input length for the concat architecture.
  std::size_t max_concat_len() const noexcept { return max_review_len + max_description_len + max_qa_len; }
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

enum class SourceTag { R, D, Q, fused, concat };
std::string_view to_string(SourceTag t);

struct EncoderStates {
  Matrix states;
  std::vector<bool> mask;
  SourceTag tag = SourceTag::R;
};

struct AttentionIdx {
  std::size_t wq, wk, wv, wo;
};
struct FfnIdx {
  std::size_t w1, b1, w2, b2;
};
struct NormIdx {
  std::size_t gamma, beta;
};
struct EncoderLayerIdx {
  NormIdx ln1;
  AttentionIdx attn;
  NormIdx ln2;
  FfnIdx ffn;
};
struct DecoderLayerIdx {
  NormIdx ln1;
  AttentionIdx self_attn;
  NormIdx ln2;
  AttentionIdx cross_attn;
  NormIdx ln3;
  FfnIdx ffn;
};
struct EncoderIdx {
  std::size_t embedding;
  std::size_t position;
  std::vector<EncoderLayerIdx> layers;
  NormIdx final_norm;
};
struct DecoderIdx {
  std::size_t embedding;
  std::size_t position;
  std::vector<DecoderLayerIdx> layers;
  NormIdx final_norm;
  std::size_t out_weight;  // V x d; equals `embedding` when tied
  std::size_t out_bias;
};

// Parameter slots; a pure function of the config.
struct Layout {
  std::vector<std::string> names;
  std::vector<std::pair<std::size_t, std::size_t>> shapes;
  // medos: R, D, Q. concat: one encoder.
  std::vector<EncoderIdx> encoders;
  DecoderIdx decoder{};
  std::size_t w_alpha = 0, w_beta = 0;  // medos only
};
Layout make_layout(const ModelConfig& cfg);

struct ModelParams {
  ModelConfig config;
  Layout layout;
  std::vector<Matrix> tensors;

  std::size_t index(std::string_view name) const;  // throws on unknown name
  Matrix& operator[](std::string_view name) { return tensors[index(name)]; }
  const Matrix& operator[](std::string_view name) const { return tensors[index(name)]; }
  std::size_t parameter_count() const;
  bool all_finite() const;
};

// Gate projections start at zero; everything else is drawn from the seed.
ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed);
// Zero-filled tensors with the same shapes.
std::vector<Matrix> zeros_like(const ModelParams& p);

struct TokenizedSources {
  std::vector<int> reviews;
  std::vector<int> description;
  std::vector<int> qa;
  std::vector<int> concat;
  std::vector<int> target;  // empty at inference
};

// Which optional sources reach the model; a disabled source is replaced by
// the pad sequence.
struct SourceSelection {
  bool description = true;
  bool qa = true;
  friend bool operator==(const SourceSelection&, const SourceSelection&) = default;
};

// `<s> t1 </s> t2 </s> ...` clipped to max_len with a closing `</s>`; empty
// items give the one-token pad sequence.
std::vector<int> pack_items(const tok::Tokenizer& tk, std::span<const std::string> items, std::size_t max_len);
std::vector<int> pack_concat(const tok::Tokenizer& tk, std::span<const std::string> reviews,
                             const std::optional<std::string>& description, std::span<const std::string> qa,
                             std::size_t max_len);

TokenizedSources tokenize_sources(const tok::Tokenizer& tk, const ModelConfig& cfg,
                                  std::span<const std::string> reviews, const std::optional<std::string>& description,
                                  std::span<const std::string> qa, const std::optional<std::string>& target,
                                  SourceSelection sel = {});
TokenizedSources tokenize_quadruplet(const tok::Tokenizer& tk, const ModelConfig& cfg,
                                     const sdc::SyntheticQuadruplet& q, SourceSelection sel = {});
TokenizedSources tokenize_product(const tok::Tokenizer& tk, const ModelConfig& cfg, const corpus::Product& p,
                                  SourceSelection sel = {});

struct ForwardOptions {
  // Decode from a_R alone, bypassing the description and QA encoders.
  bool review_only = false;
  // Dropout is applied only when this is set and config.dropout > 0.
  std::mt19937_64* dropout_rng = nullptr;
};

// Tape-level building blocks.
struct TapeStates {
  nn::Var states;
  std::vector<bool> mask;
};
TapeStates encode_on_tape(nn::Tape& t, const ModelParams& p, const EncoderIdx& enc, std::span<const int> tokens,
                          const ForwardOptions& opt = {});
// Fused memory the decoder cross-attends to, for either architecture.
TapeStates memory_on_tape(nn::Tape& t, const ModelParams& p, const TokenizedSources& s, const ForwardOptions& opt = {});
// (len(prefix) x V) log-probabilities.
nn::Var decode_on_tape(nn::Tape& t, const ModelParams& p, const TapeStates& memory, std::span<const int> prefix,
                       const ForwardOptions& opt = {});
// Summed negative log-likelihood of s.target (teacher forced).
nn::Var example_nll(nn::Tape& t, const ModelParams& p, const TokenizedSources& s, const ForwardOptions& opt = {});

EncoderStates encode_source(const ModelParams& p, std::span<const int> tokens, SourceTag tag);
EncoderStates align_states(const EncoderStates& x, std::size_t target_len);
Matrix compute_gate(const EncoderStates& a_r, const EncoderStates& a_x, const Matrix& w);
EncoderStates fuse(const EncoderStates& a_r, const EncoderStates& a_d, const EncoderStates& a_q, const Matrix& alpha,
                   const Matrix& beta);
EncoderStates fused_states(const ModelParams& p, const TokenizedSources& s, const ForwardOptions& opt = {});
Matrix decode_logprobs(const ModelParams& p, const EncoderStates& fused, std::span<const int> prefix);

struct LossResult {
  double loss = 0.0;  // mean NLL per target token
  std::size_t tokens = 0;
};

LossResult forward_loss(const ModelParams& p, std::span<const TokenizedSources> batch, const ForwardOptions& opt = {},
                        std::size_t batch_id = 0);
LossResult forward_loss(const ModelParams& p, std::span<const sdc::SyntheticQuadruplet> batch,
                        const tok::Tokenizer& tk, const ForwardOptions& opt = {}, std::size_t batch_id = 0);
// Same as forward_loss, also writing d(loss)/d(param) into grads (resized
// to match). Examples run in parallel; the reduction order is fixed.
// Per-example dropout generators are seeded from dropout_seed + index.
LossResult loss_and_grad(const ModelParams& p, std::span<const TokenizedSources> batch, std::vector<Matrix>& grads,
                         const ForwardOptions& opt = {}, std::size_t batch_id = 0,
                         std::optional<std::uint64_t> dropout_seed = std::nullopt);

// Loss of a concat-architecture model on one quadruplet.
double concat_baseline_forward(const ModelParams& single, const sdc::SyntheticQuadruplet& q,
                               const tok::Tokenizer& tk);

}  // namespace medos::model
