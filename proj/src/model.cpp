// Copyright 2026 The MEDOS Authors.
// SPDX-License-Identifier: Apache-2.0

#include "medos/model.hpp"

#include <array>
#include <cmath>
#include <exception>

#include "medos/error.hpp"
#include "medos/kernels.hpp"

namespace medos::model {

using nn::Tape;
using nn::Var;

std::string_view to_string(Arch a) { return a == Arch::medos ? "medos" : "concat"; }

Arch parse_arch(std::string_view s) {
  if (s == "medos") return Arch::medos;
  if (s == "concat") return Arch::concat;
  throw ContractError("unknown architecture '" + std::string(s) + "' (expected medos or concat)");
}

std::string_view to_string(SourceTag t) {
  switch (t) {
    case SourceTag::R: return "R";
    case SourceTag::D: return "D";
    case SourceTag::Q: return "Q";
    case SourceTag::fused: return "fused";
    case SourceTag::concat: return "concat";
  }
  return "?";
}

void ModelConfig::validate() const {
  if (vocab_size <= static_cast<std::size_t>(tok::kNumSpecial)) throw ContractError("model: vocab_size too small");
  if (d_model == 0 || num_heads == 0 || d_model % num_heads != 0) {
    throw ContractError("model: d_model must be a positive multiple of num_heads");
  }
  if (num_layers == 0) throw ContractError("model: num_layers must be >= 1");
  if (max_review_len < 1 || max_description_len < 1 || max_qa_len < 1 || max_target_len < 2) {
    throw ContractError("model: sequence lengths must be >= 1 (target >= 2)");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ContractError("model: dropout must be in [0, 1)");
}

// ---------------------------------------------------------------- layout

namespace {

struct LayoutBuilder {
  Layout& l;
  std::size_t add(std::string name, std::size_t r, std::size_t c) {
    l.names.push_back(std::move(name));
    l.shapes.emplace_back(r, c);
    return l.names.size() - 1;
  }
  NormIdx norm(const std::string& pre, std::size_t d) {
    return {add(pre + ".gamma", 1, d), add(pre + ".beta", 1, d)};
  }
  AttentionIdx attn(const std::string& pre, std::size_t d) {
    return {add(pre + ".wq", d, d), add(pre + ".wk", d, d), add(pre + ".wv", d, d), add(pre + ".wo", d, d)};
  }
  FfnIdx ffn(const std::string& pre, std::size_t d, std::size_t f) {
    return {add(pre + ".w1", d, f), add(pre + ".b1", 1, f), add(pre + ".w2", f, d), add(pre + ".b2", 1, d)};
  }
};

}  // namespace

Layout make_layout(const ModelConfig& cfg) {
  cfg.validate();
  Layout l;
  LayoutBuilder b{l};
  const std::size_t d = cfg.d_model;
  const std::size_t shared = cfg.tie_embeddings ? b.add("embedding", cfg.vocab_size, d) : 0;

  auto encoder = [&](const std::string& tag, std::size_t max_len) {
    EncoderIdx e{};
    const std::string pre = "enc." + tag;
    e.embedding = cfg.tie_embeddings ? shared : b.add(pre + ".embedding", cfg.vocab_size, d);
    e.position = b.add(pre + ".position", max_len, d);
    for (std::size_t i = 0; i < cfg.num_layers; ++i) {
      const std::string lp = pre + ".layer" + std::to_string(i);
      EncoderLayerIdx li{};
      li.ln1 = b.norm(lp + ".ln1", d);
      li.attn = b.attn(lp + ".attn", d);
      li.ln2 = b.norm(lp + ".ln2", d);
      li.ffn = b.ffn(lp + ".ffn", d, cfg.ffn());
      e.layers.push_back(li);
    }
    e.final_norm = b.norm(pre + ".final_norm", d);
    l.encoders.push_back(std::move(e));
  };
  if (cfg.arch == Arch::medos) {
    encoder("R", cfg.max_review_len);
    encoder("D", cfg.max_description_len);
    encoder("Q", cfg.max_qa_len);
  } else {
    encoder("C", cfg.max_concat_len());
  }

  DecoderIdx& dec = l.decoder;
  dec.embedding = cfg.tie_embeddings ? shared : b.add("dec.embedding", cfg.vocab_size, d);
  dec.position = b.add("dec.position", cfg.max_target_len, d);
  for (std::size_t i = 0; i < cfg.num_layers; ++i) {
    const std::string lp = "dec.layer" + std::to_string(i);
    DecoderLayerIdx li{};
    li.ln1 = b.norm(lp + ".ln1", d);
    li.self_attn = b.attn(lp + ".self_attn", d);
    li.ln2 = b.norm(lp + ".ln2", d);
    li.cross_attn = b.attn(lp + ".cross_attn", d);
    li.ln3 = b.norm(lp + ".ln3", d);
    li.ffn = b.ffn(lp + ".ffn", d, cfg.ffn());
    dec.layers.push_back(li);
  }
  dec.final_norm = b.norm("dec.final_norm", d);
  dec.out_weight = cfg.tie_embeddings ? shared : b.add("dec.out.weight", cfg.vocab_size, d);
  dec.out_bias = b.add("dec.out.bias", 1, cfg.vocab_size);

  if (cfg.arch == Arch::medos) {
    l.w_alpha = b.add("gate.w_alpha", 2 * d, d);
    l.w_beta = b.add("gate.w_beta", 2 * d, d);
  }
  return l;
}

std::size_t ModelParams::index(std::string_view name) const {
  for (std::size_t i = 0; i < layout.names.size(); ++i) {
    if (layout.names[i] == name) return i;
  }
  throw ContractError("model: unknown parameter '" + std::string(name) + "'");
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.size();
  return n;
}

bool ModelParams::all_finite() const {
  for (const auto& t : tensors)
    for (const double v : t.data)
      if (!std::isfinite(v)) return false;
  return true;
}

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  ModelParams p;
  p.config = cfg;
  p.layout = make_layout(cfg);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 0; i < p.layout.names.size(); ++i) {
    const auto [r, c] = p.layout.shapes[i];
    const std::string& name = p.layout.names[i];
    Matrix m(r, c);
    auto ends_with = [&](std::string_view suf) {
      return name.size() >= suf.size() && name.compare(name.size() - suf.size(), suf.size(), suf) == 0;
    };
    if (ends_with(".gamma")) {
      m.fill(1.0);
    } else if (ends_with(".beta") || ends_with(".b1") || ends_with(".b2") || ends_with(".bias") ||
               name.rfind("gate.", 0) == 0) {
      // zero
    } else {
      const bool table = ends_with("embedding") || ends_with(".position") || ends_with("out.weight");
      const double sd = table ? 0.1 : 1.0 / std::sqrt(static_cast<double>(r));
      for (double& v : m.data) v = sd * normal(rng);
    }
    p.tensors.push_back(std::move(m));
  }
  return p;
}

std::vector<Matrix> zeros_like(const ModelParams& p) {
  std::vector<Matrix> out;
  out.reserve(p.tensors.size());
  for (const auto& t : p.tensors) out.emplace_back(t.rows, t.cols);
  return out;
}

// ---------------------------------------------------------------- packing

namespace {

void clip(std::vector<int>& seq, std::size_t max_len) {
  if (seq.size() <= max_len) return;
  seq.resize(max_len - 1);
  seq.push_back(tok::kEos);
}

void append_words(const tok::Tokenizer& tk, const std::string& s, std::vector<int>& out) {
  const auto ids = tk.encode(s);
  out.insert(out.end(), ids.begin(), ids.end());
}

}  // namespace

std::vector<int> pack_items(const tok::Tokenizer& tk, std::span<const std::string> items, std::size_t max_len) {
  if (items.empty()) return {tok::kPad};
  std::vector<int> seq{tok::kBos};
  for (const auto& it : items) {
    append_words(tk, it, seq);
    seq.push_back(tok::kEos);
  }
  clip(seq, max_len);
  return seq;
}

std::vector<int> pack_concat(const tok::Tokenizer& tk, std::span<const std::string> reviews,
                             const std::optional<std::string>& description, std::span<const std::string> qa,
                             std::size_t max_len) {
  std::vector<int> seq{tok::kBos};
  for (const auto& r : reviews) {
    append_words(tk, r, seq);
    seq.push_back(tok::kEos);
  }
  seq.push_back(tok::kEos);
  if (description) append_words(tk, *description, seq);
  seq.push_back(tok::kEos);
  for (const auto& q : qa) {
    append_words(tk, q, seq);
    seq.push_back(tok::kEos);
  }
  clip(seq, max_len);
  return seq;
}

TokenizedSources tokenize_sources(const tok::Tokenizer& tk, const ModelConfig& cfg,
                                  std::span<const std::string> reviews, const std::optional<std::string>& description,
                                  std::span<const std::string> qa, const std::optional<std::string>& target,
                                  SourceSelection sel) {
  if (reviews.empty()) throw ContractError("tokenize: at least one review is required");
  const std::optional<std::string> d = sel.description ? description : std::nullopt;
  const std::span<const std::string> q = sel.qa ? qa : std::span<const std::string>{};
  TokenizedSources s;
  if (cfg.arch == Arch::medos) {
    s.reviews = pack_items(tk, reviews, cfg.max_review_len);
    s.description = d ? pack_items(tk, std::span<const std::string>(&*d, 1), cfg.max_description_len)
                      : std::vector<int>{tok::kPad};
    s.qa = pack_items(tk, q, cfg.max_qa_len);
  } else {
    s.concat = pack_concat(tk, reviews, d, q, cfg.max_concat_len());
  }
  if (target) {
    s.target.push_back(tok::kBos);
    append_words(tk, *target, s.target);
    s.target.push_back(tok::kEos);
    clip(s.target, cfg.max_target_len);
  }
  return s;
}

TokenizedSources tokenize_quadruplet(const tok::Tokenizer& tk, const ModelConfig& cfg,
                                     const sdc::SyntheticQuadruplet& q, SourceSelection sel) {
  return tokenize_sources(tk, cfg, q.input_reviews, q.description, q.qa, q.pseudo_summary, sel);
}

TokenizedSources tokenize_product(const tok::Tokenizer& tk, const ModelConfig& cfg, const corpus::Product& p,
                                  SourceSelection sel) {
  std::vector<std::string> reviews;
  for (const auto& r : p.reviews) reviews.push_back(r.text);
  std::vector<std::string> qa;
  for (const auto& x : p.qa_pairs) qa.push_back(x.concatenated);
  return tokenize_sources(tk, cfg, reviews, p.description, qa, std::nullopt, sel);
}

// ---------------------------------------------------------------- tape blocks

namespace {

void check_tokens(const ModelParams& p, std::span<const int> tokens, std::size_t max_len, const char* what) {
  if (tokens.empty()) throw ContractError(std::string(what) + ": empty token sequence");
  if (tokens.size() > max_len) {
    throw ContractError(std::string(what) + ": length " + std::to_string(tokens.size()) + " exceeds maximum " +
                        std::to_string(max_len));
  }
  for (const int id : tokens) {
    if (id < 0 || static_cast<std::size_t>(id) >= p.config.vocab_size) {
      throw ContractError(std::string(what) + ": token id " + std::to_string(id) + " outside vocabulary of size " +
                          std::to_string(p.config.vocab_size));
    }
  }
}

Var param(Tape& t, const ModelParams& p, std::size_t i) { return t.param(i, p.tensors[i]); }

Var dropout(Tape& t, Var x, const ModelParams& p, const ForwardOptions& opt) {
  const double rate = p.config.dropout;
  if (opt.dropout_rng == nullptr || rate <= 0.0) return x;
  const Matrix& v = t.value(x);
  Matrix keep(v.rows, v.cols);
  std::bernoulli_distribution b(1.0 - rate);
  for (double& k : keep.data) k = b(*opt.dropout_rng) ? 1.0 / (1.0 - rate) : 0.0;
  return t.mul_const(x, keep);
}

Var norm(Tape& t, const ModelParams& p, const NormIdx& n, Var x) {
  return t.layer_norm(x, param(t, p, n.gamma), param(t, p, n.beta));
}

Var attention(Tape& t, const ModelParams& p, const AttentionIdx& a, Var xq, Var xkv,
              const std::vector<bool>& key_mask, bool causal) {
  const std::size_t d = p.config.d_model;
  const std::size_t heads = p.config.num_heads;
  const std::size_t dh = d / heads;
  const Var q = t.matmul(xq, param(t, p, a.wq));
  const Var k = t.matmul(xkv, param(t, p, a.wk));
  const Var v = t.matmul(xkv, param(t, p, a.wv));
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> outs;
  for (std::size_t h = 0; h < heads; ++h) {
    const Var qh = heads == 1 ? q : t.slice_cols(q, h * dh, dh);
    const Var kh = heads == 1 ? k : t.slice_cols(k, h * dh, dh);
    const Var vh = heads == 1 ? v : t.slice_cols(v, h * dh, dh);
    const Var w = t.masked_softmax(t.scale(t.matmul_nt(qh, kh), sc), key_mask, causal);
    outs.push_back(t.matmul(w, vh));
  }
  const Var cat = heads == 1 ? outs[0] : t.concat_cols(outs);
  return t.matmul(cat, param(t, p, a.wo));
}

Var ffn(Tape& t, const ModelParams& p, const FfnIdx& f, Var x) {
  const Var h = t.gelu(t.add_row(t.matmul(x, param(t, p, f.w1)), param(t, p, f.b1)));
  return t.add_row(t.matmul(h, param(t, p, f.w2)), param(t, p, f.b2));
}

Var embed_tokens(Tape& t, const ModelParams& p, std::size_t emb, std::size_t pos, std::span<const int> tokens,
                 const ForwardOptions& opt) {
  const Var e = t.gather_rows(param(t, p, emb), tokens);
  const Var ps = t.slice_rows(param(t, p, pos), 0, tokens.size());
  return dropout(t, t.add(e, ps), p, opt);
}

std::vector<bool> token_mask(std::span<const int> tokens) {
  std::vector<bool> m(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) m[i] = tokens[i] != tok::kPad;
  return m;
}

std::size_t encoder_slot(const ModelParams& p, SourceTag tag) {
  if (p.config.arch == Arch::medos) {
    switch (tag) {
      case SourceTag::R: return 0;
      case SourceTag::D: return 1;
      case SourceTag::Q: return 2;
      default: break;
    }
  } else if (tag == SourceTag::concat) {
    return 0;
  }
  throw ContractError("encode_source: source tag " + std::string(to_string(tag)) + " not valid for " +
                      std::string(to_string(p.config.arch)) + " architecture");
}

std::size_t max_len_for(const ModelConfig& c, SourceTag tag) {
  switch (tag) {
    case SourceTag::R: return c.max_review_len;
    case SourceTag::D: return c.max_description_len;
    case SourceTag::Q: return c.max_qa_len;
    default: return c.max_concat_len();
  }
}

}  // namespace

TapeStates encode_on_tape(Tape& t, const ModelParams& p, const EncoderIdx& enc, std::span<const int> tokens,
                          const ForwardOptions& opt) {
  const std::vector<bool> mask = token_mask(tokens);
  Var x = embed_tokens(t, p, enc.embedding, enc.position, tokens, opt);
  for (const auto& l : enc.layers) {
    const Var h = norm(t, p, l.ln1, x);
    x = t.add(x, dropout(t, attention(t, p, l.attn, h, h, mask, false), p, opt));
    x = t.add(x, dropout(t, ffn(t, p, l.ffn, norm(t, p, l.ln2, x)), p, opt));
  }
  return {norm(t, p, enc.final_norm, x), mask};
}

TapeStates memory_on_tape(Tape& t, const ModelParams& p, const TokenizedSources& s, const ForwardOptions& opt) {
  const ModelConfig& c = p.config;
  const auto& encs = p.layout.encoders;
  if (c.arch == Arch::concat) {
    check_tokens(p, s.concat, c.max_concat_len(), "concat source");
    const TapeStates e = encode_on_tape(t, p, encs[0], s.concat, opt);
    return {t.align_rows(e.states, e.mask.size(), e.mask), e.mask};
  }
  check_tokens(p, s.reviews, c.max_review_len, "review source");
  const TapeStates er = encode_on_tape(t, p, encs[0], s.reviews, opt);
  const std::size_t L = s.reviews.size();
  const Var a_r = t.align_rows(er.states, L, er.mask);
  if (opt.review_only) return {a_r, er.mask};

  auto aligned = [&](const EncoderIdx& enc, const std::vector<int>& toks, std::size_t max_len, const char* what) {
    check_tokens(p, toks, max_len, what);
    const TapeStates e = encode_on_tape(t, p, enc, toks, opt);
    std::vector<bool> m(L, false);
    for (std::size_t i = 0; i < std::min(L, e.mask.size()); ++i) m[i] = e.mask[i];
    return t.align_rows(e.states, L, m);
  };
  const Var a_d = aligned(encs[1], s.description, c.max_description_len, "description source");
  const Var a_q = aligned(encs[2], s.qa, c.max_qa_len, "qa source");
  const Var w_a = param(t, p, p.layout.w_alpha);
  const Var w_b = param(t, p, p.layout.w_beta);
  const std::array<Var, 2> rd{a_r, a_d};
  const std::array<Var, 2> rq{a_r, a_q};
  const Var alpha = t.relu_tanh(t.matmul(t.concat_cols(rd), w_a));
  const Var beta = t.relu_tanh(t.matmul(t.concat_cols(rq), w_b));
  const Var fused = t.add(t.add(a_r, t.mul(alpha, a_d)), t.mul(beta, a_q));
  return {fused, er.mask};
}

Var decode_on_tape(Tape& t, const ModelParams& p, const TapeStates& memory, std::span<const int> prefix,
                   const ForwardOptions& opt) {
  if (prefix.empty() || prefix[0] != tok::kBos) throw ContractError("decode: prefix must start with <s>");
  check_tokens(p, prefix, p.config.max_target_len, "decode prefix");
  const DecoderIdx& dec = p.layout.decoder;
  const std::vector<bool> self_mask(prefix.size(), true);
  Var x = embed_tokens(t, p, dec.embedding, dec.position, prefix, opt);
  for (const auto& l : dec.layers) {
    const Var h1 = norm(t, p, l.ln1, x);
    x = t.add(x, dropout(t, attention(t, p, l.self_attn, h1, h1, self_mask, true), p, opt));
    const Var h2 = norm(t, p, l.ln2, x);
    x = t.add(x, dropout(t, attention(t, p, l.cross_attn, h2, memory.states, memory.mask, false), p, opt));
    x = t.add(x, dropout(t, ffn(t, p, l.ffn, norm(t, p, l.ln3, x)), p, opt));
  }
  const Var h = norm(t, p, dec.final_norm, x);
  const Var logits = t.add_row(t.matmul_nt(h, param(t, p, dec.out_weight)), param(t, p, dec.out_bias));
  return t.log_softmax(logits);
}

Var example_nll(Tape& t, const ModelParams& p, const TokenizedSources& s, const ForwardOptions& opt) {
  if (s.target.size() < 2) throw ContractError("loss: target needs <s> and at least one more token");
  const TapeStates mem = memory_on_tape(t, p, s, opt);
  const std::span<const int> input(s.target.data(), s.target.size() - 1);
  const std::span<const int> labels(s.target.data() + 1, s.target.size() - 1);
  const Var lp = decode_on_tape(t, p, mem, input, opt);
  return t.pick_sum(lp, labels, -1.0);
}

// ---------------------------------------------------------------- value API

EncoderStates encode_source(const ModelParams& p, std::span<const int> tokens, SourceTag tag) {
  const std::size_t slot = encoder_slot(p, tag);
  check_tokens(p, tokens, max_len_for(p.config, tag), "encode_source");
  Tape t(false);
  const TapeStates e = encode_on_tape(t, p, p.layout.encoders[slot], tokens);
  return {t.value(e.states), e.mask, tag};
}

EncoderStates align_states(const EncoderStates& x, std::size_t target_len) {
  if (target_len == 0) throw ContractError("align_states: target length must be >= 1");
  if (x.mask.size() != x.states.rows) throw ContractError("align_states: mask length differs from state rows");
  EncoderStates out;
  out.tag = x.tag;
  out.states = Matrix(target_len, x.states.cols);
  out.mask.assign(target_len, false);
  for (std::size_t r = 0; r < std::min(target_len, x.states.rows); ++r) {
    out.mask[r] = x.mask[r];
    if (x.mask[r]) std::copy_n(x.states.row(r).begin(), x.states.cols, out.states.row(r).begin());
  }
  return out;
}

Matrix compute_gate(const EncoderStates& a_r, const EncoderStates& a_x, const Matrix& w) {
  const std::size_t d = a_r.states.cols;
  if (!a_r.states.same_shape(a_x.states)) throw ContractError("compute_gate: source states are not aligned");
  if (w.rows != 2 * d || w.cols != d) throw ContractError("compute_gate: gate weight must be 2d x d");
  Tape t(false);
  const std::array<Var, 2> parts{t.constant(a_r.states), t.constant(a_x.states)};
  return t.value(t.relu_tanh(t.matmul(t.concat_cols(parts), t.constant(w))));
}

EncoderStates fuse(const EncoderStates& a_r, const EncoderStates& a_d, const EncoderStates& a_q, const Matrix& alpha,
                   const Matrix& beta) {
  const Matrix& r = a_r.states;
  for (const Matrix* m : {&a_d.states, &a_q.states, &alpha, &beta}) {
    if (!m->same_shape(r)) throw ContractError("fuse: shape mismatch");
  }
  EncoderStates out{r, a_r.mask, SourceTag::fused};
  for (std::size_t i = 0; i < r.size(); ++i) {
    out.states.data[i] = r.data[i] + alpha.data[i] * a_d.states.data[i] + beta.data[i] * a_q.states.data[i];
  }
  return out;
}

EncoderStates fused_states(const ModelParams& p, const TokenizedSources& s, const ForwardOptions& opt) {
  Tape t(false);
  const TapeStates m = memory_on_tape(t, p, s, opt);
  return {t.value(m.states), m.mask, p.config.arch == Arch::medos ? SourceTag::fused : SourceTag::concat};
}

Matrix decode_logprobs(const ModelParams& p, const EncoderStates& fused, std::span<const int> prefix) {
  if (fused.states.cols != p.config.d_model || fused.mask.size() != fused.states.rows) {
    throw ContractError("decode_logprobs: memory shape does not match the model");
  }
  Tape t(false);
  const TapeStates mem{t.constant(fused.states), fused.mask};
  return t.value(decode_on_tape(t, p, mem, prefix));
}

// ---------------------------------------------------------------- losses

namespace {

std::size_t target_tokens(std::span<const TokenizedSources> batch) {
  std::size_t n = 0;
  for (const auto& s : batch) n += s.target.empty() ? 0 : s.target.size() - 1;
  return n;
}

// Runs fn(i) for every example, in parallel when possible, rethrowing the
// first exception (lowest index) on the calling thread.
template <typename F>
void for_each_example(std::size_t n, F&& fn) {
  std::vector<std::exception_ptr> errs(n);
#pragma omp parallel for schedule(dynamic, 1) if (n > 1 && !kernels::in_parallel())
  for (std::size_t i = 0; i < n; ++i) {
    try {
      fn(i);
    } catch (...) {
      errs[i] = std::current_exception();
    }
  }
  for (auto& e : errs)
    if (e) std::rethrow_exception(e);
}

void check_finite(double loss, std::size_t batch_id) {
  if (!std::isfinite(loss)) {
    throw NumericError("non-finite loss (" + std::to_string(loss) + ") in batch " + std::to_string(batch_id));
  }
}

}  // namespace

LossResult forward_loss(const ModelParams& p, std::span<const TokenizedSources> batch, const ForwardOptions& opt,
                        std::size_t batch_id) {
  if (batch.empty()) throw ContractError("forward_loss: empty batch");
  std::vector<double> nll(batch.size());
  for_each_example(batch.size(), [&](std::size_t i) {
    Tape t(false);
    nll[i] = t.value(example_nll(t, p, batch[i], opt)).data[0];
  });
  LossResult r;
  r.tokens = target_tokens(batch);
  double sum = 0.0;
  for (const double v : nll) sum += v;
  r.loss = sum / static_cast<double>(r.tokens);
  check_finite(r.loss, batch_id);
  return r;
}

LossResult forward_loss(const ModelParams& p, std::span<const sdc::SyntheticQuadruplet> batch,
                        const tok::Tokenizer& tk, const ForwardOptions& opt, std::size_t batch_id) {
  std::vector<TokenizedSources> srcs;
  srcs.reserve(batch.size());
  for (const auto& q : batch) srcs.push_back(tokenize_quadruplet(tk, p.config, q));
  return forward_loss(p, srcs, opt, batch_id);
}

LossResult loss_and_grad(const ModelParams& p, std::span<const TokenizedSources> batch, std::vector<Matrix>& grads,
                         const ForwardOptions& opt, std::size_t batch_id, std::optional<std::uint64_t> dropout_seed) {
  if (batch.empty()) throw ContractError("loss_and_grad: empty batch");
  const std::size_t n = batch.size();
  std::vector<double> nll(n);
  std::vector<std::vector<Matrix>> per(n);
  for_each_example(n, [&](std::size_t i) {
    ForwardOptions o = opt;
    std::mt19937_64 rng(dropout_seed.value_or(0) + i);
    o.dropout_rng = dropout_seed ? &rng : nullptr;
    Tape t(true);
    const Var loss = example_nll(t, p, batch[i], o);
    nll[i] = t.value(loss).data[0];
    t.backward(loss);
    per[i].resize(p.tensors.size());
    t.accumulate_param_grads(per[i]);
  });
  LossResult r;
  r.tokens = target_tokens(batch);
  double sum = 0.0;
  for (const double v : nll) sum += v;
  r.loss = sum / static_cast<double>(r.tokens);
  check_finite(r.loss, batch_id);

  grads = zeros_like(p);
  const double inv = 1.0 / static_cast<double>(r.tokens);
  for (std::size_t k = 0; k < grads.size(); ++k) {
    auto& dst = grads[k].data;
    for (std::size_t i = 0; i < n; ++i) {
      const Matrix& src = per[i][k];
      if (src.size() == 0) continue;
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src.data[j];
    }
    for (double& v : dst) v *= inv;
  }
  return r;
}

double concat_baseline_forward(const ModelParams& single, const sdc::SyntheticQuadruplet& q,
                               const tok::Tokenizer& tk) {
  if (single.config.arch != Arch::concat) throw ContractError("concat_baseline_forward: model is not a concat model");
  const TokenizedSources s = tokenize_quadruplet(tk, single.config, q);
  return forward_loss(single, std::span<const TokenizedSources>(&s, 1)).loss;
}

}  // namespace medos::model
