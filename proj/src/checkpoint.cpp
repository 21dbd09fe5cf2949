// Copyright 2026 The MEDOS Authors.
// SPDX-License-Identifier: Apache-2.0

#include "medos/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "medos/error.hpp"
#include "medos/text.hpp"

namespace medos::ckpt {

namespace {

constexpr char kMagic[8] = {'M', 'E', 'D', 'O', 'S', 'C', 'K', 'P'};
static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T take(std::string_view bytes, std::size_t& pos) {
  if (pos + sizeof(T) > bytes.size()) throw DataError("checkpoint: truncated file");
  T v;
  std::memcpy(&v, bytes.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace

nlohmann::ordered_json config_to_json(const model::ModelConfig& c) {
  return {{"arch", model::to_string(c.arch)},
          {"vocab_size", c.vocab_size},
          {"d_model", c.d_model},
          {"num_layers", c.num_layers},
          {"num_heads", c.num_heads},
          {"ffn_dim", c.ffn_dim},
          {"max_review_len", c.max_review_len},
          {"max_description_len", c.max_description_len},
          {"max_qa_len", c.max_qa_len},
          {"max_target_len", c.max_target_len},
          {"dropout", c.dropout},
          {"tie_embeddings", c.tie_embeddings}};
}

model::ModelConfig config_from_json(const nlohmann::json& j) {
  model::ModelConfig c;
  if (j.contains("arch")) c.arch = model::parse_arch(j.at("arch").get<std::string>());
  auto get = [&](const char* k, auto& dst) {
    if (j.contains(k)) dst = j.at(k).get<std::decay_t<decltype(dst)>>();
  };
  get("vocab_size", c.vocab_size);
  get("d_model", c.d_model);
  get("num_layers", c.num_layers);
  get("num_heads", c.num_heads);
  get("ffn_dim", c.ffn_dim);
  get("max_review_len", c.max_review_len);
  get("max_description_len", c.max_description_len);
  get("max_qa_len", c.max_qa_len);
  get("max_target_len", c.max_target_len);
  get("dropout", c.dropout);
  get("tie_embeddings", c.tie_embeddings);
  return c;
}

std::string serialize(const model::ModelParams& p, const tok::Tokenizer& tk, const nlohmann::ordered_json& meta) {
  if (tk.size() != p.config.vocab_size) throw ContractError("checkpoint: tokenizer size differs from model vocab_size");
  nlohmann::ordered_json h;
  h["config"] = config_to_json(p.config);
  h["vocab"] = tk.vocab();
  auto& ts = h["tensors"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < p.tensors.size(); ++i) {
    ts.push_back({{"name", p.layout.names[i]}, {"rows", p.tensors[i].rows}, {"cols", p.tensors[i].cols}});
  }
  h["meta"] = meta;
  const std::string header = h.dump();
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kVersion);
  put<std::uint64_t>(out, header.size());
  out += header;
  for (const auto& t : p.tensors) {
    out.append(reinterpret_cast<const char*>(t.data.data()), t.data.size() * sizeof(double));
  }
  return out;
}

Checkpoint deserialize(std::string_view bytes) {
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw DataError("checkpoint: bad magic");
  }
  std::size_t pos = sizeof(kMagic);
  const auto version = take<std::uint32_t>(bytes, pos);
  if (version != kVersion) throw DataError("checkpoint: unsupported version " + std::to_string(version));
  const auto hlen = take<std::uint64_t>(bytes, pos);
  if (pos + hlen > bytes.size()) throw DataError("checkpoint: truncated header");
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(bytes.substr(pos, hlen));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: bad header: ") + e.what());
  }
  pos += hlen;

  Checkpoint c;
  c.tokenizer = tok::Tokenizer(h.at("vocab").get<std::vector<std::string>>());
  c.params.config = config_from_json(h.at("config"));
  c.params.layout = model::make_layout(c.params.config);
  c.meta = h.value("meta", nlohmann::ordered_json::object());
  const auto& ts = h.at("tensors");
  const auto& layout = c.params.layout;
  if (ts.size() != layout.names.size()) throw DataError("checkpoint: tensor count does not match config");
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const auto rows = ts[i].at("rows").get<std::size_t>();
    const auto cols = ts[i].at("cols").get<std::size_t>();
    if (ts[i].at("name").get<std::string>() != layout.names[i] || rows != layout.shapes[i].first ||
        cols != layout.shapes[i].second) {
      throw DataError("checkpoint: tensor " + std::to_string(i) + " does not match the config layout");
    }
    Matrix m(rows, cols);
    const std::size_t nbytes = m.size() * sizeof(double);
    if (pos + nbytes > bytes.size()) throw DataError("checkpoint: truncated tensor data");
    std::memcpy(m.data.data(), bytes.data() + pos, nbytes);
    pos += nbytes;
    c.params.tensors.push_back(std::move(m));
  }
  if (pos != bytes.size()) throw DataError("checkpoint: trailing bytes");
  if (c.tokenizer.size() != c.params.config.vocab_size) throw DataError("checkpoint: vocabulary size mismatch");
  return c;
}

void save(const std::string& path, const model::ModelParams& p, const tok::Tokenizer& tk,
          const nlohmann::ordered_json& meta) {
  text::write_file_atomic(path, serialize(p, tk, meta));
}

Checkpoint load(const std::string& path) { return deserialize(text::read_file(path)); }

}  // namespace medos::ckpt
