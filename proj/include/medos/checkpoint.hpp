// Copyright 2026 The MEDOS Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>

#include "medos/model.hpp"
#include "medos/tokenizer.hpp"
#include <json.hpp>

// Binary container: "MEDOSCKP", u32 version, u64 header length, JSON header
// (config, vocabulary, tensor names and shapes, free metadata), then every
// tensor's doubles in header order, little-endian.
namespace medos::ckpt {

inline constexpr std::uint32_t kVersion = 1;

struct Checkpoint {
  model::ModelParams params;
  tok::Tokenizer tokenizer;
  nlohmann::ordered_json meta = nlohmann::ordered_json::object();
};

nlohmann::ordered_json config_to_json(const model::ModelConfig& c);
model::ModelConfig config_from_json(const nlohmann::json& j);

std::string serialize(const model::ModelParams& p, const tok::Tokenizer& tk,
                      const nlohmann::ordered_json& meta = nlohmann::ordered_json::object());
Checkpoint deserialize(std::string_view bytes);

// Atomic write (temp file then rename).
void save(const std::string& path, const model::ModelParams& p, const tok::Tokenizer& tk,
          const nlohmann::ordered_json& meta = nlohmann::ordered_json::object());
Checkpoint load(const std::string& path);

}  // namespace medos::ckpt
