// Copyright 2026 The MEDOS Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "medos/model.hpp"
#include "medos/sdc.hpp"
#include "medos/tokenizer.hpp"
#include "medos/train.hpp"
#include "test_util.hpp"

namespace medos::testing {

inline std::vector<std::string> quadruplet_texts(const std::vector<sdc::SyntheticQuadruplet>& qs) {
  std::vector<std::string> out;
  for (const auto& q : qs) {
    out.insert(out.end(), q.input_reviews.begin(), q.input_reviews.end());
    if (q.description) out.push_back(*q.description);
    out.insert(out.end(), q.qa.begin(), q.qa.end());
    out.push_back(q.pseudo_summary);
  }
  return out;
}

struct OverfitSetup {
  std::vector<sdc::SyntheticQuadruplet> data;
  tok::Tokenizer tokenizer;
  model::ModelConfig config;
  train::TrainConfig train;
};

// d_model 32, two layers, fixed 500-step budget on the ten-quadruplet fixture.
inline OverfitSetup overfit_setup() {
  OverfitSetup s;
  s.data = sdc::read_quadruplets(data_path("overfit_quads.jsonl"));
  const auto texts = quadruplet_texts(s.data);
  s.tokenizer = tok::Tokenizer::build(texts);
  s.config.vocab_size = s.tokenizer.size();
  s.config.d_model = 32;
  s.config.num_layers = 2;
  s.config.num_heads = 4;
  s.config.max_review_len = 64;
  s.config.max_description_len = 16;
  s.config.max_qa_len = 32;
  s.config.max_target_len = 24;
  s.train = train::TrainConfig::desk();
  s.train.dev_fraction = 0.0;
  s.train.max_steps = 500;
  s.train.seed = 7;
  return s;
}

}  // namespace medos::testing
