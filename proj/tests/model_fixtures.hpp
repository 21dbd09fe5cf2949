// Copyright 2026 The MEDOS Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "medos/model.hpp"

namespace medos::testing {

inline model::ModelConfig tiny_config(std::size_t vocab, std::size_t d = 8, std::size_t layers = 1,
                                      std::size_t heads = 2, model::Arch arch = model::Arch::medos) {
  model::ModelConfig c;
  c.arch = arch;
  c.vocab_size = vocab;
  c.d_model = d;
  c.num_layers = layers;
  c.num_heads = heads;
  c.ffn_dim = 2 * d;
  c.max_review_len = 24;
  c.max_description_len = 8;
  c.max_qa_len = 16;
  c.max_target_len = 10;
  return c;
}

// `<s> w.. </s>` with 1..max_words random non-special words.
inline std::vector<int> random_sequence(std::mt19937_64& rng, std::size_t vocab, std::size_t max_len) {
  std::uniform_int_distribution<int> word(4, static_cast<int>(vocab) - 1);
  std::uniform_int_distribution<std::size_t> len(1, max_len - 2);
  std::vector<int> s{1};
  const std::size_t n = len(rng);
  for (std::size_t i = 0; i < n; ++i) s.push_back(word(rng));
  s.push_back(2);
  return s;
}

inline model::TokenizedSources random_sources(std::mt19937_64& rng, const model::ModelConfig& c, bool with_d,
                                              bool with_q) {
  model::TokenizedSources s;
  if (c.arch == model::Arch::medos) {
    s.reviews = random_sequence(rng, c.vocab_size, c.max_review_len);
    s.description = with_d ? random_sequence(rng, c.vocab_size, c.max_description_len) : std::vector<int>{0};
    s.qa = with_q ? random_sequence(rng, c.vocab_size, c.max_qa_len) : std::vector<int>{0};
  } else {
    s.concat = random_sequence(rng, c.vocab_size, c.max_concat_len());
  }
  s.target = random_sequence(rng, c.vocab_size, c.max_target_len);
  return s;
}

inline void randomize_gates(model::ModelParams& p, std::mt19937_64& rng, double sd) {
  std::normal_distribution<double> n(0.0, sd);
  for (const std::size_t i : {p.layout.w_alpha, p.layout.w_beta})
    for (double& v : p.tensors[i].data) v = n(rng);
}

// Parameter group used for reporting gradient checks.
inline std::string param_group(const std::string& name) {
  if (name.find("embedding") != std::string::npos) return "embeddings";
  if (name == "gate.w_alpha") return "w_alpha";
  if (name == "gate.w_beta") return "w_beta";
  if (name.rfind("enc.", 0) == 0) return "encoder";
  return "decoder";
}

struct GradCheck {
  std::size_t checked = 0;
  double max_rel = 0.0;
  std::string worst;
  std::vector<std::string> groups_seen;
};

inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-7});
}

// Central differences on `per_group` random coordinates of every group.
inline GradCheck gradient_check(const model::ModelParams& p, const std::vector<model::TokenizedSources>& batch,
                                std::mt19937_64& rng, std::size_t per_group, double h = 1e-5) {
  std::vector<Matrix> grads;
  model::loss_and_grad(p, batch, grads);
  std::vector<std::string> group_names;
  std::vector<std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < p.tensors.size(); ++i) {
    const std::string g = param_group(p.layout.names[i]);
    auto it = std::find(group_names.begin(), group_names.end(), g);
    if (it == group_names.end()) {
      group_names.push_back(g);
      members.emplace_back();
      it = group_names.end() - 1;
    }
    members[static_cast<std::size_t>(it - group_names.begin())].push_back(i);
  }
  GradCheck out;
  out.groups_seen = group_names;
  model::ModelParams q = p;
  for (std::size_t gi = 0; gi < group_names.size(); ++gi) {
    std::size_t total = 0;
    for (const std::size_t t : members[gi]) total += p.tensors[t].size();
    std::uniform_int_distribution<std::size_t> pick(0, total - 1);
    for (std::size_t s = 0; s < per_group; ++s) {
      std::size_t flat = pick(rng);
      std::size_t t = 0;
      for (const std::size_t m : members[gi]) {
        if (flat < p.tensors[m].size()) {
          t = m;
          break;
        }
        flat -= p.tensors[m].size();
      }
      double& x = q.tensors[t].data[flat];
      const double x0 = x;
      x = x0 + h;
      const double lp = model::forward_loss(q, batch).loss;
      x = x0 - h;
      const double lm = model::forward_loss(q, batch).loss;
      x = x0;
      const double numeric = (lp - lm) / (2 * h);
      const double rel = relative_error(grads[t].data[flat], numeric);
      ++out.checked;
      if (rel > out.max_rel) {
        out.max_rel = rel;
        out.worst = p.layout.names[t] + "[" + std::to_string(flat) + "] analytic=" +
                    std::to_string(grads[t].data[flat]) + " numeric=" + std::to_string(numeric);
      }
    }
  }
  return out;
}

}  // namespace medos::testing
