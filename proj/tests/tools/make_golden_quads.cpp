// Copyright 2026 The MEDOS Authors.
// SPDX-License-Identifier: Apache-2.0

// Writes the expected quadruplets for a raw corpus using the brute-force
// oracle over fallback embeddings with default construction settings.
// Usage: make_golden_quads <raw corpus> <out>

#include <algorithm>
#include <iostream>

#include "medos/corpus.hpp"
#include "medos/embed.hpp"
#include "medos/sdc.hpp"
#include "sdc_oracle.hpp"

using namespace medos;

int main(int argc, char** argv) {
  if (argc != 3) {
    std::cerr << "usage: make_golden_quads <raw corpus> <out>\n";
    return 2;
  }
  const SdcHyperparams hp;
  const embed::EmbeddingProviderConfig ecfg;
  auto emb = [&](const std::string& t) { return embed::hashed_ngram_embedding(t, ecfg.dimension, ecfg.hash_seed); };

  auto products = corpus::load_corpus(argv[1], corpus::Split::train).corpus.products;
  std::sort(products.begin(), products.end(),
            [](const auto& a, const auto& b) { return a.product_id < b.product_id; });
  std::vector<sdc::SyntheticQuadruplet> out;
  for (const auto& raw : products) {
    const auto p = corpus::truncate_qa(raw, hp.m_cap);
    testing::oracle::Product op;
    for (const auto& r : p.reviews) op.reviews.push_back(emb(r.text));
    if (p.description) op.description = emb(*p.description);
    for (const auto& q : p.qa_pairs) op.qa.push_back(emb(q.concatenated));
    const auto quads = testing::oracle::build(op, hp.k, hp.percentile, hp.lambda1, hp.lambda2);
    if (!quads) continue;
    for (const auto& q : *quads) {
      sdc::SyntheticQuadruplet s;
      s.product_id = p.product_id;
      s.pseudo_summary_index = q.pseudo_summary;
      s.pseudo_summary_id = p.reviews[q.pseudo_summary].review_id;
      s.pseudo_summary = p.reviews[q.pseudo_summary].text;
      s.ss_score = q.ss;
      s.input_indices = q.inputs;
      for (const auto i : q.inputs) {
        s.input_review_ids.push_back(p.reviews[i].review_id);
        s.input_reviews.push_back(p.reviews[i].text);
        s.input_review_sims.push_back(testing::oracle::cosine(op.reviews[q.pseudo_summary], op.reviews[i]));
      }
      s.description = p.description;
      for (const auto& qa : p.qa_pairs) s.qa.push_back(qa.concatenated);
      out.push_back(std::move(s));
    }
  }
  sdc::write_quadruplets(out, argv[2]);
  std::cout << out.size() << " quadruplets\n";
  return 0;
}
