// Copyright 2026 The MEDOS Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>

namespace medos {

// Hyperparameters of synthetic quadruplet construction.
struct SdcHyperparams {
  std::size_t k = 8;          // input reviews per quadruplet (8 Amazon, 10 Oposum+/Flipkart)
  double percentile = 85.0;   // nearest-rank cutoff on combined scores, in (0, 100]
  double lambda1 = 0.5;       // description weight
  double lambda2 = 0.5;       // question-answer weight
  std::size_t m_cap = 10;     // question-answer pairs kept per product

  // Throws ContractError when a field is out of range.
  void validate() const;
};

}  // namespace medos
