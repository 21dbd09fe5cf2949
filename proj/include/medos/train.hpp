// Copyright 2026 The MEDOS Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "medos/model.hpp"
#include "medos/sdc.hpp"
#include "medos/tokenizer.hpp"

namespace medos::train {

struct TrainConfig {
  double learning_rate = 2e-6;
  std::size_t batch_size = 8;
  std::size_t epochs = 5;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-4;
  double weight_decay = 0.0;  // decoupled, scaled by the scheduled rate
  std::uint64_t seed = 0;
  std::optional<double> grad_clip;  // global L2 norm
  std::size_t eval_every = 0;       // steps between dev evaluations; 0 = once per epoch
  std::size_t max_steps = 0;        // 0 = no cap
  double dev_fraction = 0.02;       // of products, held out whole

  // Small-model settings for training from scratch on a laptop.
  static TrainConfig desk();
  void validate() const;
};

// base_lr * (1 - step / total_steps).
double lr_schedule(std::size_t step, std::size_t total_steps, double base_lr);

struct DevEval {
  std::size_t step = 0;
  double loss = 0.0;
};

struct TrainReport {
  std::vector<std::pair<std::size_t, double>> loss_curve;  // (step, batch loss before the update)
  std::vector<DevEval> dev;
  double wall_seconds = 0.0;
  std::string final_checkpoint;
  std::string best_checkpoint;
  std::uint64_t seed = 0;
  std::size_t total_steps = 0;
  std::vector<std::string> dev_products;
};

struct TrainResult {
  model::ModelParams params;
  TrainReport report;
};

// Product ids held out for dev: floor(fraction * #products), drawn with the seed.
std::vector<std::string> dev_product_ids(std::span<const sdc::SyntheticQuadruplet> data, double fraction,
                                         std::uint64_t seed);

// Checkpoints go to <out_dir>/run-<seed>/step-<n>/model.ckpt and the
// per-step log to <out_dir>/run-<seed>/train_log.jsonl when out_dir is set.
TrainResult train(model::ModelParams init, const tok::Tokenizer& tk, std::span<const sdc::SyntheticQuadruplet> data,
                  const TrainConfig& cfg, const std::optional<std::string>& out_dir = std::nullopt);

class Adam {
 public:
  Adam(const model::ModelParams& p, const TrainConfig& cfg);
  void step(model::ModelParams& p, const std::vector<Matrix>& grads, double lr);
  std::size_t steps() const noexcept { return t_; }

 private:
  TrainConfig cfg_;
  std::vector<Matrix> m_, v_;
  std::size_t t_ = 0;
};

// Scales grads in place so their global L2 norm is at most max_norm; returns the norm before clipping.
double clip_grad_norm(std::vector<Matrix>& grads, double max_norm);

}  // namespace medos::train
