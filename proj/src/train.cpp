// Copyright 2026 The MEDOS Authors.
// SPDX-License-Identifier: Apache-2.0

#include "medos/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include <limits>

#include <json.hpp>

#include "medos/checkpoint.hpp"
#include "medos/error.hpp"

namespace medos::train {

TrainConfig TrainConfig::desk() {
  TrainConfig c;
  c.learning_rate = 3e-3;
  c.batch_size = 8;
  c.epochs = 250;
  return c;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ContractError("train: learning_rate must be > 0");
  if (batch_size == 0) throw ContractError("train: batch_size must be >= 1");
  if (!(adam_eps > 0.0)) throw ContractError("train: adam_eps must be > 0");
  if (weight_decay < 0.0) throw ContractError("train: weight_decay must be >= 0");
  if (grad_clip && !(*grad_clip > 0.0)) throw ContractError("train: grad_clip must be > 0");
  if (dev_fraction < 0.0 || dev_fraction >= 1.0) throw ContractError("train: dev_fraction must be in [0, 1)");
}

double lr_schedule(std::size_t step, std::size_t total_steps, double base_lr) {
  if (step > total_steps) throw ContractError("lr_schedule: step beyond total_steps");
  if (total_steps == 0) return 0.0;
  return base_lr * (1.0 - static_cast<double>(step) / static_cast<double>(total_steps));
}

Adam::Adam(const model::ModelParams& p, const TrainConfig& cfg)
    : cfg_(cfg), m_(model::zeros_like(p)), v_(model::zeros_like(p)) {}

void Adam::step(model::ModelParams& p, const std::vector<Matrix>& grads, double lr) {
  ++t_;
  const double b1 = cfg_.adam_beta1, b2 = cfg_.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t k = 0; k < p.tensors.size(); ++k) {
    auto& w = p.tensors[k].data;
    auto& m = m_[k].data;
    auto& v = v_[k].data;
    const auto& g = grads[k].data;
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      const double upd = (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.adam_eps);
      w[i] -= lr * (upd + cfg_.weight_decay * w[i]);
    }
  }
}

double clip_grad_norm(std::vector<Matrix>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads)
    for (const double v : g.data) sq += v * v;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& g : grads)
      for (double& v : g.data) v *= s;
  }
  return norm;
}

std::vector<std::string> dev_product_ids(std::span<const sdc::SyntheticQuadruplet> data, double fraction,
                                         std::uint64_t seed) {
  std::set<std::string> ids;
  for (const auto& q : data) ids.insert(q.product_id);
  std::vector<std::string> all(ids.begin(), ids.end());
  const auto n = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(all.size())));
  std::mt19937_64 rng(seed);
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(n);
  std::sort(all.begin(), all.end());
  return all;
}

namespace {

std::string step_dir(const std::string& run_dir, std::size_t step) {
  return run_dir + "/step-" + std::to_string(step);
}

std::string save_with_retry(const std::string& dir, const model::ModelParams& p, const tok::Tokenizer& tk,
                            const nlohmann::ordered_json& meta) {
  const std::string path = dir + "/model.ckpt";
  for (int attempt = 0;; ++attempt) {
    try {
      ckpt::save(path, p, tk, meta);
      return path;
    } catch (const std::exception& e) {
      if (attempt >= 1) throw Error(std::string("checkpoint write failed at ") + path + ": " + e.what());
    }
  }
}

}  // namespace

TrainResult train(model::ModelParams init, const tok::Tokenizer& tk, std::span<const sdc::SyntheticQuadruplet> data,
                  const TrainConfig& cfg, const std::optional<std::string>& out_dir) {
  cfg.validate();
  if (data.empty()) throw ContractError("train: no quadruplets");
  if (tk.size() != init.config.vocab_size) throw ContractError("train: tokenizer size differs from model vocab_size");
  const auto t0 = std::chrono::steady_clock::now();

  TrainResult res{std::move(init), {}};
  TrainReport& rep = res.report;
  rep.seed = cfg.seed;
  rep.dev_products = dev_product_ids(data, cfg.dev_fraction, cfg.seed);
  const std::set<std::string> dev_set(rep.dev_products.begin(), rep.dev_products.end());

  std::vector<model::TokenizedSources> train_set, dev_data;
  for (const auto& q : data) {
    auto s = model::tokenize_quadruplet(tk, res.params.config, q);
    (dev_set.count(q.product_id) ? dev_data : train_set).push_back(std::move(s));
  }
  if (train_set.empty()) throw ContractError("train: every product was held out for dev");

  const std::size_t per_epoch = (train_set.size() + cfg.batch_size - 1) / cfg.batch_size;
  std::size_t total = cfg.epochs * per_epoch;
  if (cfg.max_steps != 0) total = std::min(total, cfg.max_steps);
  rep.total_steps = total;
  const std::size_t eval_every = cfg.eval_every != 0 ? cfg.eval_every : per_epoch;

  std::string run_dir;
  std::ofstream log;
  if (out_dir) {
    run_dir = *out_dir + "/run-" + std::to_string(cfg.seed);
    std::filesystem::create_directories(run_dir);
    log.open(run_dir + "/train_log.jsonl", std::ios::binary | std::ios::trunc);
    if (!log) throw DataError("train: cannot open log in " + run_dir);
  }
  auto meta = [&](std::size_t step) {
    return nlohmann::ordered_json{{"step", step}, {"seed", cfg.seed}, {"total_steps", total}};
  };

  Adam opt(res.params, cfg);
  std::mt19937_64 order_rng(cfg.seed);
  std::vector<std::size_t> order(train_set.size());
  double best_dev = std::numeric_limits<double>::infinity();
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs && step < total; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), order_rng);
    for (std::size_t b = 0; b < per_epoch && step < total; ++b) {
      std::vector<model::TokenizedSources> batch;
      for (std::size_t i = b * cfg.batch_size; i < std::min(order.size(), (b + 1) * cfg.batch_size); ++i) {
        batch.push_back(train_set[order[i]]);
      }
      std::vector<Matrix> grads;
      model::LossResult lr_res;
      try {
        lr_res = model::loss_and_grad(res.params, batch, grads, {}, step,
                                      cfg.seed * 0x9E3779B97F4A7C15ULL + (static_cast<std::uint64_t>(step) << 16));
      } catch (const NumericError& e) {
        throw NumericError("train: aborted at step " + std::to_string(step) + ": " + e.what());
      }
      if (cfg.grad_clip) clip_grad_norm(grads, *cfg.grad_clip);
      const double lr = lr_schedule(step, total, cfg.learning_rate);
      opt.step(res.params, grads, lr);
      rep.loss_curve.emplace_back(step, lr_res.loss);
      if (log) {
        log << nlohmann::ordered_json{{"step", step}, {"loss", lr_res.loss}, {"lr", lr}, {"tokens", lr_res.tokens}}
                   .dump()
            << '\n';
      }
      ++step;
      if (!res.params.all_finite()) {
        throw NumericError("train: non-finite parameters after step " + std::to_string(step - 1));
      }
      if (!dev_data.empty() && (step % eval_every == 0 || step == total)) {
        const double dl = model::forward_loss(res.params, dev_data, {}, step).loss;
        rep.dev.push_back({step, dl});
        if (log) log << nlohmann::ordered_json{{"step", step}, {"dev_loss", dl}}.dump() << '\n';
        if (dl < best_dev && out_dir) {
          best_dev = dl;
          rep.best_checkpoint = save_with_retry(step_dir(run_dir, step), res.params, tk, meta(step));
        }
      }
    }
  }
  if (out_dir) {
    const std::string dir = step_dir(run_dir, step);
    rep.final_checkpoint = dir + "/model.ckpt";
    if (rep.best_checkpoint != rep.final_checkpoint) {
      rep.final_checkpoint = save_with_retry(dir, res.params, tk, meta(step));
    }
    if (rep.best_checkpoint.empty()) rep.best_checkpoint = rep.final_checkpoint;
  }
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

}  // namespace medos::train
