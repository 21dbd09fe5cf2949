// Copyright 2026 The MEDOS Authors.
// SPDX-License-Identifier: Apache-2.0

// Serial reference vs OpenMP kernels. Run with e.g. OMP_NUM_THREADS=8.

#include <random>
#include <string>
#include <vector>

#include <benchmark/benchmark.h>

#include "medos/embed.hpp"
#include "medos/kernels.hpp"

namespace {

medos::Matrix random_matrix(std::size_t r, std::size_t c) {
  std::mt19937_64 rng(r * 131 + c);
  std::normal_distribution<double> nd;
  medos::Matrix m(r, c);
  for (double& x : m.data) x = nd(rng);
  return m;
}

void BM_GemmSerial(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_matrix(n, n), b = random_matrix(n, n);
  medos::Matrix c;
  for (auto _ : state) {
    medos::kernels::serial::gemm({a, b, c});
    benchmark::DoNotOptimize(c.data.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}

void BM_GemmParallel(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_matrix(n, n), b = random_matrix(n, n);
  medos::Matrix c;
  for (auto _ : state) {
    medos::kernels::parallel::gemm({a, b, c});
    benchmark::DoNotOptimize(c.data.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}

void BM_CosineSerial(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto e = random_matrix(n, 384);
  for (auto _ : state) benchmark::DoNotOptimize(medos::kernels::serial::cosine_matrix(e, e));
}

void BM_CosineParallel(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto e = random_matrix(n, 384);
  for (auto _ : state) benchmark::DoNotOptimize(medos::kernels::parallel::cosine_matrix(e, e));
}

void BM_FallbackEmbed(benchmark::State& state) {
  std::vector<std::string> texts;
  for (int i = 0; i < 512; ++i) texts.push_back("this product review number " + std::to_string(i) + " is quite good");
  medos::embed::EmbeddingProviderConfig cfg;
  cfg.parallel = state.range(0) != 0;
  for (auto _ : state) benchmark::DoNotOptimize(medos::embed::embed_texts(cfg, texts));
}

}  // namespace

BENCHMARK(BM_GemmSerial)->Arg(64)->Arg(256);
BENCHMARK(BM_GemmParallel)->Arg(64)->Arg(256);
BENCHMARK(BM_CosineSerial)->Arg(200)->Arg(800);
BENCHMARK(BM_CosineParallel)->Arg(200)->Arg(800);
BENCHMARK(BM_FallbackEmbed)->Arg(0)->Arg(1);

BENCHMARK_MAIN();
