// Copyright 2026 The MEDOS Authors.
// SPDX-License-Identifier: Apache-2.0

#include "medos/kernels.hpp"

#include <cmath>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "medos/error.hpp"

namespace medos::kernels {
namespace {

struct GemmShape {
  std::size_t m, k, n;
};

GemmShape check_gemm(const GemmArgs& g) {
  const std::size_t am = g.trans_a == Transpose::no ? g.a.rows : g.a.cols;
  const std::size_t ak = g.trans_a == Transpose::no ? g.a.cols : g.a.rows;
  const std::size_t bk = g.trans_b == Transpose::no ? g.b.rows : g.b.cols;
  const std::size_t bn = g.trans_b == Transpose::no ? g.b.cols : g.b.rows;
  if (ak != bk) {
    throw ContractError("gemm: inner dimensions differ (" + std::to_string(ak) + " vs " +
                        std::to_string(bk) + ")");
  }
  if (g.accumulate) {
    if (g.c.rows != am || g.c.cols != bn) throw ContractError("gemm: accumulator has wrong shape");
  } else {
    g.c = Matrix(am, bn);
  }
  return {am, ak, bn};
}

// One output row. Shared by both kernels so the arithmetic is identical.
inline void gemm_row(const GemmArgs& g, const GemmShape& s, std::size_t i) {
  const bool ta = g.trans_a == Transpose::yes;
  const bool tb = g.trans_b == Transpose::yes;
  const double* a = g.a.data.data();
  const double* b = g.b.data.data();
  double* c = g.c.data.data() + i * s.n;
  for (std::size_t j = 0; j < s.n; ++j) {
    double acc = 0.0;
    for (std::size_t p = 0; p < s.k; ++p) {
      const double av = ta ? a[p * g.a.cols + i] : a[i * g.a.cols + p];
      const double bv = tb ? b[j * g.b.cols + p] : b[p * g.b.cols + j];
      acc += av * bv;
    }
    c[j] = g.accumulate ? c[j] + acc : acc;
  }
}

void check_cosine(const Matrix& a, const Matrix& b) {
  if (a.cols != b.cols) {
    throw ContractError("cosine: dimension mismatch (" + std::to_string(a.cols) + " vs " +
                        std::to_string(b.cols) + ")");
  }
}

inline void cosine_row(const Matrix& a, const Matrix& b, const std::vector<double>& nb,
                       Matrix& out, std::size_t i) {
  const auto ar = a.row(i);
  const double na = norm2(ar);
  for (std::size_t j = 0; j < b.rows; ++j) {
    out(i, j) = dot(ar, b.row(j)) / (na * nb[j]);
  }
}

std::vector<double> row_norms(const Matrix& m) {
  std::vector<double> n(m.rows);
  for (std::size_t i = 0; i < m.rows; ++i) n[i] = norm2(m.row(i));
  return n;
}

constexpr std::size_t kParallelFlops = 1u << 15;

}  // namespace

double dot(std::span<const double> x, std::span<const double> y) {
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * y[i];
  return acc;
}

double norm2(std::span<const double> x) { return std::sqrt(dot(x, x)); }

namespace serial {

void gemm(const GemmArgs& args) {
  const GemmShape s = check_gemm(args);
  for (std::size_t i = 0; i < s.m; ++i) gemm_row(args, s, i);
}

Matrix cosine_matrix(const Matrix& a, const Matrix& b) {
  check_cosine(a, b);
  Matrix out(a.rows, b.rows);
  const auto nb = row_norms(b);
  for (std::size_t i = 0; i < a.rows; ++i) cosine_row(a, b, nb, out, i);
  return out;
}

}  // namespace serial

namespace parallel {

void gemm(const GemmArgs& args) {
  const GemmShape s = check_gemm(args);
  const auto m = static_cast<std::ptrdiff_t>(s.m);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < m; ++i) gemm_row(args, s, static_cast<std::size_t>(i));
}

Matrix cosine_matrix(const Matrix& a, const Matrix& b) {
  check_cosine(a, b);
  Matrix out(a.rows, b.rows);
  const auto nb = row_norms(b);
  const auto m = static_cast<std::ptrdiff_t>(a.rows);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < m; ++i) cosine_row(a, b, nb, out, static_cast<std::size_t>(i));
  return out;
}

}  // namespace parallel

void gemm(const GemmArgs& args) {
  const std::size_t rows = args.trans_a == Transpose::no ? args.a.rows : args.a.cols;
  const std::size_t inner = args.trans_a == Transpose::no ? args.a.cols : args.a.rows;
  const std::size_t cols = args.trans_b == Transpose::no ? args.b.cols : args.b.rows;
  if (rows > 1 && rows * inner * cols >= kParallelFlops && !in_parallel() && max_threads() > 1) {
    parallel::gemm(args);
  } else {
    serial::gemm(args);
  }
}

Matrix cosine_matrix_checked(const Matrix& a, const Matrix& b, bool use_parallel) {
  check_cosine(a, b);
  for (const Matrix* m : {&a, &b}) {
    for (std::size_t i = 0; i < m->rows; ++i) {
      if (norm2(m->row(i)) == 0.0) {
        throw ContractError("cosine: zero-norm row " + std::to_string(i));
      }
    }
  }
  return use_parallel ? parallel::cosine_matrix(a, b) : serial::cosine_matrix(a, b);
}

void set_num_threads(int n) {
#ifdef _OPENMP
  omp_set_num_threads(n);
#else
  (void)n;
#endif
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

bool in_parallel() {
#ifdef _OPENMP
  return omp_in_parallel() != 0;
#else
  return false;
#endif
}

}  // namespace medos::kernels
