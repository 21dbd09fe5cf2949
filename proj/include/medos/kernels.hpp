// Copyright 2026 The MEDOS Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>

#include "medos/matrix.hpp"

// Dense numeric kernels. Each kernel exists twice: a plain serial reference
// and an OpenMP version. Both compute every output element with the same
// summation order, so their results are bitwise identical for any thread
// count; tests rely on this.
namespace medos::kernels {

enum class Transpose { no, yes };

// C (+)= op(A) * op(B). Shapes are checked and a ContractError thrown on
// mismatch. When `accumulate` is false C is resized and overwritten.
struct GemmArgs {
  const Matrix& a;
  const Matrix& b;
  Matrix& c;
  Transpose trans_a = Transpose::no;
  Transpose trans_b = Transpose::no;
  bool accumulate = false;
};

// Cosine similarity between every row of A and every row of B. Throws on
// dimension mismatch or a zero-norm row (reporting the row index).
Matrix cosine_matrix_checked(const Matrix& a, const Matrix& b, bool parallel);

namespace serial {
void gemm(const GemmArgs& args);
Matrix cosine_matrix(const Matrix& a, const Matrix& b);
}  // namespace serial

namespace parallel {
void gemm(const GemmArgs& args);
Matrix cosine_matrix(const Matrix& a, const Matrix& b);
}  // namespace parallel

// Dispatching entry point: uses the OpenMP kernel when the product is large
// enough and we are not already inside a parallel region.
void gemm(const GemmArgs& args);

double dot(std::span<const double> x, std::span<const double> y);
double norm2(std::span<const double> x);

// Thread control (no-ops without OpenMP).
void set_num_threads(int n);
int max_threads();
bool in_parallel();

}  // namespace medos::kernels
