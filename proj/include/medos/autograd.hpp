// Copyright 2026 The MEDOS Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "medos/matrix.hpp"

// Reverse-mode differentiation over row-major matrices. A Tape records the
// operations of one forward pass; backward() walks them in reverse. With
// recording disabled the tape only evaluates values (inference).
namespace medos::nn {

struct Var {
  std::size_t id = 0;
};

class Tape {
 public:
  explicit Tape(bool record = true) : record_(record) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const noexcept { return record_; }

  Var constant(Matrix m);
  // Leaf bound to parameter slot `index`. The value is borrowed and must
  // outlive the tape. Repeated calls with the same index return the same leaf.
  Var param(std::size_t index, const Matrix& value);

  const Matrix& value(Var v) const;
  // Gradient of the last backward() root w.r.t. v (zeros if unreached).
  const Matrix& grad(Var v);

  Var matmul(Var a, Var b);     // a * b
  Var matmul_nt(Var a, Var b);  // a * b^T
  Var add(Var a, Var b);
  Var add_row(Var a, Var row);  // row (1 x c) broadcast over a
  Var mul(Var a, Var b);        // elementwise
  Var mul_const(Var a, const Matrix& m);
  Var scale(Var a, double s);
  Var gelu(Var a);
  Var relu_tanh(Var a);  // max(0, tanh(x)), capped just below 1
  Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
  Var gather_rows(Var table, std::span<const int> ids);
  Var concat_cols(std::span<const Var> parts);
  Var slice_cols(Var a, std::size_t offset, std::size_t width);
  Var slice_rows(Var a, std::size_t offset, std::size_t count);
  // Row-wise softmax over columns j with key_mask[j] (and j <= i when
  // causal). Rows with no admissible column are all zero.
  Var masked_softmax(Var scores, const std::vector<bool>& key_mask, bool causal);
  // Truncates or zero-pads to `rows`, then zeroes rows whose mask is false.
  Var align_rows(Var a, std::size_t rows, const std::vector<bool>& row_mask);
  Var log_softmax(Var a);
  // Scalar: coeff * sum_r a(r, cols[r]) over rows with cols[r] >= 0.
  Var pick_sum(Var a, std::span<const int> cols, double coeff);

  // root must be 1 x 1. Requires recording.
  void backward(Var root);

  // grads[i] += gradient of the leaf bound to parameter slot i.
  void accumulate_param_grads(std::vector<Matrix>& grads);

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Matrix own;
    const Matrix* borrowed = nullptr;
    Matrix grad;
    bool needs_grad = false;
    std::ptrdiff_t param_index = -1;
    std::function<void()> back;
  };

  // True when the op being built should record a backward function.
  bool wants(std::initializer_list<Var> inputs) const;
  Var push(Matrix value, bool needs_grad, std::function<void()> back_fn = {});
  Var next() const { return Var{nodes_.size()}; }
  bool needs(Var v) const { return nodes_[v.id].needs_grad; }
  Matrix& g(Var v);  // lazily allocated gradient buffer

  bool record_;
  std::vector<Node> nodes_;
  std::vector<std::ptrdiff_t> param_leaf_;
};

}  // namespace medos::nn
