// Copyright 2026 The MEDOS Authors.
// SPDX-License-Identifier: Apache-2.0

#include "medos/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "medos/error.hpp"
#include "medos/kernels.hpp"

namespace medos::nn {

using kernels::Transpose;

namespace {

void require_same(const Matrix& a, const Matrix& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ContractError(std::string(op) + ": shape mismatch (" + std::to_string(a.rows) + "x" +
                        std::to_string(a.cols) + " vs " + std::to_string(b.rows) + "x" + std::to_string(b.cols) + ")");
  }
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;
// tanh rounds to 1.0 for x above ~19; keep the gate strictly below one.
constexpr double kBelowOne = 1.0 - 0x1p-53;

}  // namespace

bool Tape::wants(std::initializer_list<Var> inputs) const {
  if (!record_) return false;
  return std::any_of(inputs.begin(), inputs.end(), [&](Var v) { return nodes_[v.id].needs_grad; });
}

Var Tape::push(Matrix value, bool needs_grad, std::function<void()> back_fn) {
  Node n;
  n.own = std::move(value);
  n.needs_grad = needs_grad;
  if (needs_grad) n.back = std::move(back_fn);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Matrix& Tape::g(Var v) {
  Node& n = nodes_[v.id];
  if (n.grad.size() == 0) {
    const Matrix& val = n.borrowed ? *n.borrowed : n.own;
    n.grad = Matrix(val.rows, val.cols);
  }
  return n.grad;
}

const Matrix& Tape::value(Var v) const {
  const Node& n = nodes_[v.id];
  return n.borrowed ? *n.borrowed : n.own;
}

const Matrix& Tape::grad(Var v) { return g(v); }

Var Tape::constant(Matrix m) { return push(std::move(m), false); }

Var Tape::param(std::size_t index, const Matrix& value) {
  if (param_leaf_.size() <= index) param_leaf_.resize(index + 1, -1);
  if (param_leaf_[index] >= 0) return Var{static_cast<std::size_t>(param_leaf_[index])};
  Node n;
  n.borrowed = &value;
  n.needs_grad = record_;
  n.param_index = static_cast<std::ptrdiff_t>(index);
  nodes_.push_back(std::move(n));
  param_leaf_[index] = static_cast<std::ptrdiff_t>(nodes_.size() - 1);
  return Var{nodes_.size() - 1};
}

Var Tape::matmul(Var a, Var b) {
  Matrix out;
  kernels::gemm({value(a), value(b), out});
  const Var o = next();
  return push(std::move(out), wants({a, b}), [this, a, b, o] {
    if (needs(a)) kernels::gemm({g(o), value(b), g(a), Transpose::no, Transpose::yes, true});
    if (needs(b)) kernels::gemm({value(a), g(o), g(b), Transpose::yes, Transpose::no, true});
  });
}

Var Tape::matmul_nt(Var a, Var b) {
  Matrix out;
  kernels::gemm({value(a), value(b), out, Transpose::no, Transpose::yes});
  const Var o = next();
  return push(std::move(out), wants({a, b}), [this, a, b, o] {
    if (needs(a)) kernels::gemm({g(o), value(b), g(a), Transpose::no, Transpose::no, true});
    if (needs(b)) kernels::gemm({g(o), value(a), g(b), Transpose::yes, Transpose::no, true});
  });
}

Var Tape::add(Var a, Var b) {
  require_same(value(a), value(b), "add");
  Matrix out = value(a);
  const auto& bv = value(b).data;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += bv[i];
  const Var o = next();
  return push(std::move(out), wants({a, b}), [this, a, b, o] {
    for (const Var in : {a, b}) {
      if (!needs(in)) continue;
      auto& gi = g(in).data;
      const auto& go = g(o).data;
      for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += go[i];
    }
  });
}

Var Tape::add_row(Var a, Var row) {
  const Matrix& av = value(a);
  const Matrix& rv = value(row);
  if (rv.rows != 1 || rv.cols != av.cols) throw ContractError("add_row: bias shape mismatch");
  Matrix out = av;
  for (std::size_t r = 0; r < out.rows; ++r)
    for (std::size_t c = 0; c < out.cols; ++c) out(r, c) += rv.data[c];
  const Var o = next();
  return push(std::move(out), wants({a, row}), [this, a, row, o] {
    const Matrix& go = g(o);
    if (needs(a)) {
      auto& ga = g(a).data;
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go.data[i];
    }
    if (needs(row)) {
      auto& gr = g(row).data;
      for (std::size_t r = 0; r < go.rows; ++r)
        for (std::size_t c = 0; c < go.cols; ++c) gr[c] += go(r, c);
    }
  });
}

Var Tape::mul(Var a, Var b) {
  require_same(value(a), value(b), "mul");
  Matrix out = value(a);
  const auto& bv = value(b).data;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= bv[i];
  const Var o = next();
  return push(std::move(out), wants({a, b}), [this, a, b, o] {
    const auto& go = g(o).data;
    if (needs(a)) {
      auto& ga = g(a).data;
      const auto& bv2 = value(b).data;
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] * bv2[i];
    }
    if (needs(b)) {
      auto& gb = g(b).data;
      const auto& av2 = value(a).data;
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += go[i] * av2[i];
    }
  });
}

Var Tape::mul_const(Var a, const Matrix& m) {
  require_same(value(a), m, "mul_const");
  Matrix out = value(a);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= m.data[i];
  const Var o = next();
  return push(std::move(out), wants({a}), [this, a, o, m] {
    auto& ga = g(a).data;
    const auto& go = g(o).data;
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] * m.data[i];
  });
}

Var Tape::scale(Var a, double s) {
  Matrix out = value(a);
  for (double& x : out.data) x *= s;
  const Var o = next();
  return push(std::move(out), wants({a}), [this, a, o, s] {
    auto& ga = g(a).data;
    const auto& go = g(o).data;
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] * s;
  });
}

Var Tape::gelu(Var a) {
  Matrix out = value(a);
  for (double& x : out.data) x = 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
  const Var o = next();
  return push(std::move(out), wants({a}), [this, a, o] {
    auto& ga = g(a).data;
    const auto& go = g(o).data;
    const auto& x = value(a).data;
    for (std::size_t i = 0; i < ga.size(); ++i) {
      const double xi = x[i];
      const double t = std::tanh(kGeluC * (xi + kGeluA * xi * xi * xi));
      const double d = 0.5 * (1.0 + t) + 0.5 * xi * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * xi * xi);
      ga[i] += go[i] * d;
    }
  });
}

Var Tape::relu_tanh(Var a) {
  Matrix out = value(a);
  for (double& x : out.data) x = std::clamp(std::tanh(x), 0.0, kBelowOne);
  const Var o = next();
  return push(std::move(out), wants({a}), [this, a, o] {
    auto& ga = g(a).data;
    const auto& go = g(o).data;
    const auto& y = value(o).data;
    for (std::size_t i = 0; i < ga.size(); ++i) {
      if (y[i] > 0.0) ga[i] += go[i] * (1.0 - y[i] * y[i]);
    }
  });
}

Var Tape::layer_norm(Var x, Var gamma, Var beta, double eps) {
  const Matrix& xv = value(x);
  const Matrix& gv = value(gamma);
  const Matrix& bv = value(beta);
  if (gv.rows != 1 || gv.cols != xv.cols || !gv.same_shape(bv)) throw ContractError("layer_norm: parameter shape");
  const std::size_t n = xv.cols;
  Matrix out(xv.rows, n);
  Matrix xhat(xv.rows, n);
  std::vector<double> inv_std(xv.rows);
  for (std::size_t r = 0; r < xv.rows; ++r) {
    double mean = 0.0;
    for (std::size_t c = 0; c < n; ++c) mean += xv(r, c);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t c = 0; c < n; ++c) var += (xv(r, c) - mean) * (xv(r, c) - mean);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < n; ++c) {
      xhat(r, c) = (xv(r, c) - mean) * inv_std[r];
      out(r, c) = xhat(r, c) * gv.data[c] + bv.data[c];
    }
  }
  const Var o = next();
  const bool want = wants({x, gamma, beta});
  return push(std::move(out), want, [this, x, gamma, beta, o, xhat = std::move(xhat), inv_std = std::move(inv_std)] {
    const Matrix& go = g(o);
    const Matrix& gv2 = value(gamma);
    const std::size_t cols = go.cols;
    for (std::size_t r = 0; r < go.rows; ++r) {
      if (needs(gamma) || needs(beta)) {
        for (std::size_t c = 0; c < cols; ++c) {
          if (needs(gamma)) g(gamma).data[c] += go(r, c) * xhat(r, c);
          if (needs(beta)) g(beta).data[c] += go(r, c);
        }
      }
      if (!needs(x)) continue;
      double mean_d = 0.0, mean_dx = 0.0;
      for (std::size_t c = 0; c < cols; ++c) {
        const double d = go(r, c) * gv2.data[c];
        mean_d += d;
        mean_dx += d * xhat(r, c);
      }
      mean_d /= static_cast<double>(cols);
      mean_dx /= static_cast<double>(cols);
      Matrix& gx = g(x);
      for (std::size_t c = 0; c < cols; ++c) {
        const double d = go(r, c) * gv2.data[c];
        gx(r, c) += inv_std[r] * (d - mean_d - xhat(r, c) * mean_dx);
      }
    }
  });
}

Var Tape::gather_rows(Var table, std::span<const int> ids) {
  const Matrix& t = value(table);
  Matrix out(ids.size(), t.cols);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= t.rows) {
      throw ContractError("gather_rows: id " + std::to_string(ids[i]) + " out of range [0, " + std::to_string(t.rows) + ")");
    }
    std::copy_n(t.row(static_cast<std::size_t>(ids[i])).begin(), t.cols, out.row(i).begin());
  }
  const Var o = next();
  std::vector<int> idv(ids.begin(), ids.end());
  return push(std::move(out), wants({table}), [this, table, o, idv = std::move(idv)] {
    Matrix& gt = g(table);
    const Matrix& go = g(o);
    for (std::size_t i = 0; i < idv.size(); ++i) {
      auto dst = gt.row(static_cast<std::size_t>(idv[i]));
      const auto src = go.row(i);
      for (std::size_t c = 0; c < gt.cols; ++c) dst[c] += src[c];
    }
  });
}

Var Tape::concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  const std::size_t rows = value(parts[0]).rows;
  std::size_t cols = 0;
  for (const Var p : parts) {
    if (value(p).rows != rows) throw ContractError("concat_cols: row count mismatch");
    cols += value(p).cols;
  }
  Matrix out(rows, cols);
  std::size_t off = 0;
  for (const Var p : parts) {
    const Matrix& pv = value(p);
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(pv.row(r).begin(), pv.cols, out.row(r).begin() + off);
    off += pv.cols;
  }
  bool want = false;
  for (const Var p : parts) want = want || wants({p});
  const Var o = next();
  std::vector<Var> pv(parts.begin(), parts.end());
  return push(std::move(out), want, [this, o, pv = std::move(pv)] {
    const Matrix& go = g(o);
    std::size_t offset = 0;
    for (const Var p : pv) {
      const std::size_t w = value(p).cols;
      if (needs(p)) {
        Matrix& gp = g(p);
        for (std::size_t r = 0; r < go.rows; ++r)
          for (std::size_t c = 0; c < w; ++c) gp(r, c) += go(r, offset + c);
      }
      offset += w;
    }
  });
}

Var Tape::slice_cols(Var a, std::size_t offset, std::size_t width) {
  const Matrix& av = value(a);
  if (offset + width > av.cols) throw ContractError("slice_cols: out of range");
  Matrix out(av.rows, width);
  for (std::size_t r = 0; r < av.rows; ++r)
    for (std::size_t c = 0; c < width; ++c) out(r, c) = av(r, offset + c);
  const Var o = next();
  return push(std::move(out), wants({a}), [this, a, o, offset, width] {
    Matrix& ga = g(a);
    const Matrix& go = g(o);
    for (std::size_t r = 0; r < go.rows; ++r)
      for (std::size_t c = 0; c < width; ++c) ga(r, offset + c) += go(r, c);
  });
}

Var Tape::slice_rows(Var a, std::size_t offset, std::size_t count) {
  const Matrix& av = value(a);
  if (offset + count > av.rows) throw ContractError("slice_rows: out of range");
  Matrix out(count, av.cols);
  std::copy_n(av.data.begin() + static_cast<std::ptrdiff_t>(offset * av.cols), count * av.cols, out.data.begin());
  const Var o = next();
  return push(std::move(out), wants({a}), [this, a, o, offset] {
    Matrix& ga = g(a);
    const Matrix& go = g(o);
    for (std::size_t i = 0; i < go.size(); ++i) ga.data[offset * ga.cols + i] += go.data[i];
  });
}

Var Tape::masked_softmax(Var scores, const std::vector<bool>& key_mask, bool causal) {
  const Matrix& s = value(scores);
  if (key_mask.size() != s.cols) throw ContractError("masked_softmax: mask length mismatch");
  Matrix out(s.rows, s.cols);
  for (std::size_t r = 0; r < s.rows; ++r) {
    const std::size_t limit = causal ? std::min(s.cols, r + 1) : s.cols;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < limit; ++c)
      if (key_mask[c]) mx = std::max(mx, s(r, c));
    if (mx == -std::numeric_limits<double>::infinity()) continue;
    double z = 0.0;
    for (std::size_t c = 0; c < limit; ++c) {
      if (!key_mask[c]) continue;
      out(r, c) = std::exp(s(r, c) - mx);
      z += out(r, c);
    }
    for (std::size_t c = 0; c < limit; ++c) out(r, c) /= z;
  }
  const Var o = next();
  return push(std::move(out), wants({scores}), [this, scores, o] {
    const Matrix& p = value(o);
    const Matrix& go = g(o);
    Matrix& gs = g(scores);
    for (std::size_t r = 0; r < p.rows; ++r) {
      double dotp = 0.0;
      for (std::size_t c = 0; c < p.cols; ++c) dotp += go(r, c) * p(r, c);
      for (std::size_t c = 0; c < p.cols; ++c) gs(r, c) += p(r, c) * (go(r, c) - dotp);
    }
  });
}

Var Tape::align_rows(Var a, std::size_t rows, const std::vector<bool>& row_mask) {
  const Matrix& av = value(a);
  if (row_mask.size() != rows) throw ContractError("align_rows: mask length must equal target rows");
  Matrix out(rows, av.cols);
  const std::size_t keep = std::min(rows, av.rows);
  for (std::size_t r = 0; r < keep; ++r) {
    if (row_mask[r]) std::copy_n(av.row(r).begin(), av.cols, out.row(r).begin());
  }
  const Var o = next();
  return push(std::move(out), wants({a}), [this, a, o, keep, row_mask] {
    Matrix& ga = g(a);
    const Matrix& go = g(o);
    for (std::size_t r = 0; r < keep; ++r) {
      if (!row_mask[r]) continue;
      for (std::size_t c = 0; c < ga.cols; ++c) ga(r, c) += go(r, c);
    }
  });
}

Var Tape::log_softmax(Var a) {
  const Matrix& av = value(a);
  Matrix out(av.rows, av.cols);
  for (std::size_t r = 0; r < av.rows; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < av.cols; ++c) mx = std::max(mx, av(r, c));
    double z = 0.0;
    for (std::size_t c = 0; c < av.cols; ++c) z += std::exp(av(r, c) - mx);
    const double lse = mx + std::log(z);
    for (std::size_t c = 0; c < av.cols; ++c) out(r, c) = av(r, c) - lse;
  }
  const Var o = next();
  return push(std::move(out), wants({a}), [this, a, o] {
    const Matrix& lp = value(o);
    const Matrix& go = g(o);
    Matrix& ga = g(a);
    for (std::size_t r = 0; r < lp.rows; ++r) {
      double sum = 0.0;
      for (std::size_t c = 0; c < lp.cols; ++c) sum += go(r, c);
      for (std::size_t c = 0; c < lp.cols; ++c) ga(r, c) += go(r, c) - std::exp(lp(r, c)) * sum;
    }
  });
}

Var Tape::pick_sum(Var a, std::span<const int> cols, double coeff) {
  const Matrix& av = value(a);
  if (cols.size() != av.rows) throw ContractError("pick_sum: one column index per row required");
  double total = 0.0;
  for (std::size_t r = 0; r < av.rows; ++r) {
    if (cols[r] < 0) continue;
    if (static_cast<std::size_t>(cols[r]) >= av.cols) throw ContractError("pick_sum: column out of range");
    total += av(r, static_cast<std::size_t>(cols[r]));
  }
  const Var o = next();
  std::vector<int> cv(cols.begin(), cols.end());
  return push(Matrix(1, 1, coeff * total), wants({a}), [this, a, o, coeff, cv = std::move(cv)] {
    Matrix& ga = g(a);
    const double go = g(o).data[0];
    for (std::size_t r = 0; r < cv.size(); ++r) {
      if (cv[r] >= 0) ga(r, static_cast<std::size_t>(cv[r])) += coeff * go;
    }
  });
}

void Tape::backward(Var root) {
  if (!record_) throw ContractError("backward: tape was not recording");
  if (value(root).size() != 1) throw ContractError("backward: root must be a scalar");
  for (auto& n : nodes_) n.grad = Matrix();
  g(root).data[0] = 1.0;
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.needs_grad && n.back && n.grad.size() != 0) n.back();
  }
}

void Tape::accumulate_param_grads(std::vector<Matrix>& grads) {
  for (std::size_t idx = 0; idx < param_leaf_.size(); ++idx) {
    if (param_leaf_[idx] < 0) continue;
    const Node& n = nodes_[static_cast<std::size_t>(param_leaf_[idx])];
    if (n.grad.size() == 0) continue;
    Matrix& dst = grads.at(idx);
    if (dst.size() == 0) dst = Matrix(n.grad.rows, n.grad.cols);
    for (std::size_t i = 0; i < dst.size(); ++i) dst.data[i] += n.grad.data[i];
  }
}

}  // namespace medos::nn
