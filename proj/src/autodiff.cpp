/*
 * Copyright 2026 The srvae Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "srvae/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>

namespace srvae {

// ---------------------------------------------------------------------------
// Tape

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Matrix value) {
  Node node;
  node.value = std::move(value);
  return push(std::move(node));
}

Var Tape::variable(Matrix value) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = true;
  return push(std::move(node));
}

Var Tape::parameter(Parameter& param) {
  Node node;
  node.value = param.value;
  node.param = &param;
  node.requires_grad = param.trainable;
  return push(std::move(node));
}

Var Tape::record(Matrix value, std::initializer_list<Var> parents, Backprop backprop) {
  Node node;
  node.value = std::move(value);
  for (const Var& p : parents) {
    if (p.valid() && nodes_[p.id_].requires_grad) {
      node.requires_grad = true;
      break;
    }
  }
  if (node.requires_grad) node.backprop = std::move(backprop);
  return push(std::move(node));
}

Var Tape::record(Matrix value, const std::vector<Var>& parents, Backprop backprop) {
  Node node;
  node.value = std::move(value);
  for (const Var& p : parents) {
    if (p.valid() && nodes_[p.id_].requires_grad) {
      node.requires_grad = true;
      break;
    }
  }
  if (node.requires_grad) node.backprop = std::move(backprop);
  return push(std::move(node));
}

void Tape::accumulate(const Var& v, const Matrix& g) {
  Node& node = nodes_[v.id_];
  if (!node.requires_grad) return;
  if (!node.has_grad) {
    node.grad = g;
    node.has_grad = true;
  } else {
    node.grad += g;
  }
}

void Tape::backward(const Var& root) {
  require(root.tape_ == this, ErrorCode::kInvalidArgument, "backward: foreign node");
  const Matrix& rv = nodes_[root.id_].value;
  if (rv.rows() != 1 || rv.cols() != 1) {
    fail(ErrorCode::kNonScalarRoot, "backward: root has shape [" +
                                        std::to_string(rv.rows()) + ", " +
                                        std::to_string(rv.cols()) + "]");
  }
  for (Node& n : nodes_) {
    n.has_grad = false;
    n.grad.resize(0, 0);
  }
  accumulate(root, Matrix::Ones(1, 1));
  for (std::size_t i = root.id_ + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad) continue;
    if (n.backprop) {
      // The closure may append to other nodes' grads but never to this one.
      const Matrix g = n.grad;
      n.backprop(*this, g);
    }
    if (n.param != nullptr && n.param->trainable) n.param->grad += n.grad;
  }
}

Matrix Tape::grad(const Var& v) const {
  const Node& n = nodes_[v.id_];
  if (!n.has_grad) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

// ---------------------------------------------------------------------------
// Broadcasting helpers

namespace {

Index broadcast_dim(Index a, Index b, const char* op) {
  if (a == b) return a;
  if (a == 1) return b;
  if (b == 1) return a;
  fail(ErrorCode::kShapeMismatch, std::string(op) + ": incompatible shapes");
}

Matrix expand(const Matrix& m, Index r, Index c) {
  if (m.rows() == r && m.cols() == c) return m;
  if (m.rows() == 1 && m.cols() == 1) return Matrix::Constant(r, c, m(0, 0));
  if (m.rows() == 1) return m.replicate(r, 1);
  return m.replicate(1, c);
}

Matrix reduce_to(const Matrix& g, Index r, Index c) {
  if (g.rows() == r && g.cols() == c) return g;
  if (r == 1 && c == 1) return Matrix::Constant(1, 1, g.sum());
  if (r == 1) return g.colwise().sum();
  return g.rowwise().sum();
}

Tape& tape_of(const Var& a) {
  require(a.valid(), ErrorCode::kInvalidArgument, "op on an empty Var");
  return *a.tape();
}

Tape& tape_of(const Var& a, const Var& b) {
  require(a.valid() && b.valid() && a.tape() == b.tape(), ErrorCode::kInvalidArgument,
          "op mixes tapes");
  return *a.tape();
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

RowMat row_as_matrix(const Matrix& a, Index row, Index n, Index m) {
  RowMat out(n, m);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < m; ++j) out(i, j) = a(row, i * m + j);
  return out;
}

template <typename M>
void store_row(Matrix& a, Index row, const M& mat) {
  const Index m = mat.cols();
  for (Index i = 0; i < mat.rows(); ++i)
    for (Index j = 0; j < m; ++j) a(row, i * m + j) = mat(i, j);
}

/// Phi(X): lower triangle with the diagonal halved.
Matrix phi(const Matrix& x) {
  Matrix out = x.triangularView<Eigen::Lower>();
  out.diagonal() *= 0.5;
  return out;
}

/// Reverse-mode rule for A = L L^T, symmetrised.
Matrix cholesky_backward(const Matrix& lower, const Matrix& lower_bar) {
  const Matrix p = phi(lower.transpose() * lower_bar);
  // L^{-T} P L^{-1}
  Matrix tmp = lower.transpose().triangularView<Eigen::Upper>().solve(p);
  Matrix abar =
      lower.transpose().triangularView<Eigen::Upper>().solve(tmp.transpose()).transpose();
  return 0.5 * (abar + abar.transpose());
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise

Var add(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  const Index r = broadcast_dim(a.rows(), b.rows(), "add");
  const Index c = broadcast_dim(a.cols(), b.cols(), "add");
  Matrix v = expand(a.value(), r, c) + expand(b.value(), r, c);
  return t.record(std::move(v), {a, b}, [a, b](Tape& tp, const Matrix& g) {
    tp.accumulate(a, reduce_to(g, a.rows(), a.cols()));
    tp.accumulate(b, reduce_to(g, b.rows(), b.cols()));
  });
}

Var sub(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  const Index r = broadcast_dim(a.rows(), b.rows(), "sub");
  const Index c = broadcast_dim(a.cols(), b.cols(), "sub");
  Matrix v = expand(a.value(), r, c) - expand(b.value(), r, c);
  return t.record(std::move(v), {a, b}, [a, b](Tape& tp, const Matrix& g) {
    tp.accumulate(a, reduce_to(g, a.rows(), a.cols()));
    tp.accumulate(b, reduce_to(-g, b.rows(), b.cols()));
  });
}

Var mul(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  const Index r = broadcast_dim(a.rows(), b.rows(), "mul");
  const Index c = broadcast_dim(a.cols(), b.cols(), "mul");
  Matrix v = expand(a.value(), r, c).cwiseProduct(expand(b.value(), r, c));
  return t.record(std::move(v), {a, b}, [a, b, r, c](Tape& tp, const Matrix& g) {
    if (a.requires_grad())
      tp.accumulate(a, reduce_to(g.cwiseProduct(expand(b.value(), r, c)), a.rows(), a.cols()));
    if (b.requires_grad())
      tp.accumulate(b, reduce_to(g.cwiseProduct(expand(a.value(), r, c)), b.rows(), b.cols()));
  });
}

Var div(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  const Index r = broadcast_dim(a.rows(), b.rows(), "div");
  const Index c = broadcast_dim(a.cols(), b.cols(), "div");
  Matrix v = expand(a.value(), r, c).cwiseQuotient(expand(b.value(), r, c));
  Var out = t.record(v, {a, b}, [a, b, r, c, v](Tape& tp, const Matrix& g) {
    const Matrix bb = expand(b.value(), r, c);
    if (a.requires_grad()) tp.accumulate(a, reduce_to(g.cwiseQuotient(bb), a.rows(), a.cols()));
    if (b.requires_grad())
      tp.accumulate(b, reduce_to(-g.cwiseProduct(v).cwiseQuotient(bb), b.rows(), b.cols()));
  });
  return out;
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var scale(const Var& a, double c) {
  return tape_of(a).record(a.value() * c, {a}, [a, c](Tape& tp, const Matrix& g) {
    tp.accumulate(a, g * c);
  });
}

Var add_scalar(const Var& a, double c) {
  return tape_of(a).record(a.value().array() + c, {a},
                           [a](Tape& tp, const Matrix& g) { tp.accumulate(a, g); });
}

Var exp(const Var& a) {
  Matrix v = a.value().array().exp();
  return tape_of(a).record(v, {a}, [a, v](Tape& tp, const Matrix& g) {
    tp.accumulate(a, g.cwiseProduct(v));
  });
}

Var log(const Var& a) {
  return tape_of(a).record(a.value().array().log(), {a}, [a](Tape& tp, const Matrix& g) {
    tp.accumulate(a, g.cwiseQuotient(a.value()));
  });
}

Var sqrt(const Var& a) {
  Matrix v = a.value().array().sqrt();
  return tape_of(a).record(v, {a}, [a, v](Tape& tp, const Matrix& g) {
    tp.accumulate(a, (0.5 * g.array() / v.array()).matrix());
  });
}

Var square(const Var& a) {
  return tape_of(a).record(a.value().array().square(), {a},
                           [a](Tape& tp, const Matrix& g) {
                             tp.accumulate(a, 2.0 * g.cwiseProduct(a.value()));
                           });
}

namespace {
inline double softplus_scalar(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}
inline double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}
}  // namespace

Var softplus(const Var& a) {
  Matrix v = a.value().unaryExpr([](double x) { return softplus_scalar(x); });
  return tape_of(a).record(std::move(v), {a}, [a](Tape& tp, const Matrix& g) {
    tp.accumulate(a, g.cwiseProduct(
                         a.value().unaryExpr([](double x) { return sigmoid_scalar(x); })));
  });
}

Var sigmoid(const Var& a) {
  Matrix v = a.value().unaryExpr([](double x) { return sigmoid_scalar(x); });
  return tape_of(a).record(v, {a}, [a, v](Tape& tp, const Matrix& g) {
    tp.accumulate(a, (g.array() * v.array() * (1.0 - v.array())).matrix());
  });
}

Var log_sigmoid(const Var& a) {
  Matrix v = a.value().unaryExpr([](double x) { return -softplus_scalar(-x); });
  return tape_of(a).record(std::move(v), {a}, [a](Tape& tp, const Matrix& g) {
    tp.accumulate(a, g.cwiseProduct(
                         a.value().unaryExpr([](double x) { return sigmoid_scalar(-x); })));
  });
}

Var relu(const Var& a) {
  Matrix v = a.value().cwiseMax(0.0);
  return tape_of(a).record(std::move(v), {a}, [a](Tape& tp, const Matrix& g) {
    tp.accumulate(a, g.cwiseProduct(
                         a.value().unaryExpr([](double x) { return x > 0.0 ? 1.0 : 0.0; })));
  });
}

Var hard_threshold_st(const Var& z) {
  Matrix v = z.value().unaryExpr([](double x) {
    const double s = x > 0.5 ? 1.0 : (x < 0.5 ? -1.0 : 0.0);
    return 0.5 * (s + 1.0);
  });
  return tape_of(z).record(std::move(v), {z},
                           [z](Tape& tp, const Matrix& g) { tp.accumulate(z, g); });
}

// ---------------------------------------------------------------------------
// Linear algebra and reductions

Var matmul(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  require(a.cols() == b.rows(), ErrorCode::kShapeMismatch,
          "matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " * " +
              std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  Matrix v = a.value() * b.value();
  return t.record(std::move(v), {a, b}, [a, b](Tape& tp, const Matrix& g) {
    if (a.requires_grad()) tp.accumulate(a, g * b.value().transpose());
    if (b.requires_grad()) tp.accumulate(b, a.value().transpose() * g);
  });
}

Var transpose(const Var& a) {
  return tape_of(a).record(a.value().transpose(), {a}, [a](Tape& tp, const Matrix& g) {
    tp.accumulate(a, g.transpose());
  });
}

Var sum(const Var& a) {
  return tape_of(a).record(Matrix::Constant(1, 1, a.value().sum()), {a},
                           [a](Tape& tp, const Matrix& g) {
                             tp.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
                           });
}

Var sum_rows(const Var& a) {
  return tape_of(a).record(a.value().rowwise().sum(), {a}, [a](Tape& tp, const Matrix& g) {
    tp.accumulate(a, g.replicate(1, a.cols()));
  });
}

Var sum_cols(const Var& a) {
  return tape_of(a).record(a.value().colwise().sum(), {a}, [a](Tape& tp, const Matrix& g) {
    tp.accumulate(a, g.replicate(a.rows(), 1));
  });
}

Var block(const Var& a, Index row, Index col, Index rows, Index cols) {
  require(row >= 0 && col >= 0 && row + rows <= a.rows() && col + cols <= a.cols(),
          ErrorCode::kShapeMismatch, "block: out of range");
  Matrix v = a.value().block(row, col, rows, cols);
  return tape_of(a).record(std::move(v), {a},
                           [a, row, col, rows, cols](Tape& tp, const Matrix& g) {
                             Matrix full = Matrix::Zero(a.rows(), a.cols());
                             full.block(row, col, rows, cols) = g;
                             tp.accumulate(a, full);
                           });
}

Var select_cols(const Var& a, const std::vector<Index>& cols) {
  Matrix v(a.rows(), static_cast<Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) {
    require(cols[j] >= 0 && cols[j] < a.cols(), ErrorCode::kShapeMismatch,
            "select_cols: index out of range");
    v.col(static_cast<Index>(j)) = a.value().col(cols[j]);
  }
  return tape_of(a).record(std::move(v), {a}, [a, cols](Tape& tp, const Matrix& g) {
    Matrix full = Matrix::Zero(a.rows(), a.cols());
    for (std::size_t j = 0; j < cols.size(); ++j) full.col(cols[j]) += g.col(static_cast<Index>(j));
    tp.accumulate(a, full);
  });
}

Var vcat(const std::vector<Var>& parts) {
  require(!parts.empty(), ErrorCode::kShapeMismatch, "vcat: no parts");
  const Index c = parts.front().cols();
  Index r = 0;
  for (const Var& p : parts) {
    require(p.cols() == c, ErrorCode::kShapeMismatch, "vcat: column mismatch");
    r += p.rows();
  }
  Matrix v(r, c);
  Index at = 0;
  for (const Var& p : parts) {
    v.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  return tape_of(parts.front()).record(std::move(v), parts, [parts](Tape& tp, const Matrix& g) {
    Index off = 0;
    for (const Var& p : parts) {
      if (p.requires_grad()) tp.accumulate(p, g.middleRows(off, p.rows()));
      off += p.rows();
    }
  });
}

Var hcat(const std::vector<Var>& parts) {
  require(!parts.empty(), ErrorCode::kShapeMismatch, "hcat: no parts");
  const Index r = parts.front().rows();
  Index c = 0;
  for (const Var& p : parts) {
    require(p.rows() == r, ErrorCode::kShapeMismatch, "hcat: row mismatch");
    c += p.cols();
  }
  Matrix v(r, c);
  Index at = 0;
  for (const Var& p : parts) {
    v.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return tape_of(parts.front()).record(std::move(v), parts, [parts](Tape& tp, const Matrix& g) {
    Index off = 0;
    for (const Var& p : parts) {
      if (p.requires_grad()) tp.accumulate(p, g.middleCols(off, p.cols()));
      off += p.cols();
    }
  });
}

Var reshape(const Var& a, Index rows, Index cols) {
  require(rows * cols == a.rows() * a.cols(), ErrorCode::kShapeMismatch, "reshape: size");
  const RowMat src = a.value();
  Matrix v = Eigen::Map<const RowMat>(src.data(), rows, cols);
  return tape_of(a).record(std::move(v), {a}, [a, rows, cols](Tape& tp, const Matrix& g) {
    const RowMat gr = g;
    tp.accumulate(a, Eigen::Map<const RowMat>(gr.data(), a.rows(), a.cols()));
  });
}

Var repeat_rows(const Var& a, Index rows) {
  require(a.rows() == 1, ErrorCode::kShapeMismatch, "repeat_rows: expects a single row");
  return tape_of(a).record(a.value().replicate(rows, 1), {a},
                           [a](Tape& tp, const Matrix& g) {
                             tp.accumulate(a, g.colwise().sum());
                           });
}

Var cholesky(const Var& a, const JitterPolicy& policy) {
  Matrix l = cholesky_jittered(a.value(), policy, nullptr, "cholesky");
  return tape_of(a).record(l, {a}, [a, l](Tape& tp, const Matrix& g) {
    tp.accumulate(a, cholesky_backward(l, g.triangularView<Eigen::Lower>()));
  });
}

Var solve_lower(const Var& lower, const Var& rhs, bool transpose) {
  Tape& t = tape_of(lower, rhs);
  require(lower.rows() == lower.cols() && lower.rows() == rhs.rows(),
          ErrorCode::kShapeMismatch, "solve_lower: shapes");
  Matrix x = transpose ? srvae::solve_lower_transpose(lower.value(), rhs.value())
                       : srvae::solve_lower(lower.value(), rhs.value());
  return t.record(x, {lower, rhs}, [lower, rhs, transpose, x](Tape& tp, const Matrix& g) {
    const Matrix& l = lower.value();
    if (!transpose) {
      const Matrix rbar = srvae::solve_lower_transpose(l, g);
      if (rhs.requires_grad()) tp.accumulate(rhs, rbar);
      if (lower.requires_grad())
        tp.accumulate(lower, Matrix((-rbar * x.transpose()).triangularView<Eigen::Lower>()));
    } else {
      const Matrix rbar = srvae::solve_lower(l, g);
      if (rhs.requires_grad()) tp.accumulate(rhs, rbar);
      if (lower.requires_grad())
        tp.accumulate(lower, Matrix((-x * rbar.transpose()).triangularView<Eigen::Lower>()));
    }
  });
}

Var diag_part(const Var& a) {
  require(a.rows() == a.cols(), ErrorCode::kShapeMismatch, "diag_part: not square");
  return tape_of(a).record(a.value().diagonal(), {a}, [a](Tape& tp, const Matrix& g) {
    Matrix full = Matrix::Zero(a.rows(), a.cols());
    full.diagonal() = g.col(0);
    tp.accumulate(a, full);
  });
}

Var logsumexp_groups(const Var& a, const std::vector<std::vector<Index>>& groups) {
  const Index r = a.rows();
  const Index ng = static_cast<Index>(groups.size());
  Matrix v(r, ng);
  const Matrix& x = a.value();
  for (Index gi = 0; gi < ng; ++gi) {
    const auto& cols = groups[static_cast<std::size_t>(gi)];
    require(!cols.empty(), ErrorCode::kShapeMismatch, "logsumexp_groups: empty group");
    for (Index i = 0; i < r; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (Index c : cols) mx = std::max(mx, x(i, c));
      if (!std::isfinite(mx)) {
        v(i, gi) = mx;
        continue;
      }
      double s = 0.0;
      for (Index c : cols) s += std::exp(x(i, c) - mx);
      v(i, gi) = mx + std::log(s);
    }
  }
  return tape_of(a).record(v, {a}, [a, groups, v](Tape& tp, const Matrix& g) {
    const Matrix& x = a.value();
    Matrix full = Matrix::Zero(x.rows(), x.cols());
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
      const Index gj = static_cast<Index>(gi);
      for (Index i = 0; i < x.rows(); ++i) {
        if (!std::isfinite(v(i, gj))) continue;
        for (Index c : groups[gi]) full(i, c) += g(i, gj) * std::exp(x(i, c) - v(i, gj));
      }
    }
    tp.accumulate(a, full);
  });
}

Var logsumexp_rows(const Var& a) {
  std::vector<Index> all(static_cast<std::size_t>(a.cols()));
  for (Index c = 0; c < a.cols(); ++c) all[static_cast<std::size_t>(c)] = c;
  return logsumexp_groups(a, {all});
}

Var eq_kernel(const Var& x1, const Var& x2, const Var& log_lambda, const Var& log_tau) {
  Tape& t = tape_of(x1, x2);
  require(x1.cols() == x2.cols(), ErrorCode::kShapeMismatch, "eq_kernel: input dims");
  require(log_lambda.rows() == 1 && log_lambda.cols() == 1 && log_tau.rows() == 1 &&
              log_tau.cols() == 1,
          ErrorCode::kShapeMismatch, "eq_kernel: kernel parameters must be scalars");
  const Matrix& a = x1.value();
  const Matrix& b = x2.value();
  const double lambda = std::exp(log_lambda.scalar());
  const double tau = std::exp(log_tau.scalar());
  const double inv_tau2 = 1.0 / (tau * tau);
  Matrix d2 = (a.rowwise().squaredNorm()).replicate(1, b.rows()) +
              (b.rowwise().squaredNorm()).transpose().replicate(a.rows(), 1) -
              2.0 * a * b.transpose();
  d2 = d2.cwiseMax(0.0);
  Matrix k = lambda * (-inv_tau2 * d2).array().exp();
  return t.record(k, {x1, x2, log_lambda, log_tau},
                  [x1, x2, log_lambda, log_tau, k, d2, inv_tau2](Tape& tp, const Matrix& g) {
                    const Matrix gk = g.cwiseProduct(k);
                    if (log_lambda.requires_grad())
                      tp.accumulate(log_lambda, Matrix::Constant(1, 1, gk.sum()));
                    if (log_tau.requires_grad())
                      tp.accumulate(log_tau, Matrix::Constant(
                                                 1, 1, 2.0 * inv_tau2 * gk.cwiseProduct(d2).sum()));
                    const Matrix& a = x1.value();
                    const Matrix& b = x2.value();
                    // d k_ij / d x1_i = -2/tau^2 k_ij (x1_i - x2_j)
                    if (x1.requires_grad()) {
                      Matrix ga = -2.0 * inv_tau2 *
                                  (gk.rowwise().sum().asDiagonal() * a - gk * b);
                      tp.accumulate(x1, ga);
                    }
                    if (x2.requires_grad()) {
                      Matrix gb = 2.0 * inv_tau2 *
                                  (gk.transpose() * a - gk.colwise().sum().transpose().asDiagonal() * b);
                      tp.accumulate(x2, gb);
                    }
                  });
}

// ---------------------------------------------------------------------------
// Row-batched small matrices

Var batch_matmul(const Var& a, const Var& b, Index n, Index m, Index p) {
  Tape& t = tape_of(a, b);
  require(a.cols() == n * m && b.cols() == m * p && a.rows() == b.rows(),
          ErrorCode::kShapeMismatch, "batch_matmul: shapes");
  const Index r = a.rows();
  Matrix v(r, n * p);
  for (Index i = 0; i < r; ++i) {
    store_row(v, i, RowMat(row_as_matrix(a.value(), i, n, m) * row_as_matrix(b.value(), i, m, p)));
  }
  return t.record(std::move(v), {a, b}, [a, b, n, m, p](Tape& tp, const Matrix& g) {
    const Index r = a.rows();
    Matrix ga(r, n * m), gb(r, m * p);
    for (Index i = 0; i < r; ++i) {
      const RowMat gi = row_as_matrix(g, i, n, p);
      if (a.requires_grad())
        store_row(ga, i, RowMat(gi * row_as_matrix(b.value(), i, m, p).transpose()));
      if (b.requires_grad())
        store_row(gb, i, RowMat(row_as_matrix(a.value(), i, n, m).transpose() * gi));
    }
    if (a.requires_grad()) tp.accumulate(a, ga);
    if (b.requires_grad()) tp.accumulate(b, gb);
  });
}

Var batch_transpose(const Var& a, Index n, Index m) {
  require(a.cols() == n * m, ErrorCode::kShapeMismatch, "batch_transpose: shapes");
  std::vector<Index> perm(static_cast<std::size_t>(n * m));
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < n; ++j) perm[static_cast<std::size_t>(i * n + j)] = j * m + i;
  return select_cols(a, perm);
}

Var batch_cholesky(const Var& a, Index n, const JitterPolicy& policy) {
  require(a.cols() == n * n, ErrorCode::kShapeMismatch, "batch_cholesky: shapes");
  const Index r = a.rows();
  Matrix v(r, n * n);
  for (Index i = 0; i < r; ++i) {
    const Matrix l = cholesky_jittered(Matrix(row_as_matrix(a.value(), i, n, n)), policy,
                                       nullptr, "batch_cholesky");
    store_row(v, i, l);
  }
  return tape_of(a).record(v, {a}, [a, v, n](Tape& tp, const Matrix& g) {
    Matrix ga(a.rows(), n * n);
    for (Index i = 0; i < a.rows(); ++i) {
      const Matrix l = row_as_matrix(v, i, n, n);
      const Matrix gl = Matrix(row_as_matrix(g, i, n, n)).triangularView<Eigen::Lower>();
      store_row(ga, i, cholesky_backward(l, gl));
    }
    tp.accumulate(a, ga);
  });
}

Var batch_solve_lower(const Var& lower, const Var& rhs, Index n, Index k, bool transpose) {
  Tape& t = tape_of(lower, rhs);
  require(lower.cols() == n * n && rhs.cols() == n * k && lower.rows() == rhs.rows(),
          ErrorCode::kShapeMismatch, "batch_solve_lower: shapes");
  const Index r = lower.rows();
  Matrix v(r, n * k);
  for (Index i = 0; i < r; ++i) {
    const Matrix l = row_as_matrix(lower.value(), i, n, n);
    const Matrix b = row_as_matrix(rhs.value(), i, n, k);
    store_row(v, i, transpose ? srvae::solve_lower_transpose(l, b) : srvae::solve_lower(l, b));
  }
  return t.record(v, {lower, rhs}, [lower, rhs, v, n, k, transpose](Tape& tp, const Matrix& g) {
    const Index r = lower.rows();
    Matrix gl(r, n * n), gr(r, n * k);
    for (Index i = 0; i < r; ++i) {
      const Matrix l = row_as_matrix(lower.value(), i, n, n);
      const Matrix x = row_as_matrix(v, i, n, k);
      const Matrix gi = row_as_matrix(g, i, n, k);
      Matrix rbar, lbar;
      if (!transpose) {
        rbar = srvae::solve_lower_transpose(l, gi);
        lbar = (-rbar * x.transpose()).triangularView<Eigen::Lower>();
      } else {
        rbar = srvae::solve_lower(l, gi);
        lbar = (-x * rbar.transpose()).triangularView<Eigen::Lower>();
      }
      store_row(gr, i, rbar);
      store_row(gl, i, lbar);
    }
    if (rhs.requires_grad()) tp.accumulate(rhs, gr);
    if (lower.requires_grad()) tp.accumulate(lower, gl);
  });
}

Var batch_log_diag_sum(const Var& a, Index n) {
  std::vector<Index> diag(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) diag[static_cast<std::size_t>(i)] = i * n + i;
  return sum_rows(log(select_cols(a, diag)));
}

}  // namespace srvae
