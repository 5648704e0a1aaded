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

// Define-by-run reverse-mode differentiation over dense matrices.
//
// A Tape owns every intermediate value. Nodes are appended in evaluation
// order, so the node index is already a topological order and backward()
// walks it in reverse. Nodes whose inputs carry no gradient are stored as
// constants and never visited.

#ifndef SRVAE_AUTODIFF_HPP_
#define SRVAE_AUTODIFF_HPP_

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <string>
#include <vector>

#include "srvae/linalg.hpp"

namespace srvae {

/// A trainable leaf: value, gradient slot and Adam moment accumulators.
struct Parameter {
  Parameter() = default;
  Parameter(std::string name_, Matrix init)
      : name(std::move(name_)),
        value(std::move(init)),
        grad(Matrix::Zero(value.rows(), value.cols())),
        first_moment(Matrix::Zero(value.rows(), value.cols())),
        second_moment(Matrix::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(); }

  std::string name;
  Matrix value;
  Matrix grad;
  Matrix first_moment;
  Matrix second_moment;
  long step = 0;
  bool trainable = true;
};

class Tape;

/// Handle to a tape node. Cheap to copy; only valid while its tape lives.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
  bool requires_grad() const;

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using Backprop = std::function<void(Tape&, const Matrix& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  /// A differentiable input whose gradient is read back with grad().
  Var variable(Matrix value);
  /// Binds a Parameter; backward() adds into parameter.grad.
  Var parameter(Parameter& param);

  /// Appends an op result. The backprop closure is kept only if some parent
  /// requires a gradient.
  Var record(Matrix value, std::initializer_list<Var> parents, Backprop backprop);
  Var record(Matrix value, const std::vector<Var>& parents, Backprop backprop);

  /// Reverse sweep from a 1x1 root. Node gradients are reset on entry;
  /// Parameter gradients accumulate across calls.
  void backward(const Var& root);

  /// Gradient of the last backward() w.r.t. v (zeros if none reached it).
  Matrix grad(const Var& v) const;

  void accumulate(const Var& v, const Matrix& g);

  const Matrix& value(const Var& v) const { return nodes_[v.id_].value; }
  bool requires_grad(const Var& v) const { return nodes_[v.id_].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Backprop backprop;
    Parameter* param = nullptr;
    bool requires_grad = false;
    bool has_grad = false;
  };

  Var push(Node node);

  std::vector<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape_->value(*this); }
inline bool Var::requires_grad() const { return tape_->requires_grad(*this); }

// ---------------------------------------------------------------------------
// Ops. Elementwise binary ops broadcast numpy-style over 2-D shapes
// (a dimension of 1 stretches to match).

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var neg(const Var& a);
Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }
inline Var operator-(const Var& a) { return neg(a); }
inline Var operator*(double c, const Var& a) { return scale(a, c); }
inline Var operator*(const Var& a, double c) { return scale(a, c); }
inline Var operator+(const Var& a, double c) { return add_scalar(a, c); }
inline Var operator-(const Var& a, double c) { return add_scalar(a, -c); }

Var exp(const Var& a);
Var log(const Var& a);
Var sqrt(const Var& a);
Var square(const Var& a);
Var softplus(const Var& a);
Var sigmoid(const Var& a);
Var log_sigmoid(const Var& a);
/// Subgradient at 0 is 0.
Var relu(const Var& a);

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);

Var sum(const Var& a);        // -> 1x1
Var sum_rows(const Var& a);   // sum over columns -> r x 1
Var sum_cols(const Var& a);   // sum over rows -> 1 x c

Var block(const Var& a, Index row, Index col, Index rows, Index cols);
inline Var col_range(const Var& a, Index col, Index cols) {
  return block(a, 0, col, a.rows(), cols);
}
inline Var row_range(const Var& a, Index row, Index rows) {
  return block(a, row, 0, rows, a.cols());
}
Var select_cols(const Var& a, const std::vector<Index>& cols);
Var vcat(const std::vector<Var>& parts);
Var hcat(const std::vector<Var>& parts);
/// Row-major reshape.
Var reshape(const Var& a, Index rows, Index cols);
/// Tiles a 1 x c row into r identical rows.
Var repeat_rows(const Var& a, Index rows);

/// Lower Cholesky factor of a symmetric PD matrix (jitter per policy). The
/// gradient is returned symmetrised.
Var cholesky(const Var& a, const JitterPolicy& policy = {});
/// Solves L X = B (transpose=false) or L^T X = B (transpose=true).
Var solve_lower(const Var& lower, const Var& rhs, bool transpose = false);
Var diag_part(const Var& a);  // -> n x 1

/// For each group g, out(:, g) = log sum_{c in group g} exp(a(:, c)).
Var logsumexp_groups(const Var& a, const std::vector<std::vector<Index>>& groups);
Var logsumexp_rows(const Var& a);  // -> r x 1

/// Exponentiated-quadratic kernel matrix
/// k(x, x') = exp(log_lambda) * exp(-|x - x'|^2 / exp(log_tau)^2)
/// between rows of x1 (n x p) and x2 (m x p).
Var eq_kernel(const Var& x1, const Var& x2, const Var& log_lambda, const Var& log_tau);

// Row-batched small matrices: every row stores an n x m matrix row-major.

/// Per-row product of (n x m) and (m x p) matrices.
Var batch_matmul(const Var& a, const Var& b, Index n, Index m, Index p);
/// Per-row transpose of an n x m matrix.
Var batch_transpose(const Var& a, Index n, Index m);
/// Per-row Cholesky of n x n symmetric PD matrices.
Var batch_cholesky(const Var& a, Index n, const JitterPolicy& policy = {});
/// Per-row solve L X = B (or L^T X = B), B is n x k.
Var batch_solve_lower(const Var& lower, const Var& rhs, Index n, Index k,
                      bool transpose = false);
/// Per-row sum of log of the diagonal of an n x n matrix -> r x 1.
Var batch_log_diag_sum(const Var& a, Index n);

/// Forward: 0.5 * (sign(z - 0.5) + 1); gradient passes straight through.
Var hard_threshold_st(const Var& z);

}  // namespace srvae

#endif  // SRVAE_AUTODIFF_HPP_
