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

#ifndef SRVAE_LINALG_HPP_
#define SRVAE_LINALG_HPP_

#include <Eigen/Dense>

#include <vector>

#include "srvae/error.hpp"

namespace srvae {

/// Dense row/column tensors are Eigen matrices of doubles; vectors are n x 1.
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Returns {rows, cols}.
inline std::vector<Index> shape_of(const Matrix& m) { return {m.rows(), m.cols()}; }

/// Diagonal regularisation applied before factorising kernel-derived matrices.
struct JitterPolicy {
  double first = 1e-8;   // relative to mean(diag)
  double retry = 1e-6;   // second attempt, then NotPositiveDefinite
  bool enabled = true;
};

/// Plain lower Cholesky factor. Throws NotPositiveDefinite when a pivot is not
/// strictly positive. `what` names the caller in the error message.
Matrix cholesky(const Matrix& a, const char* what = "cholesky");

/// Cholesky with the jitter policy: try as-is with `first` jitter, then with
/// `retry`. `jitter_used` receives the absolute diagonal increment applied.
Matrix cholesky_jittered(const Matrix& a, const JitterPolicy& policy,
                         double* jitter_used = nullptr,
                         const char* what = "cholesky");

/// Lower factor of a positive semi-definite matrix: pivots below
/// tol * max(diag) zero their column. Throws if a pivot is clearly negative.
Matrix cholesky_semidefinite(const Matrix& a, double tol = 1e-12);

/// Solves L X = B for lower-triangular L.
Matrix solve_lower(const Matrix& lower, const Matrix& rhs);

/// Solves L^T X = B for lower-triangular L.
Matrix solve_lower_transpose(const Matrix& lower, const Matrix& rhs);

/// Solves A X = B given the Cholesky factor of A.
Matrix cholesky_solve(const Matrix& lower, const Matrix& rhs);

/// log|A| = 2 sum log diag(L).
double logdet_from_cholesky(const Matrix& lower);

/// Symmetrises in place: (A + A^T) / 2.
inline Matrix symmetrize(const Matrix& a) { return 0.5 * (a + a.transpose()); }

/// Gaussian log-density of x under N(mean, L L^T).
double gaussian_logpdf(const Vector& x, const Vector& mean, const Matrix& lower);

}  // namespace srvae

#endif  // SRVAE_LINALG_HPP_
