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

#include "srvae/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace srvae {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kNotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorCode::kNonScalarRoot: return "NonScalarRoot";
    case ErrorCode::kMalformedTree: return "MalformedTree";
    case ErrorCode::kStructureMismatch: return "StructureMismatch";
    case ErrorCode::kInfiniteKL: return "InfiniteKL";
    case ErrorCode::kTooLarge: return "TooLarge";
    case ErrorCode::kNegativeCount: return "NegativeCount";
    case ErrorCode::kZeroVariance: return "ZeroVariance";
    case ErrorCode::kIo: return "Io";
    case ErrorCode::kConfig: return "Config";
    case ErrorCode::kNumerical: return "Numerical";
  }
  return "Unknown";
}

namespace {

bool try_cholesky(const Matrix& a, Matrix& out) {
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() != Eigen::Success) return false;
  out = llt.matrixL();
  for (Index i = 0; i < out.rows(); ++i) {
    if (!(out(i, i) > 0.0) || !std::isfinite(out(i, i))) return false;
  }
  return true;
}

}  // namespace

Matrix cholesky(const Matrix& a, const char* what) {
  require(a.rows() == a.cols(), ErrorCode::kShapeMismatch,
          std::string(what) + ": matrix is not square");
  Matrix out;
  if (a.rows() == 0) return Matrix(0, 0);
  if (!try_cholesky(a, out)) {
    fail(ErrorCode::kNotPositiveDefinite, std::string(what) + ": non-positive pivot");
  }
  return out;
}

Matrix cholesky_jittered(const Matrix& a, const JitterPolicy& policy,
                         double* jitter_used, const char* what) {
  require(a.rows() == a.cols(), ErrorCode::kShapeMismatch,
          std::string(what) + ": matrix is not square");
  if (jitter_used) *jitter_used = 0.0;
  if (a.rows() == 0) return Matrix(0, 0);
  Matrix out;
  if (!policy.enabled) {
    if (try_cholesky(a, out)) return out;
    fail(ErrorCode::kNotPositiveDefinite, std::string(what) + ": non-positive pivot");
  }
  const double scale = std::max(std::abs(a.diagonal().mean()), 1e-300);
  for (double rel : {policy.first, policy.retry}) {
    const double jitter = rel * scale;
    Matrix shifted = a;
    shifted.diagonal().array() += jitter;
    if (try_cholesky(shifted, out)) {
      if (jitter_used) *jitter_used = jitter;
      return out;
    }
  }
  fail(ErrorCode::kNotPositiveDefinite,
       std::string(what) + ": non-positive pivot after jitter retry");
}

Matrix cholesky_semidefinite(const Matrix& a, double tol) {
  require(a.rows() == a.cols(), ErrorCode::kShapeMismatch, "cholesky_semidefinite: not square");
  const Index n = a.rows();
  Matrix l = Matrix::Zero(n, n);
  if (n == 0) return l;
  const double cut = tol * std::max(a.diagonal().cwiseAbs().maxCoeff(), 1e-300);
  for (Index j = 0; j < n; ++j) {
    double pivot = a(j, j) - l.row(j).head(j).squaredNorm();
    if (pivot < -std::max(cut, 1e-10))
      fail(ErrorCode::kNotPositiveDefinite, "cholesky_semidefinite: negative pivot");
    if (pivot <= cut) continue;
    l(j, j) = std::sqrt(pivot);
    for (Index i = j + 1; i < n; ++i)
      l(i, j) = (a(i, j) - l.row(i).head(j).dot(l.row(j).head(j))) / l(j, j);
  }
  return l;
}

Matrix solve_lower(const Matrix& lower, const Matrix& rhs) {
  require(lower.rows() == rhs.rows(), ErrorCode::kShapeMismatch, "solve_lower");
  return lower.triangularView<Eigen::Lower>().solve(rhs);
}

Matrix solve_lower_transpose(const Matrix& lower, const Matrix& rhs) {
  require(lower.rows() == rhs.rows(), ErrorCode::kShapeMismatch,
          "solve_lower_transpose");
  return lower.transpose().triangularView<Eigen::Upper>().solve(rhs);
}

Matrix cholesky_solve(const Matrix& lower, const Matrix& rhs) {
  return solve_lower_transpose(lower, solve_lower(lower, rhs));
}

double logdet_from_cholesky(const Matrix& lower) {
  return 2.0 * lower.diagonal().array().log().sum();
}

double gaussian_logpdf(const Vector& x, const Vector& mean, const Matrix& lower) {
  const Vector z = solve_lower(lower, x - mean);
  const double n = static_cast<double>(x.size());
  return -0.5 * z.squaredNorm() - 0.5 * logdet_from_cholesky(lower) -
         0.5 * n * std::log(2.0 * std::numbers::pi);
}

}  // namespace srvae
