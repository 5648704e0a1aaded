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

#include "srvae/sparse_gp.hpp"

#include <string>

namespace srvae {

namespace {

Matrix kzz_chol(const InducingModel& model, Index k) {
  const Matrix kzz = kernel_matrix(model.inducing[k], model.inducing[k], model.kernels[k]);
  return cholesky_jittered(kzz, model.jitter, nullptr, "K_zz");
}

Matrix as_row(const Vector& x) { return x.transpose(); }

bool try_plain_cholesky(const Matrix& a, Matrix& out) {
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() != Eigen::Success) return false;
  out = llt.matrixL();
  return (out.diagonal().array() > 0.0).all();
}

}  // namespace

double eq_kernel(const Vector& x, const Vector& x2, const KernelParams& params) {
  require(x.size() == x2.size(), ErrorCode::kShapeMismatch, "eq_kernel: input dims");
  const double tau = params.lengthscale();
  return params.variance() * std::exp(-(x - x2).squaredNorm() / (tau * tau));
}

Matrix kernel_matrix(const Matrix& a, const Matrix& b, const KernelParams& params) {
  require(a.cols() == b.cols(), ErrorCode::kShapeMismatch, "kernel_matrix: input dims");
  Matrix k(a.rows(), b.rows());
  for (Index i = 0; i < a.rows(); ++i)
    for (Index j = 0; j < b.rows(); ++j)
      k(i, j) = eq_kernel(a.row(i).transpose(), b.row(j).transpose(), params);
  return k;
}

void InducingModel::validate() const {
  require(!inducing.empty(), ErrorCode::kInvalidArgument, "model needs at least one latent");
  require(kernels.size() == inducing.size(), ErrorCode::kShapeMismatch,
          "one kernel per latent required");
  const Index m = inducing_per_latent();
  const Index p = input_dim();
  require(m > 0 && p > 0, ErrorCode::kInvalidArgument, "empty inducing set");
  for (const Matrix& z : inducing) {
    require(z.rows() == m && z.cols() == p, ErrorCode::kShapeMismatch,
            "inducing sets must share shape");
    require(z.allFinite(), ErrorCode::kInvalidArgument, "non-finite inducing location");
  }
  for (const KernelParams& kp : kernels)
    require(std::isfinite(kp.log_variance) && std::isfinite(kp.log_lengthscale),
            ErrorCode::kInvalidArgument, "non-finite kernel hyperparameter");
  require(mixing.cols() == latents(), ErrorCode::kShapeMismatch,
          "C has " + std::to_string(mixing.cols()) + " columns for " +
              std::to_string(latents()) + " latents");
  require(offset.size() == mixing.rows(), ErrorCode::kShapeMismatch, "d length != rows of C");
  require(mixing.allFinite() && offset.allFinite(), ErrorCode::kInvalidArgument,
          "non-finite C or d");
}

std::vector<Matrix> uniform_inducing_grid(Index latents, Index per_latent, double lo, double hi) {
  require(latents > 0 && per_latent > 0, ErrorCode::kInvalidArgument, "empty inducing grid");
  Matrix z(per_latent, 1);
  for (Index i = 0; i < per_latent; ++i)
    z(i, 0) = per_latent == 1 ? 0.5 * (lo + hi)
                              : lo + (hi - lo) * static_cast<double>(i) / (per_latent - 1);
  return std::vector<Matrix>(static_cast<std::size_t>(latents), z);
}

GaussianDense GaussianDense::from(Vector mean, Matrix covariance, const JitterPolicy& policy) {
  require(covariance.rows() == mean.size() && covariance.cols() == mean.size(),
          ErrorCode::kShapeMismatch, "Gaussian: covariance shape");
  GaussianDense g;
  g.mean = std::move(mean);
  g.covariance = symmetrize(covariance);
  if (!try_plain_cholesky(g.covariance, g.chol))
    g.chol = cholesky_jittered(g.covariance, policy, nullptr, "Gaussian covariance");
  return g;
}

EvidenceBatch EvidenceBatch::from_list(
    const std::vector<std::pair<Vector, DiagonalGaussianPotential>>& potentials) {
  EvidenceBatch e;
  if (potentials.empty()) return e;
  const Index p = potentials.front().first.size();
  const Index n = potentials.front().second.mean.size();
  const Index t = static_cast<Index>(potentials.size());
  e.inputs.resize(t, p);
  e.mean.resize(t, n);
  e.variance.resize(t, n);
  for (Index i = 0; i < t; ++i) {
    const auto& [x, pot] = potentials[i];
    require(x.size() == p && pot.mean.size() == n && pot.variance.size() == n,
            ErrorCode::kShapeMismatch, "evidence entries must share dimensions");
    e.inputs.row(i) = x.transpose();
    e.mean.row(i) = pot.mean.transpose();
    e.variance.row(i) = pot.variance.transpose();
  }
  return e;
}

Matrix prior_covariance_U(const InducingModel& model) {
  model.validate();
  const Index m = model.inducing_per_latent();
  Matrix ku = Matrix::Zero(model.total_inducing(), model.total_inducing());
  for (Index k = 0; k < model.latents(); ++k) {
    const Matrix l = kzz_chol(model, k);
    ku.block(k * m, k * m, m, m) = l * l.transpose();
  }
  return ku;
}

GaussianDense prior_U(const InducingModel& model) {
  return GaussianDense::from(Vector::Zero(model.total_inducing()), prior_covariance_U(model),
                             model.jitter);
}

Matrix projector(const Vector& x, Index latent, const InducingModel& model) {
  model.validate();
  require(latent >= 0 && latent < model.latents(), ErrorCode::kInvalidArgument,
          "projector: latent index out of range");
  require(x.size() == model.input_dim(), ErrorCode::kShapeMismatch, "projector: input dim");
  const Matrix l = kzz_chol(model, latent);
  const Matrix kzx = kernel_matrix(model.inducing[latent], as_row(x), model.kernels[latent]);
  return cholesky_solve(l, kzx).transpose();
}

Matrix projector_block(const Vector& x, const InducingModel& model) {
  const Index m = model.inducing_per_latent();
  Matrix f = Matrix::Zero(model.latents(), model.total_inducing());
  for (Index k = 0; k < model.latents(); ++k) f.block(k, k * m, 1, m) = projector(x, k, model);
  return f;
}

namespace {

// Prior variance of each f_k at x minus the part explained by u_k: diagonal
// K x K covariance of f(x) | U.
Matrix conditional_f_cov(const Vector& x, const InducingModel& model, const Matrix& f,
                         const Matrix& ku) {
  Matrix cov = -f * ku * f.transpose();
  for (Index k = 0; k < model.latents(); ++k)
    cov(k, k) += eq_kernel(x, x, model.kernels[k]);
  return symmetrize(cov);
}

}  // namespace

GaussianDense conditional_h(const Vector& x, const Vector& u, const InducingModel& model) {
  require(u.size() == model.total_inducing(), ErrorCode::kShapeMismatch,
          "conditional_h: U has wrong length");
  const Matrix f = projector_block(x, model);
  const Matrix ku = prior_covariance_U(model);
  const Matrix cov_f = conditional_f_cov(x, model, f, ku);
  Vector mean = model.mixing * (f * u) + model.offset;
  GaussianDense g;
  g.mean = std::move(mean);
  g.covariance = symmetrize(model.mixing * cov_f * model.mixing.transpose());
  // Rank K <= N and zero at inducing points, so the factor may be singular.
  g.chol = cholesky_semidefinite(g.covariance, 1e-10);
  return g;
}

namespace {

void check_evidence(const EvidenceBatch& e, Index width, const InducingModel& model) {
  require(e.mean.rows() == e.size() && e.variance.rows() == e.size(),
          ErrorCode::kShapeMismatch, "evidence rows disagree");
  if (e.size() == 0) return;
  require(e.inputs.cols() == model.input_dim(), ErrorCode::kShapeMismatch,
          "evidence input dimension");
  require(e.mean.cols() == width && e.variance.cols() == width, ErrorCode::kShapeMismatch,
          "evidence has " + std::to_string(e.mean.cols()) + " columns, expected " +
              std::to_string(width));
  require(e.mean.allFinite() && e.variance.allFinite(), ErrorCode::kInvalidArgument,
          "non-finite evidence");
  require((e.variance.array() > 0.0).all(), ErrorCode::kZeroVariance,
          "evidence variances must be strictly positive");
}

}  // namespace

GaussianDense structured_qU(const EvidenceBatch& evidence, const InducingModel& model) {
  model.validate();
  check_evidence(evidence, model.embedding_dim(), model);
  Tape tape;
  const TapeInducing ind = tape_inducing(tape, model);
  std::vector<Var> g;
  if (evidence.size() > 0) g = tape_project(tape, ind, tape.constant(evidence.inputs)).whitened;
  else
    for (Index k = 0; k < model.latents(); ++k)
      g.push_back(tape.constant(Matrix(0, model.inducing_per_latent())));
  const WhitenedPosterior post = tape_whitened_posterior(
      tape, g, tape.constant(model.mixing), tape.constant(as_row(model.offset)),
      tape.constant(evidence.mean), tape.constant(evidence.variance));
  return unwhiten(post, ind);
}

std::vector<GaussianDense> factored_qU(const EvidenceBatch& evidence,
                                       const InducingModel& model) {
  model.validate();
  check_evidence(evidence, model.latents(), model);
  Tape tape;
  const TapeInducing ind = tape_inducing(tape, model);
  const Index m = model.inducing_per_latent();
  std::vector<Var> g;
  if (evidence.size() > 0) g = tape_project(tape, ind, tape.constant(evidence.inputs)).whitened;
  std::vector<GaussianDense> out;
  const Var one = tape.constant(Matrix::Ones(1, 1));
  const Var zero = tape.constant(Matrix::Zero(1, 1));
  for (Index k = 0; k < model.latents(); ++k) {
    const Var gk = evidence.size() > 0 ? g[k] : tape.constant(Matrix(0, m));
    const WhitenedPosterior post = tape_whitened_posterior(
        tape, {gk}, one, zero, tape.constant(evidence.mean.col(k)),
        tape.constant(evidence.variance.col(k)));
    TapeInducing single;
    single.chol_kzz = {ind.chol_kzz[k]};
    out.push_back(unwhiten(post, single));
  }
  return out;
}

GaussianDense block_diagonal(const std::vector<GaussianDense>& factors) {
  Index total = 0;
  for (const GaussianDense& f : factors) total += f.dim();
  GaussianDense g;
  g.mean = Vector::Zero(total);
  g.covariance = Matrix::Zero(total, total);
  g.chol = Matrix::Zero(total, total);
  Index at = 0;
  for (const GaussianDense& f : factors) {
    const Index n = f.dim();
    g.mean.segment(at, n) = f.mean;
    g.covariance.block(at, at, n, n) = f.covariance;
    g.chol.block(at, at, n, n) = f.chol;
    at += n;
  }
  return g;
}

PosteriorMarginal posterior_h_marginal(const Vector& x, const GaussianDense& qu,
                                       const InducingModel& model) {
  require(qu.dim() == model.total_inducing(), ErrorCode::kShapeMismatch,
          "posterior_h_marginal: q(U) dimension");
  const Matrix f = projector_block(x, model);
  const Matrix ku = prior_covariance_U(model);
  const Matrix cov_f = conditional_f_cov(x, model, f, ku) + f * qu.covariance * f.transpose();
  PosteriorMarginal out;
  out.mean = model.mixing * (f * qu.mean) + model.offset;
  out.covariance = symmetrize(model.mixing * cov_f * model.mixing.transpose());
  out.chol = cholesky_jittered(out.covariance, model.jitter, nullptr, "q(h) covariance");
  return out;
}

FactoredMarginal factored_posterior_h(const Vector& x, const std::vector<GaussianDense>& qu,
                                      const InducingModel& model) {
  require(static_cast<Index>(qu.size()) == model.latents(), ErrorCode::kShapeMismatch,
          "factored_posterior_h: one factor per latent required");
  const Index k_count = model.latents();
  Vector mean_f(k_count), var_f(k_count);
  for (Index k = 0; k < k_count; ++k) {
    require(qu[k].dim() == model.inducing_per_latent(), ErrorCode::kShapeMismatch,
            "factored_posterior_h: factor dimension");
    const Matrix fk = projector(x, k, model);
    const Matrix l = kzz_chol(model, k);
    const Matrix kzz = l * l.transpose();
    mean_f(k) = (fk * qu[k].mean)(0, 0);
    var_f(k) = eq_kernel(x, x, model.kernels[k]) +
               (fk * (qu[k].covariance - kzz) * fk.transpose())(0, 0);
  }
  FactoredMarginal out;
  out.mean = model.mixing * mean_f + model.offset;
  out.variance = model.mixing.array().square().matrix() * var_f;
  return out;
}

double gaussian_kl(const GaussianDense& q, const GaussianDense& p) {
  require(q.dim() == p.dim(), ErrorCode::kShapeMismatch, "gaussian_kl: dimensions differ");
  const Index n = q.dim();
  const Matrix a = solve_lower(p.chol, q.chol);
  const Vector diff = solve_lower(p.chol, p.mean - q.mean);
  const double logdet_q = logdet_from_cholesky(q.chol);
  if (!std::isfinite(logdet_q))
    fail(ErrorCode::kInfiniteKL, "gaussian_kl: q has a singular covariance");
  const double kl = 0.5 * (a.squaredNorm() + diff.squaredNorm() - static_cast<double>(n) +
                           logdet_from_cholesky(p.chol) - logdet_q);
  if (!std::isfinite(kl)) fail(ErrorCode::kInfiniteKL, "gaussian_kl: non-finite result");
  return kl;
}

// ---------------------------------------------------------------------------
// Tape route

TapeInducing tape_inducing(Tape& tape, const InducingModel& model) {
  model.validate();
  TapeInducing out;
  for (Index k = 0; k < model.latents(); ++k) {
    out.inducing.push_back(tape.constant(model.inducing[k]));
    out.log_variance.push_back(tape.constant(Matrix::Constant(1, 1, model.kernels[k].log_variance)));
    out.log_lengthscale.push_back(
        tape.constant(Matrix::Constant(1, 1, model.kernels[k].log_lengthscale)));
  }
  finish_tape_inducing(out, model.jitter);
  return out;
}

void finish_tape_inducing(TapeInducing& inducing, const JitterPolicy& jitter) {
  inducing.chol_kzz.clear();
  for (std::size_t k = 0; k < inducing.inducing.size(); ++k) {
    const Var& z = inducing.inducing[k];
    inducing.chol_kzz.push_back(cholesky(
        eq_kernel(z, z, inducing.log_variance[k], inducing.log_lengthscale[k]), jitter));
  }
}

TapeProjection tape_project(Tape& tape, const TapeInducing& inducing, const Var& inputs) {
  TapeProjection out;
  const Var ones = tape.constant(Matrix::Ones(inputs.rows(), 1));
  for (std::size_t k = 0; k < inducing.inducing.size(); ++k) {
    const Var kzx = eq_kernel(inducing.inducing[k], inputs, inducing.log_variance[k],
                              inducing.log_lengthscale[k]);
    out.whitened.push_back(transpose(solve_lower(inducing.chol_kzz[k], kzx)));
    out.prior_var.push_back(matmul(ones, exp(inducing.log_variance[k])));
  }
  return out;
}

WhitenedPosterior tape_whitened_posterior(Tape& tape, const std::vector<Var>& whitened,
                                          const Var& mixing, const Var& offset_row,
                                          const Var& mean, const Var& variance) {
  const Index k_count = static_cast<Index>(whitened.size());
  require(k_count > 0, ErrorCode::kInvalidArgument, "posterior needs at least one latent");
  require(mixing.cols() == k_count, ErrorCode::kShapeMismatch, "C columns != latents");
  const Index m = whitened.front().cols();
  const Index p = k_count * m;
  const Index t = whitened.front().rows();
  WhitenedPosterior out;
  out.latents = k_count;
  out.per_latent = m;
  const Var eye = tape.constant(Matrix::Identity(p, p));
  if (t == 0) {
    out.mean = tape.constant(Matrix::Zero(p, 1));
    out.chol = eye;
    out.inv_chol = eye;
    out.kl = tape.constant(Matrix::Zero(1, 1));
    return out;
  }
  require(mean.rows() == t && variance.rows() == t && mean.cols() == mixing.rows() &&
              variance.cols() == mixing.rows() && offset_row.cols() == mixing.rows(),
          ErrorCode::kShapeMismatch, "posterior evidence shapes");

  const Var inv_psi = div(tape.constant(Matrix::Ones(t, mixing.rows())), variance);
  const Var resid = mul(sub(mean, offset_row), inv_psi);
  const Var r = matmul(resid, mixing);  // T x K

  std::vector<Var> cols(static_cast<std::size_t>(k_count));
  for (Index k = 0; k < k_count; ++k) cols[k] = col_range(mixing, k, 1);
  std::vector<std::vector<Var>> blocks(k_count, std::vector<Var>(k_count));
  for (Index k = 0; k < k_count; ++k) {
    for (Index j = k; j < k_count; ++j) {
      const Var w = matmul(inv_psi, mul(cols[k], cols[j]));  // T x 1
      blocks[k][j] = matmul(transpose(mul(whitened[k], w)), whitened[j]);
      if (j != k) blocks[j][k] = transpose(blocks[k][j]);
    }
  }
  std::vector<Var> rows;
  for (Index k = 0; k < k_count; ++k) rows.push_back(hcat(blocks[k]));
  const Var precision = add(vcat(rows), eye);
  JitterPolicy exact;
  exact.enabled = false;
  out.chol = cholesky(precision, exact);

  std::vector<Var> rhs_parts;
  for (Index k = 0; k < k_count; ++k)
    rhs_parts.push_back(matmul(transpose(whitened[k]), col_range(r, k, 1)));
  const Var rhs = vcat(rhs_parts);
  out.mean = solve_lower(out.chol, solve_lower(out.chol, rhs), true);
  out.inv_chol = solve_lower(out.chol, eye);
  const Var logdet = sum(log(diag_part(out.chol)));
  out.kl = scale(add_scalar(add(add(sum(square(out.inv_chol)), sum(square(out.mean))),
                                scale(logdet, 2.0)),
                            -static_cast<double>(p)),
                 0.5);
  return out;
}

LatentMarginals tape_latent_marginals(Tape& tape, const TapeProjection& projection,
                                      const WhitenedPosterior& posterior) {
  (void)tape;
  const Index k_count = posterior.latents;
  const Index m = posterior.per_latent;
  require(static_cast<Index>(projection.whitened.size()) == k_count, ErrorCode::kShapeMismatch,
          "latent marginals: projection/posterior latent count");
  std::vector<Var> e(k_count), means(k_count);
  for (Index k = 0; k < k_count; ++k) {
    const Var& g = projection.whitened[k];
    e[k] = matmul(g, transpose(col_range(posterior.inv_chol, k * m, m)));
    means[k] = matmul(g, row_range(posterior.mean, k * m, m));
  }
  std::vector<Var> packed(static_cast<std::size_t>(k_count * k_count));
  for (Index k = 0; k < k_count; ++k) {
    for (Index j = k; j < k_count; ++j) {
      Var c = sum_rows(mul(e[k], e[j]));
      if (j == k) c = add(c, sub(projection.prior_var[k], sum_rows(square(projection.whitened[k]))));
      packed[k * k_count + j] = c;
      packed[j * k_count + k] = c;
    }
  }
  return {hcat(means), hcat(packed)};
}

GaussianDense unwhiten(const WhitenedPosterior& posterior, const TapeInducing& inducing) {
  const Index k_count = posterior.latents;
  const Index m = posterior.per_latent;
  require(static_cast<Index>(inducing.chol_kzz.size()) == k_count, ErrorCode::kShapeMismatch,
          "unwhiten: latent count");
  Matrix lu = Matrix::Zero(k_count * m, k_count * m);
  for (Index k = 0; k < k_count; ++k) lu.block(k * m, k * m, m, m) = inducing.chol_kzz[k].value();
  const Matrix v = posterior.inv_chol.value();
  const Matrix root = lu * v.transpose();  // S_U = root root^T
  Vector mean = lu * posterior.mean.value();
  return GaussianDense::from(std::move(mean), root * root.transpose());
}

}  // namespace srvae
