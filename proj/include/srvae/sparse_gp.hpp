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

// Inducing-point algebra for GP factor models.
//
// K latent processes f_k with exponentiated-quadratic kernels, each summarised
// by M inducing values u_k at locations z_k. Embeddings h(x) = C f(x) + d.
// U stacks u_1..u_K (dimension K*M) and has the block-diagonal prior
// N(0, K_U). Prior mean functions are zero.
//
// Two routes are provided. The plain functions below work on explicit
// matrices (F(x) = k(x, z) K_zz^{-1}, dense S_U) and are what callers and
// tests use directly. The tape functions further down work in whitened
// coordinates v = blockdiag(L_k)^{-1} U, which is how the training objective
// is differentiated; structured_qU() is implemented on top of them.

#ifndef SRVAE_SPARSE_GP_HPP_
#define SRVAE_SPARSE_GP_HPP_

#include <cmath>
#include <vector>

#include "srvae/autodiff.hpp"
#include "srvae/linalg.hpp"

namespace srvae {

/// Exponentiated-quadratic kernel hyperparameters, stored as logs.
struct KernelParams {
  double log_variance = 0.0;     // log lambda
  double log_lengthscale = 0.0;  // log tau

  static KernelParams from(double variance, double lengthscale) {
    return {std::log(variance), std::log(lengthscale)};
  }
  double variance() const { return std::exp(log_variance); }
  double lengthscale() const { return std::exp(log_lengthscale); }
};

/// lambda * exp(-|x - x'|^2 / tau^2)
double eq_kernel(const Vector& x, const Vector& x2, const KernelParams& params);
/// Kernel matrix between the rows of a (n x p) and b (m x p).
Matrix kernel_matrix(const Matrix& a, const Matrix& b, const KernelParams& params);

struct InducingModel {
  /// One M x p matrix of inducing locations per latent.
  std::vector<Matrix> inducing;
  std::vector<KernelParams> kernels;
  Matrix mixing;   // C, N x K
  Vector offset;   // d, N
  JitterPolicy jitter;

  Index latents() const { return static_cast<Index>(inducing.size()); }
  Index inducing_per_latent() const { return inducing.empty() ? 0 : inducing.front().rows(); }
  Index input_dim() const { return inducing.empty() ? 0 : inducing.front().cols(); }
  Index embedding_dim() const { return mixing.rows(); }
  Index total_inducing() const { return latents() * inducing_per_latent(); }

  /// Throws on inconsistent shapes or non-finite values.
  void validate() const;
};

/// M inducing locations per latent on a uniform 1-D grid over [lo, hi].
std::vector<Matrix> uniform_inducing_grid(Index latents, Index per_latent, double lo, double hi);

struct GaussianDense {
  Vector mean;
  Matrix covariance;
  Matrix chol;  // lower factor of covariance

  /// Factorises `covariance` (jittered per policy).
  static GaussianDense from(Vector mean, Matrix covariance, const JitterPolicy& policy = {});
  Index dim() const { return mean.size(); }
};

/// Diagonal Gaussian evidence on h at one input.
struct DiagonalGaussianPotential {
  Vector mean;
  Vector variance;
};

/// Evidence for T inputs at once: row t holds x_t and the potential at x_t.
struct EvidenceBatch {
  Matrix inputs;    // T x p
  Matrix mean;      // T x N (structured) or T x K (factored)
  Matrix variance;  // same shape as mean, strictly positive

  Index size() const { return inputs.rows(); }
  static EvidenceBatch from_list(
      const std::vector<std::pair<Vector, DiagonalGaussianPotential>>& potentials);
};

struct PosteriorMarginal {
  Vector mean;
  Matrix covariance;
  Matrix chol;
};

/// Block-diagonal prior covariance K_U including jitter (K*M square).
Matrix prior_covariance_U(const InducingModel& model);
GaussianDense prior_U(const InducingModel& model);

/// F_k(x) = k(x, z_k) K_{z_k z_k}^{-1}, 1 x M.
Matrix projector(const Vector& x, Index latent, const InducingModel& model);
/// Block-diagonal F(x), K x (K*M).
Matrix projector_block(const Vector& x, const InducingModel& model);

/// p(h(x) | U): mean C F U + d, covariance C (K_x - F K_U F^T) C^T.
GaussianDense conditional_h(const Vector& x, const Vector& u, const InducingModel& model);

/// Full-covariance q(U) from diagonal evidence on h.
GaussianDense structured_qU(const EvidenceBatch& evidence, const InducingModel& model);

/// Per-latent q(u_k) from evidence on f_k(x_t) (mean/variance columns k).
std::vector<GaussianDense> factored_qU(const EvidenceBatch& evidence,
                                       const InducingModel& model);
/// Joint block-diagonal Gaussian over U from per-latent factors.
GaussianDense block_diagonal(const std::vector<GaussianDense>& factors);

/// q(h(x)) = integral p(h | U) q(U) dU.
PosteriorMarginal posterior_h_marginal(const Vector& x, const GaussianDense& qu,
                                       const InducingModel& model);

/// Per-output marginal mean/variance of h(x) under independent q(u_k).
struct FactoredMarginal {
  Vector mean;
  Vector variance;
};
FactoredMarginal factored_posterior_h(const Vector& x, const std::vector<GaussianDense>& qu,
                                      const InducingModel& model);

/// KL(q || p) between dense Gaussians.
double gaussian_kl(const GaussianDense& q, const GaussianDense& p);

// ---------------------------------------------------------------------------
// Tape route (whitened coordinates).

/// Differentiable handles for the inducing part of the model.
struct TapeInducing {
  std::vector<Var> inducing;    // Z_k, M x p
  std::vector<Var> log_variance;
  std::vector<Var> log_lengthscale;
  std::vector<Var> chol_kzz;    // L_k with L_k L_k^T = K_zz + jitter
};

/// Constant handles for a fixed model.
TapeInducing tape_inducing(Tape& tape, const InducingModel& model);
/// Fills chol_kzz from the other fields (which may be trainable parameters).
void finish_tape_inducing(TapeInducing& inducing, const JitterPolicy& jitter);

/// Kernel projections of a batch of inputs onto each latent's inducing set.
struct TapeProjection {
  std::vector<Var> whitened;  // G_k = k(x, z_k) L_k^{-T}, T x M
  std::vector<Var> prior_var; // k_k(x_t, x_t), T x 1
};

TapeProjection tape_project(Tape& tape, const TapeInducing& inducing, const Var& inputs);

/// q(v) with v the whitened inducing values of the latents in `whitened`.
struct WhitenedPosterior {
  Var mean;       // P x 1
  Var chol;       // L_B, precision factor (precision = I + A^T Psi^{-1} A)
  Var inv_chol;   // L_B^{-1}; covariance = inv_chol^T inv_chol
  Var kl;         // KL(q(U) || p(U)), 1 x 1
  Index latents = 0;
  Index per_latent = 0;
};

/// Combines diagonal evidence (mean, variance: T x N) on h = C f + d with
/// the prior. `whitened` holds G_k for the evidence inputs. With T = 0 the
/// prior is returned.
WhitenedPosterior tape_whitened_posterior(Tape& tape, const std::vector<Var>& whitened,
                                          const Var& mixing, const Var& offset_row,
                                          const Var& mean, const Var& variance);

/// Posterior marginals of f at a batch of inputs: mean T x K and packed
/// covariance T x K^2 (row-major per row).
struct LatentMarginals {
  Var mean;
  Var covariance;
};

LatentMarginals tape_latent_marginals(Tape& tape, const TapeProjection& projection,
                                      const WhitenedPosterior& posterior);

/// Maps whitened q(v) back to q(U): m_U = L_U m_v, S_U = L_U S_v L_U^T.
GaussianDense unwhiten(const WhitenedPosterior& posterior, const TapeInducing& inducing);

}  // namespace srvae

#endif  // SRVAE_SPARSE_GP_HPP_
