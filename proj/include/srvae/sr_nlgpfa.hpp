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

// Nonlinear GP factor analysis with amortised recognition.
//
// Three posterior families share one generative model
//   f_k ~ GP(0, kappa_k),  h_t = C f(x_t) + d,  y_t ~ p(y | g(h_t)):
//   kStructured  diagonal potentials on h_t, full-covariance q(U)
//   kFactored    potentials on each f_k(x_t), independent q(u_k)
//   kVae         diagonal q(h_t) per time point, N(0, I) prior on h_t
// Training runs on contiguous windows, each with its own uniform inducing grid.

#ifndef SRVAE_SR_NLGPFA_HPP_
#define SRVAE_SR_NLGPFA_HPP_

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "srvae/autodiff.hpp"
#include "srvae/nn.hpp"
#include "srvae/random.hpp"
#include "srvae/serialize.hpp"
#include "srvae/sparse_gp.hpp"
#include "srvae/trace.hpp"

namespace srvae {

enum class Likelihood { kGaussian, kPoisson };
enum class GpfaVariant { kStructured, kFactored, kVae };

Likelihood likelihood_from_string(const std::string& s);
const char* likelihood_name(Likelihood l);
GpfaVariant gpfa_variant_from_string(const std::string& s);
const char* gpfa_variant_name(GpfaVariant v);

/// Floor added to softplus variances and Poisson rates.
inline constexpr double kPositiveFloor = 1e-6;

struct GpfaModelConfig {
  Index obs_dim = 10;
  Index latents = 2;
  Index embedding_dim = 10;
  std::vector<Index> hidden = {50, 50};
  Likelihood likelihood = Likelihood::kGaussian;
  GpfaVariant variant = GpfaVariant::kStructured;
  /// Output nonlinearity of the decoder network (before the Poisson link).
  Activation decoder_output = Activation::kIdentity;
  double init_variance = 1.0;
  double init_lengthscale = 1.0;
  bool train_offset = true;
};

class GpfaModel {
 public:
  GpfaModel() = default;
  GpfaModel(const GpfaModelConfig& config, Rng& rng);

  const GpfaModelConfig& config() const { return config_; }
  Index latents() const { return config_.latents; }
  Index embedding_dim() const { return config_.embedding_dim; }
  Index obs_dim() const { return config_.obs_dim; }

  std::vector<Parameter> log_variance;     // one 1 x 1 per latent
  std::vector<Parameter> log_lengthscale;  // one 1 x 1 per latent
  Parameter mixing;     // C, N x K
  Parameter offset;     // d, 1 x N
  Parameter log_noise;  // Gaussian likelihood log sigma^2
  Mlp recognition;
  Mlp decoder;

  /// Every parameter the free energy depends on.
  std::vector<Parameter*> parameters();
  std::size_t parameter_count();

  /// Plain inducing model for the given inducing locations.
  InducingModel inducing_model(const std::vector<Matrix>& inducing) const;

  Json to_json() const;
  static GpfaModel from_json(const Json& j);

 private:
  GpfaModelConfig config_;
};

/// Uniform grid of `per_latent` points over the input range of `inputs`
/// (first column), shared by all latents.
std::vector<Matrix> window_inducing(const Matrix& inputs, Index latents, Index per_latent);

/// Recognition for a batch of observations (rows). Mean/variance columns are
/// N wide (structured, VAE) or K wide (factored). `inputs` is left empty.
EvidenceBatch recognize(GpfaModel& model, const Matrix& observations);
std::vector<DiagonalGaussianPotential> recognize_list(GpfaModel& model,
                                                      const Matrix& observations);

/// Per-row log-likelihood of y given decoder output g (B x D).
Vector log_likelihood(const Matrix& y, const Matrix& decoder_out, Likelihood kind,
                      double log_noise = 0.0);
/// Same, summed, on the tape.
Var log_likelihood(Tape& tape, const Matrix& y, const Var& decoder_out, Likelihood kind,
                   const Var& log_noise);

struct Window {
  Matrix inputs;        // B x p
  Matrix observations;  // B x D
  std::vector<Matrix> inducing;
};

struct FreeEnergyTerms {
  Var free_energy;
  Var recon;  // averaged over samples
  Var kl;
};

/// Monte-Carlo free energy of one window. Noise is drawn from `rng` up front,
/// so equal generator states give identical graphs.
FreeEnergyTerms free_energy_mc(Tape& tape, GpfaModel& model, const Window& window,
                               Index samples, Rng& rng);

/// Same objective with the inducing locations supplied as tape variables
/// (used for re-inference with trainable locations).
FreeEnergyTerms free_energy_mc(Tape& tape, GpfaModel& model, const Window& window,
                               const std::vector<Var>& inducing, Index samples, Rng& rng);

/// q(U) for one window (block-diagonal for the factored variant).
GaussianDense window_posterior(GpfaModel& model, const Window& window);

struct GpfaTrainConfig {
  double learning_rate = 1e-3;
  Index window = 128;
  Index samples = 1;
  Index epochs = 200;
  Index inducing = 64;
  std::uint64_t seed = 0;
};

/// Splits a series into consecutive windows of the given length (the last
/// window may be shorter) with per-window inducing grids.
std::vector<Window> make_windows(const Matrix& inputs, const Matrix& observations,
                                 Index length, Index latents, Index inducing);

/// Called after each epoch with the epoch index; used for checkpointing.
using EpochCallback = std::function<void(Index epoch, const GpfaModel& model)>;

/// Adam ascent on the free energy over shuffled windows. Trace entries are
/// per-epoch means over windows. If a numerical error occurs, parameters are
/// restored to the last completed epoch and the error is rethrown.
MetricTrace train(GpfaModel& model, const Matrix& inputs, const Matrix& observations,
                  const GpfaTrainConfig& config, const EpochCallback& on_epoch = {});

struct ReinferConfig {
  Index samples = 32;
  std::uint64_t seed = 0;
  bool optimize_inducing = false;
  Index steps = 100;
  double learning_rate = 1e-2;
};

struct ReinferResult {
  GaussianDense posterior;       // q(U') (block-diagonal for factored)
  Matrix latent_means;           // T x K posterior means of f
  Matrix latent_variances;       // T x K
  double free_energy = 0.0;      // MC estimate with the final Z'
  std::vector<Matrix> inducing;  // final Z'
};

/// Full-sequence inference with new inducing locations. Not available for
/// the VAE variant.
ReinferResult reinfer(GpfaModel& model, const Matrix& inputs, const Matrix& observations,
                      const std::vector<Matrix>& inducing, const ReinferConfig& config);

/// Mean over rows of latents (T x K) of |d rate_n / d f_k|^2 at h = C f + d.
double relevance_score(GpfaModel& model, Index latent, Index output, const Matrix& latents);

/// Posterior predictive at target inputs given observed points. The observed
/// series is cut into windows of `window` consecutive points; each target is
/// predicted from the window whose input range contains it, with an inducing
/// grid spanning that window's observed and target inputs. The VAE variant
/// has no evidence at unobserved inputs and predicts from its N(0, I) prior.
struct Prediction {
  Matrix mean;            // targets x D, E[g(h)] (Gaussian) or E[rate] (Poisson)
  Vector log_predictive;  // per target log (1/S) sum_s p(y | h_s)
};
Prediction predict(GpfaModel& model, const Matrix& inputs, const Matrix& observations,
                   const Matrix& target_inputs, const Matrix& target_observations,
                   Index window, Index inducing, Index samples, Rng& rng);

/// Mean over windows of the free-energy estimate with S samples.
double evaluate_free_energy(GpfaModel& model, const Matrix& inputs, const Matrix& observations,
                            Index window, Index inducing, Index samples, std::uint64_t seed);

}  // namespace srvae

#endif  // SRVAE_SR_NLGPFA_HPP_
