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

// Gaussian-mixture latent prior with a full-covariance Gaussian recognition
// potential per data point. The mixture posterior
//   q(z = j) ~ pi_j N(m_r; mu_j, Sigma_j + Sigma_r),
//   q(h | z = j) ~ N(h; mu_j, Sigma_j) N(h; m_r, Sigma_r)
// is exact and computed in closed form. The kVae variant replaces the
// mixture with N(0, I) and the potential with a diagonal posterior.

#ifndef SRVAE_GMM_SRVAE_HPP_
#define SRVAE_GMM_SRVAE_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "srvae/nn.hpp"
#include "srvae/serialize.hpp"
#include "srvae/trace.hpp"

namespace srvae {

enum class GmmVariant { kGmm, kVae };

GmmVariant gmm_variant_from_string(const std::string& s);
const char* gmm_variant_name(GmmVariant v);

struct GmmPrior {
  Vector weights;  // pi
  std::vector<Vector> means;
  std::vector<Matrix> covariances;

  Index components() const { return weights.size(); }
};

struct MixturePosterior {
  Vector responsibilities;
  Vector log_evidence;  // log N(m_r; mu_j, Sigma_j + Sigma_r) per component
  std::vector<Vector> means;
  std::vector<Matrix> covariances;
};

/// Exact mixture posterior for one Gaussian potential N(h; m_r, Sigma_r).
MixturePosterior combine_gmm(const GmmPrior& prior, const Vector& potential_mean,
                             const Matrix& potential_covariance);

/// KL(q(z, h) || p(z, h)): categorical KL plus responsibility-weighted
/// Gaussian KLs.
struct MixtureKL {
  double categorical = 0.0;
  double gaussian = 0.0;  // sum_j q(z = j) KL(q(h | j) || p(h | j))
  double total() const { return categorical + gaussian; }
};
MixtureKL mixture_kl(const MixturePosterior& q, const GmmPrior& p);

/// KL(N(m0, S0) || N(m1, S1)).
double gaussian_kl_dense(const Vector& m0, const Matrix& s0, const Vector& m1, const Matrix& s1);

struct GmmModelConfig {
  Index obs_dim = 2;
  Index latent_dim = 2;
  Index components = 10;
  std::vector<Index> hidden = {50, 50};
  GmmVariant variant = GmmVariant::kGmm;
  double initial_output_variance = 0.01;  // decoder variance at initialisation
};

class GmmSrvaeModel {
 public:
  GmmSrvaeModel() = default;
  GmmSrvaeModel(const GmmModelConfig& config, Rng& rng);

  const GmmModelConfig& config() const { return config_; }
  Index latent_dim() const { return config_.latent_dim; }
  Index obs_dim() const { return config_.obs_dim; }
  Index components() const { return config_.variant == GmmVariant::kGmm ? config_.components : 0; }

  // Mixture prior. Covariance factors are packed lower triangles (row-major)
  // with softplus on the diagonal.
  Parameter logits;    // 1 x J
  Parameter means;     // J x N
  Parameter chol_raw;  // J x N(N+1)/2
  Mlp recognition;     // y -> potential mean and packed factor (kGmm) or mean and std (kVae)
  Mlp decoder;         // h -> output mean and softplus variance

  std::vector<Parameter*> parameters();
  std::size_t parameter_count();

  GmmPrior prior() const;

  Json to_json() const;
  static GmmSrvaeModel from_json(const Json& j);

 private:
  GmmModelConfig config_;
};

struct GmmFreeEnergy {
  Var free_energy;  // mean over points
  Var recon;
  Var kl;
};

/// Reparameterised free energy with S samples per component (GMM) or per
/// point (VAE). `noise` holds S blocks of (J B) x N (GMM) or B x N (VAE)
/// standard normals; the rng overload draws them.
GmmFreeEnergy gmm_free_energy(Tape& tape, GmmSrvaeModel& model, const Matrix& y,
                              const std::vector<Matrix>& noise);
GmmFreeEnergy gmm_free_energy(Tape& tape, GmmSrvaeModel& model, const Matrix& y, Index samples,
                              Rng& rng);

/// Recognition potentials for a batch (rows): means and full covariances.
void recognition_potentials(GmmSrvaeModel& model, const Matrix& y, std::vector<Vector>& means,
                            std::vector<Matrix>& covariances);

/// Ancestral samples z ~ pi, h ~ N(mu_z, Sigma_z), y from the decoder (its
/// mean, plus Gaussian noise when `with_noise`).
Matrix generate(GmmSrvaeModel& model, Index n, Rng& rng, bool with_noise = true);

struct GmmTrainConfig {
  double learning_rate = 1e-3;
  Index batch = 256;
  Index epochs = 100;
  Index samples = 1;
  Index kl_warmup_epochs = 0;  // KL weight ramps linearly to 1 over these epochs
  std::uint64_t seed = 0;
};

MetricTrace train(GmmSrvaeModel& model, const Matrix& data, const GmmTrainConfig& config);

/// Mean free energy per point with `samples` reparameterised samples.
double evaluate_free_energy(GmmSrvaeModel& model, const Matrix& data, Index samples,
                            std::uint64_t seed);

}  // namespace srvae

#endif  // SRVAE_GMM_SRVAE_HPP_
