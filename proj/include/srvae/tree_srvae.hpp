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

// Discrete latent trees with amortised tree-structured recognition.
//
//   kTree  tree prior, recognition emits singleton and pairwise potentials
//   kSvae  tree prior, singleton potentials only
//   kVae   factorised prior, singleton potentials only
//
// q is the prior graph combined with the recognition potentials; the free
// energy uses Gumbel-softmax ancestral samples from q and the exact tree KL.

#ifndef SRVAE_TREE_SRVAE_HPP_
#define SRVAE_TREE_SRVAE_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "srvae/nn.hpp"
#include "srvae/trace.hpp"
#include "srvae/tree_pgm.hpp"

namespace srvae {

enum class TreeVariant { kTree, kSvae, kVae };

TreeVariant tree_variant_from_string(const std::string& s);
const char* tree_variant_name(TreeVariant v);

struct TreeModelConfig {
  TreeStructure structure = TreeStructure::chain(16, 2);
  Index pixels = 64;
  std::vector<Index> recognition_hidden = {50, 50};
  /// Empty gives an affine decoder.
  std::vector<Index> decoder_hidden = {50, 50};
  TreeVariant variant = TreeVariant::kTree;
};

class TreeSrvaeModel {
 public:
  TreeSrvaeModel() = default;
  TreeSrvaeModel(const TreeModelConfig& config, Rng& rng);

  const TreeModelConfig& config() const { return config_; }
  /// The configured tree with every edge read (parent, child) from node 0.
  const TreeStructure& structure() const { return config_.structure; }
  TreeVariant variant() const { return config_.variant; }
  /// Decoder input width: sum over nodes of (cardinality - 1).
  Index latent_dim() const;
  /// Recognition output width.
  Index recognition_width() const;

  // Prior: softmax(node_logits) at the root (every node for kVae) and
  // softmax over the child of each row of edge_logits (kTree, kSvae).
  std::vector<Parameter> node_logits;  // 1 x c_i
  std::vector<Parameter> edge_logits;  // 1 x (c_parent c_child), row-major
  Mlp recognition;
  Mlp decoder;  // outputs Bernoulli logits

  std::vector<Parameter*> parameters();
  std::size_t parameter_count();
  std::size_t decoder_parameter_count() const { return decoder.parameter_count(); }

  /// Plain prior graph (normalised tables as log potentials).
  TreeFactorGraph prior_graph() const;
  /// Prior log potentials on the tape (one row, trainable).
  TapeTreePotentials prior(Tape& tape);
  /// Recognition potentials for a batch of images (B rows).
  TapeTreePotentials recognize(Tape& tape, const Matrix& images);
  /// Bernoulli logits from per-node (relaxed) one-hot samples.
  Var decode(Tape& tape, const std::vector<Var>& samples);
  /// Decoder input rows for per-node states.
  Matrix encode_states(const std::vector<std::vector<Index>>& states) const;

  Json to_json() const;
  static TreeSrvaeModel from_json(const Json& j);

 private:
  TreeModelConfig config_;
};

/// log psi' = log psi + log xi, node- and edge-wise (rows broadcast).
TapeTreePotentials combine(const TapeTreePotentials& prior, const TapeTreePotentials& xi);
TreeFactorGraph combine(const TreeFactorGraph& prior, const TreeFactorGraph& xi);

/// Per-row Bernoulli log-likelihood sum_d y log s(l) + (1 - y) log s(-l).
Var bernoulli_log_likelihood(Tape& tape, const Matrix& y, const Var& logits);

struct TreeFreeEnergy {
  Var free_energy;  // mean over images
  Var recon;
  Var kl;
};

/// One-sample free energy per image with the given Gumbel noise.
TreeFreeEnergy tree_free_energy(Tape& tape, TreeSrvaeModel& model, const Matrix& images,
                                const std::vector<Matrix>& noise, double temperature, bool hard);
TreeFreeEnergy tree_free_energy(Tape& tape, TreeSrvaeModel& model, const Matrix& images,
                                double temperature, bool hard, Rng& rng);

/// Exact free energy of q = prior x xi for one image by enumerating every
/// joint state. Generative parts are constants; xi (one row) may carry
/// gradients.
Var exact_free_energy(Tape& tape, TreeSrvaeModel& model, const Vector& image,
                      const TapeTreePotentials& xi);

/// Maximises exact_free_energy over directly parameterised potentials with
/// Adam, starting from zero (or from `start`). Returns the best value seen and
/// writes the potentials that achieved it.
struct PotentialFit {
  double free_energy = 0.0;
  TreeFactorGraph potentials;
};
PotentialFit fit_potentials(TreeSrvaeModel& model, const Vector& image, bool pairwise,
                            Index steps = 2000, double learning_rate = 0.05,
                            const TreeFactorGraph* start = nullptr);

inline constexpr Index kMaxEnumeratedStates = Index{1} << 20;

struct ExactPosterior {
  std::vector<Index> cardinalities;
  Vector prior;  // p(z), states mixed-radix with node 0 fastest
  Vector joint;  // p(z | y)
  std::vector<Vector> marginals;
  double log_evidence = 0.0;
  /// KL(p(z | y) || best tree approximation on the model's structure).
  double tree_gap = 0.0;
};

/// Enumerates p(z | y) over all joint states; kTooLarge above 2^20 states.
ExactPosterior exact_posterior(TreeSrvaeModel& model, const Vector& image);

/// All joint states, node 0 fastest.
std::vector<std::vector<Index>> enumerate_states(const std::vector<Index>& cardinalities);

/// Mutual information between nodes i and j of a joint table over states.
double mutual_information(const Vector& joint, const std::vector<Index>& cardinalities, Index i,
                          Index j);

struct TreeTrainConfig {
  double learning_rate = 5e-4;
  Index batch = 256;
  Index epochs = 100;
  double temperature = 0.5;
  bool hard = true;
  std::uint64_t seed = 0;
};

/// Adam ascent over shuffled minibatches. Parameters are restored to the last
/// completed epoch if a numerical error occurs.
MetricTrace train(TreeSrvaeModel& model, const Matrix& images, const TreeTrainConfig& config);

/// Mean free energy per image with exact discrete samples (hard ancestral
/// sampling), averaged over `samples` draws.
double evaluate_free_energy(TreeSrvaeModel& model, const Matrix& images, Index samples,
                            std::uint64_t seed);

}  // namespace srvae

#endif  // SRVAE_TREE_SRVAE_HPP_
