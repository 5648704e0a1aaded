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

// Exact inference on tree-structured factor graphs.
//
// Discrete trees run sum-product in log space, either on plain tables or
// row-batched on the tape (each batch row is an independent graph sharing
// the structure). Gaussian trees run scalar message passing on a sparse
// precision matrix.

#ifndef SRVAE_TREE_PGM_HPP_
#define SRVAE_TREE_PGM_HPP_

#include <utility>
#include <vector>

#include "srvae/autodiff.hpp"
#include "srvae/random.hpp"
#include "srvae/serialize.hpp"

namespace srvae {

using Edge = std::pair<Index, Index>;  // (parent, child)

/// Node cardinalities plus an undirected tree given as an edge list. Pairwise
/// tables are stored card(first) x card(second) of each edge.
struct TreeStructure {
  std::vector<Index> cardinalities;
  std::vector<Edge> edges;

  Index nodes() const { return static_cast<Index>(cardinalities.size()); }
  std::vector<Index> degrees() const;
  /// Throws kMalformedTree unless the edges form a spanning tree.
  void validate() const;
  bool operator==(const TreeStructure&) const = default;

  /// Same edges in the same order, each flipped as needed to read
  /// (parent, child) when rooted at `root`.
  TreeStructure oriented(Index root = 0) const;

  /// A chain 0 - 1 - ... - (n-1) of nodes with the given cardinality.
  static TreeStructure chain(Index n, Index cardinality);
};

struct TreeFactorGraph {
  TreeStructure structure;
  std::vector<Vector> log_psi;       // per node
  std::vector<Matrix> log_psi_pair;  // per edge

  void validate() const;
  Json to_json() const;
  static TreeFactorGraph from_json(const Json& j);
  /// All potentials zero (uniform).
  static TreeFactorGraph uniform(const TreeStructure& s);
};

struct Beliefs {
  TreeStructure structure;
  std::vector<Vector> singleton;  // b_i
  std::vector<Matrix> pairwise;   // b_ij, oriented as structure.edges
  double log_z = 0.0;
};

/// Exact marginals and log-partition from one inward/outward pass rooted at
/// `root`.
Beliefs sum_product(const TreeFactorGraph& graph, Index root = 0);

/// Sum_ij KL(b_ij^q || b_ij^p) - sum_i (d_i - 1) KL(b_i^q || b_i^p).
double tree_kl(const Beliefs& q, const Beliefs& p);

/// Log joint of one full assignment: sum of log potentials (unnormalised).
double log_potential(const TreeFactorGraph& graph, const std::vector<Index>& states);

/// 0.5 * (sign(z - 0.5) + 1) elementwise.
Matrix hard_sample(const Matrix& z);

/// Gumbel-softmax ancestral sample from beliefs: the root from b_root, each
/// child from b_ij / b_i given its parent's (relaxed or hard) sample.
std::vector<Vector> ancestral_sample(const Beliefs& beliefs, double temperature, Rng& rng,
                                     bool hard = false, Index root = 0);

// ---------------------------------------------------------------------------
// Row-batched tape route.

struct TapeTreePotentials {
  std::vector<Var> log_psi;       // B x c_i
  std::vector<Var> log_psi_pair;  // B x (c_a c_b), row-major over (a, b)
};

struct TapeBeliefs {
  std::vector<Var> log_singleton;  // B x c_i
  std::vector<Var> log_pairwise;   // B x (c_a c_b)
  Var log_z;                       // B x 1
};

/// Constant potentials of a plain graph, replicated over `rows` rows.
TapeTreePotentials tape_potentials(Tape& tape, const TreeFactorGraph& graph, Index rows = 1);

TapeBeliefs sum_product(const TreeStructure& s, const TapeTreePotentials& potentials,
                        Index root = 0);

/// Per-row tree KL (B x 1). Beliefs must be strictly positive.
Var tree_kl(const TreeStructure& s, const TapeBeliefs& q, const TapeBeliefs& p);

/// Per-row Gumbel-softmax ancestral sample. `noise[i]` is B x c_i standard
/// Gumbel noise. With `hard`, each node's relaxed vector is replaced by its
/// arg-max one-hot on the forward pass (straight-through gradient), and the
/// children condition on the hard value.
std::vector<Var> ancestral_sample(const TreeStructure& s, const TapeBeliefs& beliefs,
                                  const std::vector<Matrix>& noise, double temperature,
                                  bool hard, Index root = 0);

/// Gumbel noise shaped for ancestral_sample.
std::vector<Matrix> tree_gumbel_noise(const TreeStructure& s, Index rows, Rng& rng);

// ---------------------------------------------------------------------------
// Gaussian trees: p(x) proportional to exp(-x^T A x / 2 + b^T x).

/// A stored sparsely: its diagonal and one coupling A_ij per tree edge.
struct GaussianTreeModel {
  Vector diagonal;
  std::vector<Edge> edges;
  Vector coupling;
  Vector linear;  // b

  /// Reads the sparsity pattern (exact nonzeros) of a dense symmetric A.
  static GaussianTreeModel from_dense(const Matrix& precision, const Vector& linear);
  Matrix dense_precision() const;
};

struct GaussianTreeMarginals {
  Vector mean;
  Vector variance;
  std::vector<Edge> edges;              // as in the model
  std::vector<Matrix> pair_covariance;  // 2 x 2 per edge, order (i, j)
};

/// Throws kMalformedTree if the sparsity pattern has a cycle and
/// kNotPositiveDefinite if A is not PD. A forest is accepted.
GaussianTreeMarginals gaussian_tree_vmp(const GaussianTreeModel& model);

}  // namespace srvae

#endif  // SRVAE_TREE_PGM_HPP_
