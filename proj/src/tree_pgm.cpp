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

#include "srvae/tree_pgm.hpp"

#include <cmath>
#include <limits>
#include <numeric>

namespace srvae {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Tree oriented away from a root.
struct Rooted {
  std::vector<Index> order;  // breadth-first, root first
  std::vector<Index> parent;
  std::vector<Index> parent_edge;
  std::vector<bool> flipped;  // edge stored as (child, parent)
  std::vector<std::vector<Index>> children;
};

Rooted orient(const TreeStructure& s, Index root) {
  s.validate();
  const Index n = s.nodes();
  require(root >= 0 && root < n, ErrorCode::kInvalidArgument, "tree root out of range");
  std::vector<std::vector<std::pair<Index, Index>>> adj(static_cast<std::size_t>(n));
  for (std::size_t e = 0; e < s.edges.size(); ++e) {
    adj[s.edges[e].first].push_back({s.edges[e].second, static_cast<Index>(e)});
    adj[s.edges[e].second].push_back({s.edges[e].first, static_cast<Index>(e)});
  }
  Rooted r;
  r.parent.assign(n, -1);
  r.parent_edge.assign(n, -1);
  r.flipped.assign(n, false);
  r.children.resize(n);
  std::vector<bool> seen(n, false);
  r.order.push_back(root);
  seen[root] = true;
  for (std::size_t head = 0; head < r.order.size(); ++head) {
    const Index u = r.order[head];
    for (const auto& [v, e] : adj[u]) {
      if (seen[v]) continue;
      seen[v] = true;
      r.parent[v] = u;
      r.parent_edge[v] = e;
      r.flipped[v] = s.edges[e].first != u;
      r.children[u].push_back(v);
      r.order.push_back(v);
    }
  }
  return r;
}

// Column maps for row-major (a, b) tables with a in [0, ca), b in [0, cb).
std::vector<Index> transpose_cols(Index ca, Index cb) {
  std::vector<Index> idx(static_cast<std::size_t>(ca * cb));
  for (Index a = 0; a < ca; ++a)
    for (Index b = 0; b < cb; ++b) idx[b * ca + a] = a * cb + b;
  return idx;
}

std::vector<Index> tile_second(Index ca, Index cb) {
  std::vector<Index> idx(static_cast<std::size_t>(ca * cb));
  for (Index a = 0; a < ca; ++a)
    for (Index b = 0; b < cb; ++b) idx[a * cb + b] = b;
  return idx;
}

std::vector<Index> tile_first(Index ca, Index cb) {
  std::vector<Index> idx(static_cast<std::size_t>(ca * cb));
  for (Index a = 0; a < ca; ++a)
    for (Index b = 0; b < cb; ++b) idx[a * cb + b] = a;
  return idx;
}

std::vector<std::vector<Index>> groups_over_second(Index ca, Index cb) {
  std::vector<std::vector<Index>> g(static_cast<std::size_t>(ca));
  for (Index a = 0; a < ca; ++a)
    for (Index b = 0; b < cb; ++b) g[a].push_back(a * cb + b);
  return g;
}

std::vector<std::vector<Index>> groups_over_first(Index ca, Index cb) {
  std::vector<std::vector<Index>> g(static_cast<std::size_t>(cb));
  for (Index b = 0; b < cb; ++b)
    for (Index a = 0; a < ca; ++a) g[b].push_back(a * cb + b);
  return g;
}

// Edge table of `child` oriented (parent, child).
Var oriented_pair(const TreeStructure& s, const Rooted& r, const Var& table, Index child) {
  if (!r.flipped[child]) return table;
  return select_cols(table, transpose_cols(s.cardinalities[child], s.cardinalities[r.parent[child]]));
}

Var log_softmax_rows(const Var& x) { return x - logsumexp_rows(x); }

Matrix one_hot_argmax(const Matrix& x) {
  Matrix out = Matrix::Zero(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    Index best = 0;
    x.row(i).maxCoeff(&best);
    out(i, best) = 1.0;
  }
  return out;
}

bool finite_or_neg_inf(double v) { return std::isfinite(v) || v == kNegInf; }

Vector softmax(const Vector& logits) {
  const double mx = logits.maxCoeff();
  Vector e = (logits.array() - mx).exp().matrix();
  return e / e.sum();
}

double kl_term(double q, double p, const char* what) {
  if (q <= 0.0) return 0.0;
  if (p <= 0.0) fail(ErrorCode::kInfiniteKL, std::string(what) + ": p is zero where q is positive");
  return q * (std::log(q) - std::log(p));
}

}  // namespace

std::vector<Index> TreeStructure::degrees() const {
  std::vector<Index> d(cardinalities.size(), 0);
  for (const Edge& e : edges) {
    ++d[static_cast<std::size_t>(e.first)];
    ++d[static_cast<std::size_t>(e.second)];
  }
  return d;
}

void TreeStructure::validate() const {
  const Index n = nodes();
  require(n >= 1, ErrorCode::kMalformedTree, "tree has no nodes");
  for (Index c : cardinalities) require(c >= 1, ErrorCode::kMalformedTree, "cardinality < 1");
  require(static_cast<Index>(edges.size()) == n - 1, ErrorCode::kMalformedTree,
          "tree with " + std::to_string(n) + " nodes needs " + std::to_string(n - 1) + " edges");
  std::vector<Index> root(static_cast<std::size_t>(n));
  std::iota(root.begin(), root.end(), Index{0});
  auto find = [&](Index x) {
    while (root[x] != x) x = root[x] = root[root[x]];
    return x;
  };
  for (const Edge& e : edges) {
    require(e.first >= 0 && e.first < n && e.second >= 0 && e.second < n,
            ErrorCode::kMalformedTree, "edge endpoint out of range");
    const Index a = find(e.first), b = find(e.second);
    require(a != b, ErrorCode::kMalformedTree, "edges contain a cycle");
    root[a] = b;
  }
}

TreeStructure TreeStructure::oriented(Index root) const {
  const Rooted r = orient(*this, root);
  TreeStructure out = *this;
  for (Index v : r.order)
    if (v != root && r.flipped[v]) std::swap(out.edges[r.parent_edge[v]].first, out.edges[r.parent_edge[v]].second);
  return out;
}

TreeStructure TreeStructure::chain(Index n, Index cardinality) {
  TreeStructure s;
  s.cardinalities.assign(static_cast<std::size_t>(n), cardinality);
  for (Index i = 0; i + 1 < n; ++i) s.edges.push_back({i, i + 1});
  return s;
}

void TreeFactorGraph::validate() const {
  structure.validate();
  require(log_psi.size() == structure.cardinalities.size(), ErrorCode::kShapeMismatch,
          "one singleton potential per node");
  require(log_psi_pair.size() == structure.edges.size(), ErrorCode::kShapeMismatch,
          "one pairwise potential per edge");
  for (std::size_t i = 0; i < log_psi.size(); ++i) {
    require(log_psi[i].size() == structure.cardinalities[i], ErrorCode::kShapeMismatch,
            "singleton potential size of node " + std::to_string(i));
    for (double v : log_psi[i].reshaped())
      require(finite_or_neg_inf(v), ErrorCode::kInvalidArgument, "non-finite log potential");
  }
  for (std::size_t e = 0; e < log_psi_pair.size(); ++e) {
    const Edge& ed = structure.edges[e];
    require(log_psi_pair[e].rows() == structure.cardinalities[ed.first] &&
                log_psi_pair[e].cols() == structure.cardinalities[ed.second],
            ErrorCode::kShapeMismatch, "pairwise potential shape of edge " + std::to_string(e));
    for (double v : log_psi_pair[e].reshaped())
      require(finite_or_neg_inf(v), ErrorCode::kInvalidArgument, "non-finite log potential");
  }
}

TreeFactorGraph TreeFactorGraph::uniform(const TreeStructure& s) {
  TreeFactorGraph g;
  g.structure = s;
  for (Index c : s.cardinalities) g.log_psi.push_back(Vector::Zero(c));
  for (const Edge& e : s.edges)
    g.log_psi_pair.push_back(Matrix::Zero(s.cardinalities[e.first], s.cardinalities[e.second]));
  return g;
}

Json TreeFactorGraph::to_json() const {
  Json edges = Json::array(), singles = Json::array(), pairs = Json::array();
  for (const Edge& e : structure.edges) edges.push_back({e.first, e.second});
  for (const Vector& v : log_psi) singles.push_back(std::vector<double>(v.begin(), v.end()));
  for (const Matrix& m : log_psi_pair) pairs.push_back(matrix_to_json(m));
  return {{"cardinalities", structure.cardinalities},
          {"edges", edges},
          {"log_psi_singleton", singles},
          {"log_psi_pairwise", pairs}};
}

TreeFactorGraph TreeFactorGraph::from_json(const Json& j) {
  TreeFactorGraph g;
  try {
    g.structure.cardinalities = j.at("cardinalities").get<std::vector<Index>>();
    for (const Json& e : j.at("edges")) {
      require(e.is_array() && e.size() == 2, ErrorCode::kConfig, "tree edge must be [parent, child]");
      g.structure.edges.push_back({e[0].get<Index>(), e[1].get<Index>()});
    }
    if (j.contains("log_psi_singleton")) {
      for (const Json& v : j["log_psi_singleton"]) g.log_psi.push_back(matrix_from_json(v).reshaped());
    } else {
      for (Index c : g.structure.cardinalities) g.log_psi.push_back(Vector::Zero(c));
    }
    if (j.contains("log_psi_pairwise")) {
      for (const Json& m : j["log_psi_pairwise"]) g.log_psi_pair.push_back(matrix_from_json(m));
    } else {
      for (const Edge& e : g.structure.edges)
        g.log_psi_pair.push_back(Matrix::Zero(g.structure.cardinalities[e.first],
                                              g.structure.cardinalities[e.second]));
    }
  } catch (const Json::exception& e) {
    fail(ErrorCode::kConfig, std::string("tree description: ") + e.what());
  }
  g.validate();
  return g;
}

double log_potential(const TreeFactorGraph& graph, const std::vector<Index>& states) {
  double v = 0.0;
  for (std::size_t i = 0; i < graph.log_psi.size(); ++i) v += graph.log_psi[i](states[i]);
  for (std::size_t e = 0; e < graph.log_psi_pair.size(); ++e) {
    const Edge& ed = graph.structure.edges[e];
    v += graph.log_psi_pair[e](states[ed.first], states[ed.second]);
  }
  return v;
}

TapeTreePotentials tape_potentials(Tape& tape, const TreeFactorGraph& graph, Index rows) {
  graph.validate();
  TapeTreePotentials p;
  for (const Vector& v : graph.log_psi)
    p.log_psi.push_back(tape.constant(v.transpose().replicate(rows, 1)));
  for (const Matrix& m : graph.log_psi_pair) {
    const Matrix flat = m.transpose().reshaped(1, m.size());  // row-major
    p.log_psi_pair.push_back(tape.constant(flat.replicate(rows, 1)));
  }
  return p;
}

TapeBeliefs sum_product(const TreeStructure& s, const TapeTreePotentials& pot, Index root) {
  const Rooted r = orient(s, root);
  const Index n = s.nodes();
  require(static_cast<Index>(pot.log_psi.size()) == n &&
              pot.log_psi_pair.size() == s.edges.size(),
          ErrorCode::kStructureMismatch, "potentials do not match the tree");
  const auto& card = s.cardinalities;
  std::vector<Var> table(n), inner(n), up(n), down(n);
  for (Index v : r.order)
    if (v != root) table[v] = oriented_pair(s, r, pot.log_psi_pair[r.parent_edge[v]], v);

  for (auto it = r.order.rbegin(); it != r.order.rend(); ++it) {
    const Index v = *it;
    inner[v] = pot.log_psi[v];
    for (Index c : r.children[v]) inner[v] = inner[v] + up[c];
    if (v == root) continue;
    const Index cp = card[r.parent[v]], cv = card[v];
    up[v] = logsumexp_groups(table[v] + select_cols(inner[v], tile_second(cp, cv)),
                             groups_over_second(cp, cv));
  }
  TapeBeliefs b;
  b.log_z = logsumexp_rows(inner[root]);
  b.log_singleton.resize(n);
  b.log_pairwise.resize(s.edges.size());
  b.log_singleton[root] = inner[root] - b.log_z;
  for (Index v : r.order) {
    if (v == root) continue;
    const Index p = r.parent[v];
    const Index cp = card[p], cv = card[v];
    Var outside = pot.log_psi[p];
    if (p != root) outside = outside + down[p];
    for (Index sib : r.children[p])
      if (sib != v) outside = outside + up[sib];
    const Var joint = table[v] + select_cols(outside, tile_first(cp, cv));
    down[v] = logsumexp_groups(joint, groups_over_first(cp, cv));
    b.log_singleton[v] = inner[v] + down[v] - b.log_z;
    Var pair = joint + select_cols(inner[v], tile_second(cp, cv)) - b.log_z;
    if (r.flipped[v]) pair = select_cols(pair, transpose_cols(cp, cv));
    b.log_pairwise[r.parent_edge[v]] = pair;
  }
  return b;
}

Beliefs sum_product(const TreeFactorGraph& graph, Index root) {
  Tape tape;
  const TapeBeliefs tb = sum_product(graph.structure, tape_potentials(tape, graph), root);
  Beliefs b;
  b.structure = graph.structure;
  b.log_z = tb.log_z.scalar();
  require(std::isfinite(b.log_z), ErrorCode::kInvalidArgument, "potentials have zero total mass");
  for (const Var& v : tb.log_singleton) b.singleton.push_back(v.value().row(0).transpose().array().exp());
  for (std::size_t e = 0; e < tb.log_pairwise.size(); ++e) {
    const Edge& ed = graph.structure.edges[e];
    const Index ca = graph.structure.cardinalities[ed.first];
    const Index cb = graph.structure.cardinalities[ed.second];
    Matrix m = tb.log_pairwise[e].value().row(0).reshaped(cb, ca).transpose();
    b.pairwise.push_back(m.array().exp());
  }
  return b;
}

double tree_kl(const Beliefs& q, const Beliefs& p) {
  require(q.structure == p.structure && q.singleton.size() == p.singleton.size() &&
              q.pairwise.size() == p.pairwise.size(),
          ErrorCode::kStructureMismatch, "tree_kl: beliefs over different trees");
  const std::vector<Index> deg = q.structure.degrees();
  double kl = 0.0;
  for (std::size_t e = 0; e < q.pairwise.size(); ++e) {
    require(q.pairwise[e].rows() == p.pairwise[e].rows() && q.pairwise[e].cols() == p.pairwise[e].cols(),
            ErrorCode::kStructureMismatch, "tree_kl: pairwise shapes");
    for (Index i = 0; i < q.pairwise[e].size(); ++i)
      kl += kl_term(q.pairwise[e].reshaped()(i), p.pairwise[e].reshaped()(i), "tree_kl");
  }
  for (std::size_t i = 0; i < q.singleton.size(); ++i) {
    require(q.singleton[i].size() == p.singleton[i].size(), ErrorCode::kStructureMismatch,
            "tree_kl: singleton sizes");
    double term = 0.0;
    for (Index c = 0; c < q.singleton[i].size(); ++c)
      term += kl_term(q.singleton[i](c), p.singleton[i](c), "tree_kl");
    kl -= static_cast<double>(deg[i] - 1) * term;
  }
  return kl;
}

Var tree_kl(const TreeStructure& s, const TapeBeliefs& q, const TapeBeliefs& p) {
  require(q.log_singleton.size() == p.log_singleton.size() &&
              q.log_pairwise.size() == p.log_pairwise.size() &&
              static_cast<Index>(q.log_singleton.size()) == s.nodes(),
          ErrorCode::kStructureMismatch, "tree_kl: beliefs over different trees");
  const std::vector<Index> deg = s.degrees();
  Var kl;
  auto add_term = [&](const Var& t) { kl = kl.valid() ? kl + t : t; };
  for (std::size_t e = 0; e < q.log_pairwise.size(); ++e) {
    const Var& lq = q.log_pairwise[e];
    add_term(sum_rows(exp(lq) * (lq - p.log_pairwise[e])));
  }
  for (std::size_t i = 0; i < q.log_singleton.size(); ++i) {
    if (deg[i] == 1) continue;
    const Var& lq = q.log_singleton[i];
    add_term(scale(sum_rows(exp(lq) * (lq - p.log_singleton[i])), -static_cast<double>(deg[i] - 1)));
  }
  if (!kl.valid()) {
    Tape& t = *q.log_singleton.front().tape();
    return t.constant(Matrix::Zero(q.log_singleton.front().rows(), 1));
  }
  return kl;
}

Matrix hard_sample(const Matrix& z) {
  return z.unaryExpr([](double v) {
    const double sgn = v > 0.5 ? 1.0 : (v < 0.5 ? -1.0 : 0.0);
    return 0.5 * (sgn + 1.0);
  });
}

std::vector<Matrix> tree_gumbel_noise(const TreeStructure& s, Index rows, Rng& rng) {
  std::vector<Matrix> noise;
  for (Index c : s.cardinalities) noise.push_back(gumbel(rng, rows, c));
  return noise;
}

std::vector<Var> ancestral_sample(const TreeStructure& s, const TapeBeliefs& beliefs,
                                  const std::vector<Matrix>& noise, double temperature,
                                  bool hard, Index root) {
  require(temperature > 0.0, ErrorCode::kInvalidArgument, "temperature must be > 0");
  const Rooted r = orient(s, root);
  require(static_cast<Index>(noise.size()) == s.nodes(), ErrorCode::kShapeMismatch,
          "one noise block per node");
  Tape& tape = *beliefs.log_z.tape();
  const auto& card = s.cardinalities;
  std::vector<Var> out(static_cast<std::size_t>(s.nodes()));
  auto draw = [&](const Var& logits, Index v) {
    Var sample = exp(log_softmax_rows(scale(logits + tape.constant(noise[v]), 1.0 / temperature)));
    if (hard) sample = sample + tape.constant(one_hot_argmax(sample.value()) - sample.value());
    return sample;
  };
  out[root] = draw(beliefs.log_singleton[root], root);
  for (Index v : r.order) {
    if (v == root) continue;
    const Index p = r.parent[v];
    const Index cp = card[p], cv = card[v];
    const Var pair = oriented_pair(s, r, beliefs.log_pairwise[r.parent_edge[v]], v);
    const Var cond = exp(pair - select_cols(beliefs.log_singleton[p], tile_first(cp, cv)));
    Matrix sel = Matrix::Zero(cp * cv, cv);
    for (Index a = 0; a < cp; ++a)
      for (Index b = 0; b < cv; ++b) sel(a * cv + b, b) = 1.0;
    const Var mixed = matmul(cond * select_cols(out[p], tile_first(cp, cv)), tape.constant(sel));
    out[v] = draw(log(mixed), v);
  }
  return out;
}

std::vector<Vector> ancestral_sample(const Beliefs& beliefs, double temperature, Rng& rng,
                                     bool hard, Index root) {
  require(temperature > 0.0, ErrorCode::kInvalidArgument, "temperature must be > 0");
  const TreeStructure& s = beliefs.structure;
  const Rooted r = orient(s, root);
  std::vector<Vector> out(static_cast<std::size_t>(s.nodes()));
  auto draw = [&](const Vector& probs) {
    const Vector g = gumbel(rng, probs.size(), 1);
    Vector logits(probs.size());
    for (Index c = 0; c < probs.size(); ++c)
      logits(c) = probs(c) > 0.0 ? (std::log(probs(c)) + g(c)) / temperature : kNegInf;
    Vector sample = softmax(logits);
    if (hard) {
      Index best = 0;
      sample.maxCoeff(&best);
      sample.setZero();
      sample(best) = 1.0;
    }
    return sample;
  };
  out[root] = draw(beliefs.singleton[root]);
  for (Index v : r.order) {
    if (v == root) continue;
    const Index p = r.parent[v];
    Matrix pair = beliefs.pairwise[r.parent_edge[v]];
    if (r.flipped[v]) pair.transposeInPlace();
    Vector mixed = Vector::Zero(s.cardinalities[v]);
    for (Index a = 0; a < s.cardinalities[p]; ++a)
      if (beliefs.singleton[p](a) > 0.0)
        mixed += out[p](a) * pair.row(a).transpose() / beliefs.singleton[p](a);
    out[v] = draw(mixed);
  }
  return out;
}

// ---------------------------------------------------------------------------

GaussianTreeModel GaussianTreeModel::from_dense(const Matrix& precision, const Vector& linear) {
  const Index n = precision.rows();
  require(precision.cols() == n && linear.size() == n, ErrorCode::kShapeMismatch,
          "gaussian tree: A must be n x n and b n-long");
  GaussianTreeModel m;
  m.diagonal = precision.diagonal();
  m.linear = linear;
  std::vector<double> c;
  for (Index i = 0; i < n; ++i)
    for (Index j = i + 1; j < n; ++j) {
      require(std::abs(precision(i, j) - precision(j, i)) <=
                  1e-12 * std::max(1.0, std::abs(precision(i, j))),
              ErrorCode::kInvalidArgument, "gaussian tree: A not symmetric");
      if (precision(i, j) != 0.0) {
        m.edges.push_back({i, j});
        c.push_back(precision(i, j));
      }
    }
  m.coupling = Eigen::Map<const Vector>(c.data(), static_cast<Index>(c.size()));
  return m;
}

Matrix GaussianTreeModel::dense_precision() const {
  Matrix a = diagonal.asDiagonal();
  for (std::size_t e = 0; e < edges.size(); ++e) {
    a(edges[e].first, edges[e].second) = coupling(static_cast<Index>(e));
    a(edges[e].second, edges[e].first) = coupling(static_cast<Index>(e));
  }
  return a;
}

GaussianTreeMarginals gaussian_tree_vmp(const GaussianTreeModel& model) {
  const Index n = model.diagonal.size();
  const Index ne = static_cast<Index>(model.edges.size());
  require(model.linear.size() == n && model.coupling.size() == ne, ErrorCode::kShapeMismatch,
          "gaussian tree: sizes");
  std::vector<std::vector<std::pair<Index, Index>>> adj(static_cast<std::size_t>(n));
  for (Index e = 0; e < ne; ++e) {
    const Edge& ed = model.edges[e];
    require(ed.first >= 0 && ed.first < n && ed.second >= 0 && ed.second < n && ed.first != ed.second,
            ErrorCode::kMalformedTree, "gaussian tree: bad edge");
    adj[ed.first].push_back({ed.second, e});
    adj[ed.second].push_back({ed.first, e});
  }
  // Breadth-first forest; any revisit through a new edge is a cycle.
  std::vector<Index> order, parent(n, -1), parent_edge(n, -1);
  std::vector<bool> seen(n, false);
  order.reserve(n);
  for (Index s = 0; s < n; ++s) {
    if (seen[s]) continue;
    seen[s] = true;
    order.push_back(s);
    for (std::size_t head = order.size() - 1; head < order.size(); ++head) {
      const Index u = order[head];
      for (const auto& [v, e] : adj[u]) {
        if (e == parent_edge[u]) continue;
        require(!seen[v], ErrorCode::kMalformedTree, "gaussian tree: sparsity pattern has a cycle");
        seen[v] = true;
        parent[v] = u;
        parent_edge[v] = e;
        order.push_back(v);
      }
    }
  }
  // Upward: cavity precision/shift of each subtree, message to its parent.
  Vector up_prec = model.diagonal, up_shift = model.linear;
  Vector msg_prec = Vector::Zero(n), msg_shift = Vector::Zero(n);  // child -> parent
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const Index v = *it;
    require(up_prec(v) > 0.0, ErrorCode::kNotPositiveDefinite,
            "gaussian_tree_vmp: precision is not positive definite");
    if (parent[v] < 0) continue;
    const double a = model.coupling(parent_edge[v]);
    msg_prec(v) = -a * a / up_prec(v);
    msg_shift(v) = -a * up_shift(v) / up_prec(v);
    up_prec(parent[v]) += msg_prec(v);
    up_shift(parent[v]) += msg_shift(v);
  }
  GaussianTreeMarginals out;
  Vector prec = up_prec, shift = up_shift;
  out.edges = model.edges;
  out.pair_covariance.assign(static_cast<std::size_t>(ne), Matrix());
  for (Index v : order) {
    if (parent[v] < 0) continue;
    const Index p = parent[v];
    const double a = model.coupling(parent_edge[v]);
    const double cav_prec = prec(p) - msg_prec(v);
    const double cav_shift = shift(p) - msg_shift(v);
    require(cav_prec > 0.0, ErrorCode::kNotPositiveDefinite,
            "gaussian_tree_vmp: precision is not positive definite");
    prec(v) += -a * a / cav_prec;
    shift(v) += -a * cav_shift / cav_prec;
    // Pair precision [[up_prec(v), a], [a, cav_prec]] over (v, p).
    const double det = up_prec(v) * cav_prec - a * a;
    require(det > 0.0, ErrorCode::kNotPositiveDefinite,
            "gaussian_tree_vmp: precision is not positive definite");
    Matrix cov(2, 2);
    cov << cav_prec / det, -a / det, -a / det, up_prec(v) / det;
    if (model.edges[parent_edge[v]].first != v) {
      std::swap(cov(0, 0), cov(1, 1));
    }
    out.pair_covariance[parent_edge[v]] = cov;
  }
  out.variance = prec.cwiseInverse();
  out.mean = shift.cwiseQuotient(prec);
  return out;
}

}  // namespace srvae
