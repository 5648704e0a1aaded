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

#include "srvae/tree_srvae.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "srvae/optim.hpp"

namespace srvae {

TreeVariant tree_variant_from_string(const std::string& s) {
  if (s == "tree") return TreeVariant::kTree;
  if (s == "svae") return TreeVariant::kSvae;
  if (s == "vae") return TreeVariant::kVae;
  fail(ErrorCode::kConfig, "unknown tree model variant '" + s + "'");
}

const char* tree_variant_name(TreeVariant v) {
  switch (v) {
    case TreeVariant::kTree: return "tree";
    case TreeVariant::kSvae: return "svae";
    case TreeVariant::kVae: return "vae";
  }
  return "tree";
}

namespace {

std::vector<Index> sizes_of(Index in, const std::vector<Index>& hidden, Index out) {
  std::vector<Index> s{in};
  s.insert(s.end(), hidden.begin(), hidden.end());
  s.push_back(out);
  return s;
}

Var log_softmax_groups(const Var& x, Index groups, Index width) {
  std::vector<std::vector<Index>> g(static_cast<std::size_t>(groups));
  std::vector<Index> tile;
  for (Index a = 0; a < groups; ++a)
    for (Index b = 0; b < width; ++b) {
      g[a].push_back(a * width + b);
      tile.push_back(a);
    }
  return x - select_cols(logsumexp_groups(x, g), tile);
}

Vector log_softmax(const Vector& x) {
  const double mx = x.maxCoeff();
  return x.array() - (mx + std::log((x.array() - mx).exp().sum()));
}

// Row-major flattening of a table to a 1 x (r c) row.
Matrix flatten(const Matrix& m) { return m.transpose().reshaped(1, m.size()); }
Matrix unflatten(const Matrix& row, Index r, Index c) { return row.reshaped(c, r).transpose(); }

}  // namespace

TreeSrvaeModel::TreeSrvaeModel(const TreeModelConfig& config, Rng& rng) : config_(config) {
  require(config.pixels >= 1, ErrorCode::kConfig, "tree model: pixels must be >= 1");
  config_.structure = config.structure.oriented(0);
  const TreeStructure& s = config_.structure;
  const bool factorised = config.variant == TreeVariant::kVae;
  for (Index i = 0; i < s.nodes(); ++i) {
    node_logits.emplace_back("prior_node" + std::to_string(i), Matrix::Zero(1, s.cardinalities[i]));
    node_logits.back().trainable = factorised || i == 0;
  }
  for (std::size_t e = 0; e < s.edges.size(); ++e) {
    const Index cells = s.cardinalities[s.edges[e].first] * s.cardinalities[s.edges[e].second];
    edge_logits.emplace_back("prior_edge" + std::to_string(e), Matrix::Zero(1, cells));
    edge_logits.back().trainable = !factorised;
  }
  recognition = Mlp("recognition", sizes_of(config.pixels, config.recognition_hidden, recognition_width()),
                    Activation::kIdentity, rng);
  decoder = Mlp("decoder", sizes_of(latent_dim(), config.decoder_hidden, config.pixels),
                Activation::kIdentity, rng);
}

Index TreeSrvaeModel::latent_dim() const {
  Index d = 0;
  for (Index c : structure().cardinalities) d += c - 1;
  return d;
}

Index TreeSrvaeModel::recognition_width() const {
  Index w = 0;
  for (Index c : structure().cardinalities) w += c;
  if (variant() == TreeVariant::kTree)
    for (const Edge& e : structure().edges)
      w += structure().cardinalities[e.first] * structure().cardinalities[e.second];
  return w;
}

std::vector<Parameter*> TreeSrvaeModel::parameters() {
  std::vector<Parameter*> out;
  for (Parameter& p : node_logits) out.push_back(&p);
  for (Parameter& p : edge_logits) out.push_back(&p);
  recognition.collect(out);
  decoder.collect(out);
  return out;
}

std::size_t TreeSrvaeModel::parameter_count() {
  std::size_t n = 0;
  for (Parameter* p : parameters())
    if (p->trainable) n += p->value.size();
  return n;
}

TreeFactorGraph TreeSrvaeModel::prior_graph() const {
  const TreeStructure& s = structure();
  TreeFactorGraph g = TreeFactorGraph::uniform(s);
  const bool factorised = variant() == TreeVariant::kVae;
  for (Index i = 0; i < s.nodes(); ++i)
    if (factorised || i == 0) g.log_psi[i] = log_softmax(node_logits[i].value.row(0).transpose());
  if (!factorised)
    for (std::size_t e = 0; e < s.edges.size(); ++e) {
      const Index ca = s.cardinalities[s.edges[e].first], cb = s.cardinalities[s.edges[e].second];
      Matrix t = unflatten(edge_logits[e].value, ca, cb);
      for (Index a = 0; a < ca; ++a) t.row(a) = log_softmax(t.row(a).transpose()).transpose();
      g.log_psi_pair[e] = t;
    }
  return g;
}

TapeTreePotentials TreeSrvaeModel::prior(Tape& tape) {
  const TreeStructure& s = structure();
  const bool factorised = variant() == TreeVariant::kVae;
  TapeTreePotentials p;
  for (Index i = 0; i < s.nodes(); ++i) {
    if (factorised || i == 0) {
      p.log_psi.push_back(log_softmax_groups(tape.parameter(node_logits[i]), 1, s.cardinalities[i]));
    } else {
      p.log_psi.push_back(tape.constant(Matrix::Zero(1, s.cardinalities[i])));
    }
  }
  for (std::size_t e = 0; e < s.edges.size(); ++e) {
    const Index ca = s.cardinalities[s.edges[e].first], cb = s.cardinalities[s.edges[e].second];
    if (factorised) {
      p.log_psi_pair.push_back(tape.constant(Matrix::Zero(1, ca * cb)));
    } else {
      p.log_psi_pair.push_back(log_softmax_groups(tape.parameter(edge_logits[e]), ca, cb));
    }
  }
  return p;
}

TapeTreePotentials TreeSrvaeModel::recognize(Tape& tape, const Matrix& images) {
  require(images.cols() == config_.pixels, ErrorCode::kShapeMismatch,
          "tree model: image width differs from the configured pixel count");
  const TreeStructure& s = structure();
  const Var out = recognition.forward(tape, tape.constant(images));
  TapeTreePotentials xi;
  Index col = 0;
  for (Index c : s.cardinalities) {
    xi.log_psi.push_back(col_range(out, col, c));
    col += c;
  }
  for (const Edge& e : s.edges) {
    const Index cells = s.cardinalities[e.first] * s.cardinalities[e.second];
    if (variant() == TreeVariant::kTree) {
      xi.log_psi_pair.push_back(col_range(out, col, cells));
      col += cells;
    } else {
      xi.log_psi_pair.push_back(tape.constant(Matrix::Zero(images.rows(), cells)));
    }
  }
  return xi;
}

Var TreeSrvaeModel::decode(Tape& tape, const std::vector<Var>& samples) {
  std::vector<Var> parts;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Index c = structure().cardinalities[i];
    if (c > 1) parts.push_back(col_range(samples[i], 1, c - 1));
  }
  return decoder.forward(tape, hcat(parts));
}

Matrix TreeSrvaeModel::encode_states(const std::vector<std::vector<Index>>& states) const {
  Matrix z = Matrix::Zero(static_cast<Index>(states.size()), latent_dim());
  for (std::size_t r = 0; r < states.size(); ++r) {
    Index offset = 0;
    for (std::size_t i = 0; i < states[r].size(); ++i) {
      const Index c = structure().cardinalities[i];
      if (states[r][i] > 0) z(static_cast<Index>(r), offset + states[r][i] - 1) = 1.0;
      offset += c - 1;
    }
  }
  return z;
}

Json TreeSrvaeModel::to_json() const {
  Json nodes = Json::array(), edges = Json::array(), tree_edges = Json::array();
  for (const Parameter& p : node_logits) nodes.push_back(parameter_to_json(p));
  for (const Parameter& p : edge_logits) edges.push_back(parameter_to_json(p));
  for (const Edge& e : structure().edges) tree_edges.push_back({e.first, e.second});
  return {{"config",
           {{"cardinalities", structure().cardinalities},
            {"edges", tree_edges},
            {"pixels", config_.pixels},
            {"recognition_hidden", config_.recognition_hidden},
            {"decoder_hidden", config_.decoder_hidden},
            {"variant", tree_variant_name(config_.variant)}}},
          {"node_logits", nodes},
          {"edge_logits", edges},
          {"recognition", mlp_to_json(recognition)},
          {"decoder", mlp_to_json(decoder)}};
}

TreeSrvaeModel TreeSrvaeModel::from_json(const Json& j) {
  const Json& c = j.at("config");
  TreeModelConfig cfg;
  cfg.structure = TreeFactorGraph::from_json({{"cardinalities", c.at("cardinalities")},
                                              {"edges", c.at("edges")}})
                      .structure;
  cfg.pixels = c.at("pixels").get<Index>();
  cfg.recognition_hidden = c.at("recognition_hidden").get<std::vector<Index>>();
  cfg.decoder_hidden = c.at("decoder_hidden").get<std::vector<Index>>();
  cfg.variant = tree_variant_from_string(c.at("variant").get<std::string>());
  Rng rng(0);
  TreeSrvaeModel m(cfg, rng);
  require(j.at("node_logits").size() == m.node_logits.size() &&
              j.at("edge_logits").size() == m.edge_logits.size(),
          ErrorCode::kConfig, "tree checkpoint: prior table count");
  for (std::size_t i = 0; i < m.node_logits.size(); ++i) parameter_from_json(j["node_logits"][i], m.node_logits[i]);
  for (std::size_t e = 0; e < m.edge_logits.size(); ++e) parameter_from_json(j["edge_logits"][e], m.edge_logits[e]);
  m.recognition = mlp_from_json("recognition", j.at("recognition"));
  m.decoder = mlp_from_json("decoder", j.at("decoder"));
  return m;
}

TapeTreePotentials combine(const TapeTreePotentials& prior, const TapeTreePotentials& xi) {
  require(prior.log_psi.size() == xi.log_psi.size() &&
              prior.log_psi_pair.size() == xi.log_psi_pair.size(),
          ErrorCode::kStructureMismatch, "combine: potentials over different trees");
  TapeTreePotentials out;
  for (std::size_t i = 0; i < prior.log_psi.size(); ++i) {
    require(prior.log_psi[i].cols() == xi.log_psi[i].cols(), ErrorCode::kStructureMismatch,
            "combine: node cardinality");
    out.log_psi.push_back(prior.log_psi[i] + xi.log_psi[i]);
  }
  for (std::size_t e = 0; e < prior.log_psi_pair.size(); ++e) {
    require(prior.log_psi_pair[e].cols() == xi.log_psi_pair[e].cols(), ErrorCode::kStructureMismatch,
            "combine: edge table size");
    out.log_psi_pair.push_back(prior.log_psi_pair[e] + xi.log_psi_pair[e]);
  }
  return out;
}

TreeFactorGraph combine(const TreeFactorGraph& prior, const TreeFactorGraph& xi) {
  require(prior.structure == xi.structure, ErrorCode::kStructureMismatch,
          "combine: potentials over different trees");
  prior.validate();
  xi.validate();
  TreeFactorGraph out = prior;
  for (std::size_t i = 0; i < out.log_psi.size(); ++i) out.log_psi[i] += xi.log_psi[i];
  for (std::size_t e = 0; e < out.log_psi_pair.size(); ++e) out.log_psi_pair[e] += xi.log_psi_pair[e];
  return out;
}

Var bernoulli_log_likelihood(Tape& tape, const Matrix& y, const Var& logits) {
  const Var yv = tape.constant(y);
  const Var one_minus = tape.constant((1.0 - y.array()).matrix());
  return sum_rows(yv * log_sigmoid(logits) + one_minus * log_sigmoid(neg(logits)));
}

TreeFreeEnergy tree_free_energy(Tape& tape, TreeSrvaeModel& model, const Matrix& images,
                                const std::vector<Matrix>& noise, double temperature, bool hard) {
  require(images.rows() > 0, ErrorCode::kInvalidArgument, "tree free energy: empty batch");
  const TreeStructure& s = model.structure();
  const TapeTreePotentials prior = model.prior(tape);
  const TapeBeliefs bp = sum_product(s, prior);
  const TapeBeliefs bq = sum_product(s, combine(prior, model.recognize(tape, images)));
  const std::vector<Var> z = ancestral_sample(s, bq, noise, temperature, hard);
  const double inv_b = 1.0 / static_cast<double>(images.rows());
  TreeFreeEnergy out;
  out.recon = scale(sum(bernoulli_log_likelihood(tape, images, model.decode(tape, z))), inv_b);
  out.kl = scale(sum(tree_kl(s, bq, bp)), inv_b);
  out.free_energy = out.recon - out.kl;
  return out;
}

TreeFreeEnergy tree_free_energy(Tape& tape, TreeSrvaeModel& model, const Matrix& images,
                                double temperature, bool hard, Rng& rng) {
  return tree_free_energy(tape, model, images, tree_gumbel_noise(model.structure(), images.rows(), rng),
                          temperature, hard);
}

std::vector<std::vector<Index>> enumerate_states(const std::vector<Index>& cardinalities) {
  Index total = 1;
  for (Index c : cardinalities) {
    require(c >= 1 && total <= kMaxEnumeratedStates / c, ErrorCode::kTooLarge,
            "more than 2^20 joint states");
    total *= c;
  }
  std::vector<std::vector<Index>> out;
  out.reserve(static_cast<std::size_t>(total));
  std::vector<Index> x(cardinalities.size(), 0);
  for (Index s = 0; s < total; ++s) {
    out.push_back(x);
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (++x[i] < cardinalities[i]) break;
      x[i] = 0;
    }
  }
  return out;
}

namespace {

// log p(y | z) for every state, from the plain decoder.
Vector state_log_likelihood(TreeSrvaeModel& model, const Vector& image,
                            const std::vector<std::vector<Index>>& states) {
  const Index total = static_cast<Index>(states.size());
  Vector ll(total);
  const Index chunk = 4096;
  for (Index start = 0; start < total; start += chunk) {
    const Index n = std::min(chunk, total - start);
    const std::vector<std::vector<Index>> part(states.begin() + start, states.begin() + start + n);
    const Matrix logits = model.decoder.evaluate(model.encode_states(part));
    for (Index r = 0; r < n; ++r) {
      double v = 0.0;
      for (Index d = 0; d < logits.cols(); ++d) {
        const double l = logits(r, d);
        const double log_sig = l >= 0 ? -std::log1p(std::exp(-l)) : l - std::log1p(std::exp(l));
        v += image(d) * log_sig + (1.0 - image(d)) * (log_sig - l);
      }
      ll(start + r) = v;
    }
  }
  return ll;
}

Vector state_log_prior(const TreeFactorGraph& prior, const std::vector<std::vector<Index>>& states) {
  const double log_z = sum_product(prior).log_z;
  Vector lp(static_cast<Index>(states.size()));
  for (std::size_t s = 0; s < states.size(); ++s) lp(static_cast<Index>(s)) = log_potential(prior, states[s]) - log_z;
  return lp;
}

// Indicator matrix (c x S) of node i's state, or (ca cb x S) of an edge's.
Matrix node_indicator(const std::vector<std::vector<Index>>& states, Index i, Index c) {
  Matrix m = Matrix::Zero(c, static_cast<Index>(states.size()));
  for (std::size_t s = 0; s < states.size(); ++s) m(states[s][i], static_cast<Index>(s)) = 1.0;
  return m;
}

Matrix edge_indicator(const std::vector<std::vector<Index>>& states, const Edge& e, Index cb, Index cells) {
  Matrix m = Matrix::Zero(cells, static_cast<Index>(states.size()));
  for (std::size_t s = 0; s < states.size(); ++s)
    m(states[s][e.first] * cb + states[s][e.second], static_cast<Index>(s)) = 1.0;
  return m;
}

}  // namespace

Var exact_free_energy(Tape& tape, TreeSrvaeModel& model, const Vector& image,
                      const TapeTreePotentials& xi) {
  const TreeStructure& s = model.structure();
  require(image.size() == model.config().pixels, ErrorCode::kShapeMismatch, "image width");
  const auto states = enumerate_states(s.cardinalities);
  const TreeFactorGraph prior = model.prior_graph();
  const Vector gen = state_log_likelihood(model, image, states) + state_log_prior(prior, states);
  const TapeTreePotentials q = combine(tape_potentials(tape, prior, 1), xi);
  const TapeBeliefs bq = sum_product(s, q);
  Var log_q = neg(repeat_rows(bq.log_z, 1));
  for (Index i = 0; i < s.nodes(); ++i)
    log_q = log_q + matmul(q.log_psi[i], tape.constant(node_indicator(states, i, s.cardinalities[i])));
  for (std::size_t e = 0; e < s.edges.size(); ++e) {
    const Index cb = s.cardinalities[s.edges[e].second];
    const Index cells = s.cardinalities[s.edges[e].first] * cb;
    log_q = log_q + matmul(q.log_psi_pair[e], tape.constant(edge_indicator(states, s.edges[e], cb, cells)));
  }
  return sum(exp(log_q) * (tape.constant(gen.transpose()) - log_q));
}

PotentialFit fit_potentials(TreeSrvaeModel& model, const Vector& image, bool pairwise, Index steps,
                            double learning_rate, const TreeFactorGraph* start) {
  const TreeStructure& s = model.structure();
  TreeFactorGraph init = start ? *start : TreeFactorGraph::uniform(s);
  require(init.structure == s, ErrorCode::kStructureMismatch, "fit_potentials: start structure");
  if (!pairwise)
    for (Matrix& m : init.log_psi_pair) m.setZero();
  std::vector<Parameter> nodes, edges;
  for (Index i = 0; i < s.nodes(); ++i) nodes.emplace_back("xi_node", Matrix(init.log_psi[i].transpose()));
  for (std::size_t e = 0; e < s.edges.size(); ++e) {
    edges.emplace_back("xi_edge", flatten(init.log_psi_pair[e]));
    edges.back().trainable = pairwise;
  }
  std::vector<Parameter*> params;
  for (Parameter& p : nodes) params.push_back(&p);
  for (Parameter& p : edges) params.push_back(&p);
  AdamConfig adam;
  adam.learning_rate = learning_rate;
  PotentialFit best;
  best.free_energy = -INFINITY;
  auto snapshot = [&] {
    TreeFactorGraph g = TreeFactorGraph::uniform(s);
    for (Index i = 0; i < s.nodes(); ++i) g.log_psi[i] = nodes[i].value.transpose();
    for (std::size_t e = 0; e < s.edges.size(); ++e)
      g.log_psi_pair[e] = unflatten(edges[e].value, s.cardinalities[s.edges[e].first],
                                    s.cardinalities[s.edges[e].second]);
    return g;
  };
  for (Index step = 0; step <= steps; ++step) {
    Tape tape;
    TapeTreePotentials xi;
    for (Parameter& p : nodes) xi.log_psi.push_back(tape.parameter(p));
    for (Parameter& p : edges) xi.log_psi_pair.push_back(tape.parameter(p));
    const Var f = exact_free_energy(tape, model, image, xi);
    if (f.scalar() > best.free_energy) {
      best.free_energy = f.scalar();
      best.potentials = snapshot();
    }
    if (step == steps) break;
    zero_grad(params);
    tape.backward(neg(f));
    adam_step(params, adam);
  }
  return best;
}

ExactPosterior exact_posterior(TreeSrvaeModel& model, const Vector& image) {
  const TreeStructure& s = model.structure();
  require(image.size() == model.config().pixels, ErrorCode::kShapeMismatch, "image width");
  const auto states = enumerate_states(s.cardinalities);
  const Index total = static_cast<Index>(states.size());
  ExactPosterior out;
  out.cardinalities = s.cardinalities;
  const Vector lp = state_log_prior(model.prior_graph(), states);
  const Vector lj = lp + state_log_likelihood(model, image, states);
  const double mx = lj.maxCoeff();
  out.log_evidence = mx + std::log((lj.array() - mx).exp().sum());
  out.joint = (lj.array() - out.log_evidence).exp();
  out.prior = lp.array().exp();
  for (Index c : s.cardinalities) out.marginals.push_back(Vector::Zero(c));
  std::vector<Matrix> pairs;
  for (const Edge& e : s.edges) pairs.push_back(Matrix::Zero(s.cardinalities[e.first], s.cardinalities[e.second]));
  for (Index k = 0; k < total; ++k) {
    const auto& x = states[k];
    for (std::size_t i = 0; i < x.size(); ++i) out.marginals[i](x[i]) += out.joint(k);
    for (std::size_t e = 0; e < s.edges.size(); ++e) pairs[e](x[s.edges[e].first], x[s.edges[e].second]) += out.joint(k);
  }
  const std::vector<Index> deg = s.degrees();
  double gap = 0.0;
  for (Index k = 0; k < total; ++k) {
    const double p = out.joint(k);
    if (p <= 0.0) continue;
    const auto& x = states[k];
    double log_tree = 0.0;
    for (std::size_t e = 0; e < s.edges.size(); ++e) log_tree += std::log(pairs[e](x[s.edges[e].first], x[s.edges[e].second]));
    for (std::size_t i = 0; i < x.size(); ++i) log_tree -= static_cast<double>(deg[i] - 1) * std::log(out.marginals[i](x[i]));
    gap += p * (std::log(p) - log_tree);
  }
  out.tree_gap = std::max(gap, 0.0);
  return out;
}

double mutual_information(const Vector& joint, const std::vector<Index>& cardinalities, Index i, Index j) {
  require(i != j && i >= 0 && j >= 0 && i < static_cast<Index>(cardinalities.size()) &&
              j < static_cast<Index>(cardinalities.size()),
          ErrorCode::kInvalidArgument, "mutual_information: node indices");
  const auto states = enumerate_states(cardinalities);
  require(static_cast<Index>(states.size()) == joint.size(), ErrorCode::kShapeMismatch,
          "mutual_information: joint size");
  Matrix pij = Matrix::Zero(cardinalities[i], cardinalities[j]);
  for (std::size_t k = 0; k < states.size(); ++k) pij(states[k][i], states[k][j]) += joint(static_cast<Index>(k));
  const Vector pi = pij.rowwise().sum(), pj = pij.colwise().sum().transpose();
  double mi = 0.0;
  for (Index a = 0; a < pij.rows(); ++a)
    for (Index b = 0; b < pij.cols(); ++b)
      if (pij(a, b) > 0.0) mi += pij(a, b) * (std::log(pij(a, b)) - std::log(pi(a) * pj(b)));
  return mi;
}

MetricTrace train(TreeSrvaeModel& model, const Matrix& images, const TreeTrainConfig& config) {
  require(config.batch >= 1 && config.epochs >= 0 && config.temperature > 0.0 &&
              config.learning_rate >= 0.0,
          ErrorCode::kConfig, "invalid training configuration");
  require(images.rows() > 0, ErrorCode::kInvalidArgument, "train: no images");
  Rng rng(config.seed);
  std::vector<Parameter*> params = model.parameters();
  AdamConfig adam;
  adam.learning_rate = config.learning_rate;
  std::vector<Index> order(static_cast<std::size_t>(images.rows()));
  std::iota(order.begin(), order.end(), Index{0});
  MetricTrace trace;
  for (Index epoch = 0; epoch < config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::vector<Parameter> snapshot;
    for (Parameter* p : params) snapshot.push_back(*p);
    std::shuffle(order.begin(), order.end(), rng);
    double fe = 0.0, recon = 0.0, kl = 0.0;
    try {
      for (Index b0 = 0; b0 < images.rows(); b0 += config.batch) {
        const Index n = std::min(config.batch, images.rows() - b0);
        Matrix batch(n, images.cols());
        for (Index r = 0; r < n; ++r) batch.row(r) = images.row(order[b0 + r]);
        Tape tape;
        const TreeFreeEnergy terms = tree_free_energy(tape, model, batch, config.temperature, config.hard, rng);
        zero_grad(params);
        tape.backward(neg(terms.free_energy));
        adam_step(params, adam);
        fe += terms.free_energy.scalar() * n;
        recon += terms.recon.scalar() * n;
        kl += terms.kl.scalar() * n;
      }
      if (!std::isfinite(fe)) fail(ErrorCode::kNumerical, "train: non-finite free energy");
    } catch (const Error&) {
      for (std::size_t i = 0; i < params.size(); ++i) *params[i] = snapshot[i];
      throw;
    }
    const double total = static_cast<double>(images.rows());
    trace.free_energy.push_back(fe / total);
    trace.recon.push_back(recon / total);
    trace.kl.push_back(kl / total);
    trace.seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  }
  zero_grad(params);
  return trace;
}

double evaluate_free_energy(TreeSrvaeModel& model, const Matrix& images, Index samples, std::uint64_t seed) {
  require(samples >= 1 && images.rows() > 0, ErrorCode::kInvalidArgument, "evaluate: empty input");
  Rng rng(seed);
  double total = 0.0;
  const Index chunk = 1024;
  for (Index s = 0; s < samples; ++s)
    for (Index b0 = 0; b0 < images.rows(); b0 += chunk) {
      const Index n = std::min(chunk, images.rows() - b0);
      Tape tape;
      total += tree_free_energy(tape, model, images.middleRows(b0, n), 1.0, true, rng).free_energy.scalar() * n;
    }
  zero_grad(model.parameters());
  return total / static_cast<double>(images.rows() * samples);
}

}  // namespace srvae
