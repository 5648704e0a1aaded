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

#include <doctest.h>

#include <cmath>

#include "fd_oracle.hpp"
#include "srvae/datasets.hpp"
#include "srvae/tree_srvae.hpp"
#include "tree_oracle.hpp"

using namespace srvae;
using namespace srvae::testing;

namespace {

TreeModelConfig small_config(TreeVariant v) {
  TreeModelConfig c;
  c.structure = TreeStructure::chain(4, 2);
  c.structure.edges[1] = {2, 1};
  c.pixels = 6;
  c.recognition_hidden = {5};
  c.decoder_hidden = {4};
  c.variant = v;
  return c;
}

Matrix random_images(Rng& rng, Index n, Index pixels) {
  return uniform(rng, n, pixels, 0.0, 1.0).unaryExpr([](double u) { return u < 0.4 ? 1.0 : 0.0; });
}

void zero_last_layer(Mlp& net) {
  net.weight(net.depth() - 1).value.setZero();
  net.bias(net.depth() - 1).value.setZero();
}

}  // namespace

TEST_CASE("prior initialisation is uninformative and oriented") {
  Rng rng(1);
  TreeSrvaeModel m(small_config(TreeVariant::kTree), rng);
  const Beliefs b = sum_product(m.prior_graph());
  for (const Vector& v : b.singleton) CHECK((v.array() - 0.5).abs().maxCoeff() < 1e-14);
  CHECK(std::abs(b.log_z) < 1e-12);
  CHECK(m.structure().edges[1] == Edge{1, 2});
  CHECK(m.latent_dim() == 4);
  CHECK(m.recognition_width() == 4 * 2 + 3 * 4);
}

TEST_CASE("combine") {
  Rng rng(2);
  const TreeFactorGraph prior = random_tree(rng, 4, 3);
  TreeFactorGraph xi = prior;
  for (Vector& v : xi.log_psi) v = standard_normal(rng, v.size(), 1);
  for (Matrix& m : xi.log_psi_pair) m = standard_normal(rng, m.rows(), m.cols());
  SUBCASE("zero evidence leaves the prior") {
    const TreeFactorGraph q = combine(prior, TreeFactorGraph::uniform(prior.structure));
    CHECK(belief_error(sum_product(q), enumerate(prior)) < 1e-12);
  }
  SUBCASE("beliefs match the enumerated potential product") {
    const TreeFactorGraph q = combine(prior, xi);
    const auto& card = prior.structure.cardinalities;
    double mx = -INFINITY;
    std::vector<double> logs;
    for_each_state(card, [&](const std::vector<Index>& x) {
      logs.push_back(oracle_log_joint(prior, x) + oracle_log_joint(xi, x));
      mx = std::max(mx, logs.back());
    });
    double z = 0.0;
    for (double l : logs) z += std::exp(l - mx);
    CHECK(std::abs(sum_product(q).log_z - (mx + std::log(z))) < 1e-10);
    CHECK(belief_error(sum_product(q), enumerate(q)) < 1e-10);
  }
  SUBCASE("commutative") {
    const Beliefs a = sum_product(combine(prior, xi)), b = sum_product(combine(xi, prior));
    CHECK(belief_error(a, Enumerated{b.log_z, b.singleton, b.pairwise}) == 0.0);
  }
  SUBCASE("mismatched trees") {
    CHECK_THROWS_AS(combine(prior, TreeFactorGraph::uniform(TreeStructure::chain(4, 5))), Error);
  }
}

TEST_CASE("free energy limits") {
  Rng rng(3);
  TreeModelConfig cfg = small_config(TreeVariant::kTree);
  cfg.decoder_hidden = {};
  TreeSrvaeModel m(cfg, rng);
  const Matrix y = random_images(rng, 5, 6);
  SUBCASE("flat decoder gives log 0.5 per pixel") {
    zero_last_layer(m.decoder);
    Tape tape;
    const TreeFreeEnergy fe = tree_free_energy(tape, m, y, 0.5, true, rng);
    CHECK(fe.recon.scalar() == doctest::Approx(6.0 * std::log(0.5)).epsilon(1e-15));
  }
  SUBCASE("zero recognition potentials give zero KL") {
    zero_last_layer(m.recognition);
    Tape tape;
    const TreeFreeEnergy fe = tree_free_energy(tape, m, y, 0.5, false, rng);
    CHECK(std::abs(fe.kl.scalar()) < 1e-12);
  }
}

TEST_CASE("free energy gradients against finite differences") {
  for (TreeVariant v : {TreeVariant::kTree, TreeVariant::kSvae, TreeVariant::kVae}) {
    Rng rng(4);
    TreeSrvaeModel m(small_config(v), rng);
    for (Parameter& p : m.node_logits) p.value = 0.5 * standard_normal(rng, 1, p.value.cols());
    for (Parameter& p : m.edge_logits) p.value = 0.5 * standard_normal(rng, 1, p.value.cols());
    const Matrix y = random_images(rng, 3, 6);
    const auto noise = tree_gumbel_noise(m.structure(), 3, rng);
    auto build = [&](Tape& tape) { return tree_free_energy(tape, m, y, noise, 0.7, false).free_energy; };
    CHECK(check_parameter_gradients(m.parameters(), build) < 1e-5);
  }
}

TEST_CASE("exact free energy agrees with hard-sample Monte Carlo") {
  Rng rng(5);
  TreeSrvaeModel m(small_config(TreeVariant::kTree), rng);
  for (Parameter& p : m.edge_logits) p.value = standard_normal(rng, 1, p.value.cols());
  const Matrix y = random_images(rng, 1, 6);
  Tape tape;
  const TapeTreePotentials xi = m.recognize(tape, y);
  const double exact = exact_free_energy(tape, m, y.row(0).transpose(), xi).scalar();
  const int draws = 10000;
  const Matrix many = y.replicate(draws, 1);
  Tape t2;
  const auto noise = tree_gumbel_noise(m.structure(), draws, rng);
  const TapeTreePotentials prior = m.prior(t2);
  const TapeBeliefs bq = sum_product(m.structure(), combine(prior, m.recognize(t2, many)));
  const TapeBeliefs bp = sum_product(m.structure(), prior);
  const auto z = ancestral_sample(m.structure(), bq, noise, 1.0, true);
  const Vector per = (bernoulli_log_likelihood(t2, many, m.decode(t2, z)) - tree_kl(m.structure(), bq, bp)).value();
  const double mean = per.mean();
  const double se = std::sqrt((per.array() - mean).square().sum() / (draws - 1) / draws);
  CHECK(std::abs(mean - exact) < 3.0 * se);
}

TEST_CASE("exact posterior") {
  SUBCASE("flat likelihood returns the prior") {
    Rng rng(6);
    TreeSrvaeModel m(small_config(TreeVariant::kTree), rng);
    for (Parameter& p : m.edge_logits) p.value = standard_normal(rng, 1, p.value.cols());
    zero_last_layer(m.decoder);
    const ExactPosterior post = exact_posterior(m, random_images(rng, 1, 6).row(0).transpose());
    CHECK((post.joint - post.prior).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(post.log_evidence == doctest::Approx(6.0 * std::log(0.5)));
  }
  SUBCASE("sixteen bar latents") {
    Rng rng(7);
    TreeModelConfig cfg;
    cfg.decoder_hidden = {};
    TreeSrvaeModel m(cfg, rng);
    m.decoder.weight(0).value = bar_weights(8, 4.0).transpose();
    m.decoder.bias(0).value = bar_bias(8, 4.0).transpose();
    BarConfig bc;
    bc.samples = 1;
    const BarData d = gen_bar(bc, rng);
    const ExactPosterior post = exact_posterior(m, d.images.row(0).transpose());
    CHECK(post.joint.size() == 65536);
    CHECK(post.joint.sum() == doctest::Approx(1.0).epsilon(1e-12));
    for (const Vector& v : post.marginals) CHECK(v.sum() == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("explaining away raises latent mutual information") {
    Rng rng(8);
    TreeModelConfig cfg;
    cfg.structure = TreeStructure::chain(2, 2);
    cfg.pixels = 1;
    cfg.decoder_hidden = {};
    TreeSrvaeModel m(cfg, rng);
    m.decoder.weight(0).value << 4.0, 4.0;
    m.decoder.bias(0).value << -2.0;
    const ExactPosterior post = exact_posterior(m, Vector::Ones(1));
    const double prior_mi = mutual_information(post.prior, post.cardinalities, 0, 1);
    const double post_mi = mutual_information(post.joint, post.cardinalities, 0, 1);
    CHECK(std::abs(prior_mi) < 1e-15);
    CHECK(post_mi > prior_mi + 0.01);
    // Hand computation of the two-latent posterior.
    auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
    const double w[4] = {sig(-2.0), sig(2.0), sig(2.0), sig(6.0)};
    const double z = w[0] + w[1] + w[2] + w[3];
    for (int k = 0; k < 4; ++k) CHECK(post.joint(k) == doctest::Approx(w[k] / z).epsilon(1e-13));
  }
  SUBCASE("state bound") {
    Rng rng(9);
    TreeModelConfig cfg;
    cfg.structure = TreeStructure::chain(21, 2);
    cfg.decoder_hidden = {};
    TreeSrvaeModel m(cfg, rng);
    try {
      exact_posterior(m, Vector::Zero(64));
      FAIL("expected kTooLarge");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kTooLarge);
    }
  }
}

TEST_CASE("tree recognition bound is at least the singleton bound") {
  Rng rng(10);
  TreeModelConfig cfg;
  cfg.structure = TreeStructure::chain(3, 2);
  cfg.pixels = 4;
  cfg.decoder_hidden = {};
  TreeSrvaeModel m(cfg, rng);
  m.decoder.weight(0).value = 3.0 * standard_normal(rng, 3, 4);
  m.decoder.bias(0).value = standard_normal(rng, 1, 4);
  for (Parameter& p : m.edge_logits) p.value = standard_normal(rng, 1, 4);
  for (int trial = 0; trial < 3; ++trial) {
    const Vector y = random_images(rng, 1, 4).row(0).transpose();
    const ExactPosterior post = exact_posterior(m, y);
    const PotentialFit single = fit_potentials(m, y, false);
    const PotentialFit tree = fit_potentials(m, y, true, 2000, 0.05, &single.potentials);
    CHECK(tree.free_energy >= single.free_energy - 1e-6);
    CHECK(tree.free_energy <= post.log_evidence + 1e-9);
  }
}

TEST_CASE("baseline variants") {
  Rng rng(11);
  TreeSrvaeModel tree(small_config(TreeVariant::kTree), rng);
  TreeSrvaeModel svae(small_config(TreeVariant::kSvae), rng);
  TreeSrvaeModel vae(small_config(TreeVariant::kVae), rng);
  CHECK(tree.decoder_parameter_count() == svae.decoder_parameter_count());
  CHECK(svae.decoder_parameter_count() == vae.decoder_parameter_count());
  SUBCASE("zero pairwise potentials reproduce the singleton-only model") {
    for (Parameter& p : tree.edge_logits) p.value = standard_normal(rng, 1, p.value.cols());
    for (std::size_t e = 0; e < svae.edge_logits.size(); ++e) svae.edge_logits[e].value = tree.edge_logits[e].value;
    svae.node_logits[0].value = tree.node_logits[0].value;
    svae.decoder = tree.decoder;
    for (std::size_t l = 0; l + 1 < tree.recognition.depth(); ++l) {
      svae.recognition.weight(l).value = tree.recognition.weight(l).value;
      svae.recognition.bias(l).value = tree.recognition.bias(l).value;
    }
    const std::size_t last = tree.recognition.depth() - 1;
    Parameter& w = tree.recognition.weight(last);
    Parameter& b = tree.recognition.bias(last);
    w.value.rightCols(w.value.cols() - 8).setZero();
    b.value.rightCols(b.value.cols() - 8).setZero();
    svae.recognition.weight(last).value = w.value.leftCols(8);
    svae.recognition.bias(last).value = b.value.leftCols(8);
    const Matrix y = random_images(rng, 4, 6);
    const auto noise = tree_gumbel_noise(tree.structure(), 4, rng);
    Tape t1, t2;
    const double a = tree_free_energy(t1, tree, y, noise, 0.5, true).free_energy.scalar();
    const double c = tree_free_energy(t2, svae, y, noise, 0.5, true).free_energy.scalar();
    CHECK(std::abs(a - c) < 1e-12);
  }
  SUBCASE("the VAE prior factorises") {
    for (Parameter& p : vae.node_logits) p.value = standard_normal(rng, 1, 2);
    const ExactPosterior post = exact_posterior(vae, Vector::Zero(6));
    CHECK(mutual_information(post.prior, post.cardinalities, 0, 1) < 1e-14);
  }
}

TEST_CASE("training") {
  Rng rng(12);
  const Matrix y = random_images(rng, 40, 6);
  TreeTrainConfig tc;
  tc.batch = 16;
  tc.epochs = 3;
  tc.seed = 3;
  SUBCASE("deterministic for a seed") {
    Rng r1(1), r2(1);
    TreeSrvaeModel a(small_config(TreeVariant::kTree), r1), b(small_config(TreeVariant::kTree), r2);
    const MetricTrace ta = train(a, y, tc), tb = train(b, y, tc);
    CHECK(ta.free_energy == tb.free_energy);
    CHECK(a.to_json().dump() == b.to_json().dump());
  }
  SUBCASE("zero learning rate keeps parameters") {
    Rng r1(1);
    TreeSrvaeModel a(small_config(TreeVariant::kSvae), r1);
    const Json before = a.to_json();
    tc.learning_rate = 0.0;
    train(a, y, tc);
    const Json after = a.to_json();
    CHECK(before["decoder"]["layers"][0]["weight"]["value"] == after["decoder"]["layers"][0]["weight"]["value"]);
    CHECK(before["recognition"]["layers"][1]["bias"]["value"] == after["recognition"]["layers"][1]["bias"]["value"]);
  }
  SUBCASE("checkpoint round trip") {
    Rng r1(1);
    TreeSrvaeModel a(small_config(TreeVariant::kTree), r1);
    train(a, y, tc);
    TreeSrvaeModel b = TreeSrvaeModel::from_json(Json::parse(a.to_json().dump()));
    CHECK(evaluate_free_energy(a, y, 2, 5) == evaluate_free_energy(b, y, 2, 5));
  }
}
