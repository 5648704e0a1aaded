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

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "fd_oracle.hpp"
#include "srvae/datasets.hpp"
#include "srvae/gmm_srvae.hpp"

using namespace srvae;
using namespace srvae::testing;

namespace {

double normal_pdf(double x, double mean, double var) {
  return std::exp(-0.5 * (x - mean) * (x - mean) / var) / std::sqrt(2.0 * std::numbers::pi * var);
}

double log_mvn(const Vector& x, const Vector& mean, const Matrix& cov) {
  Eigen::LLT<Matrix> llt(cov);
  const Vector d = x - mean;
  const double quad = d.dot(llt.solve(d));
  const Matrix l = llt.matrixL();
  double logdet = 0.0;
  for (Index i = 0; i < l.rows(); ++i) logdet += 2.0 * std::log(l(i, i));
  return -0.5 * (quad + logdet + static_cast<double>(x.size()) * std::log(2.0 * std::numbers::pi));
}

Matrix random_spd(Rng& rng, Index n, double ridge = 0.3) {
  const Matrix a = standard_normal(rng, n, n);
  return a * a.transpose() / static_cast<double>(n) + ridge * Matrix::Identity(n, n);
}

GmmPrior random_prior(Rng& rng, Index k, Index n) {
  GmmPrior p;
  p.weights = uniform(rng, k, 1, 0.2, 1.0);
  p.weights /= p.weights.sum();
  for (Index j = 0; j < k; ++j) {
    p.means.push_back(2.0 * standard_normal(rng, n, 1));
    p.covariances.push_back(random_spd(rng, n));
  }
  return p;
}

GmmModelConfig small_config(GmmVariant v) {
  GmmModelConfig c;
  c.obs_dim = 2;
  c.latent_dim = 2;
  c.components = 3;
  c.hidden = {6};
  c.variant = v;
  return c;
}

Matrix pinwheel(std::uint64_t seed, Index per_arm) {
  PinwheelConfig cfg;
  cfg.points_per_arm = per_arm;
  Rng rng(seed);
  return gen_pinwheel(cfg, rng).points;
}

}  // namespace

TEST_CASE("combine_gmm: flat potential returns the prior") {
  Rng rng(1);
  const GmmPrior p = random_prior(rng, 4, 2);
  const MixturePosterior q = combine_gmm(p, Vector::Zero(2), 1e8 * Matrix::Identity(2, 2));
  for (Index j = 0; j < 4; ++j) {
    CHECK(q.responsibilities(j) == doctest::Approx(p.weights(j)).epsilon(1e-6));
    CHECK((q.means[j] - p.means[j]).norm() < 1e-6);
    CHECK((q.covariances[j] - p.covariances[j]).norm() < 1e-6);
  }
  const MixtureKL kl = mixture_kl(q, p);
  CHECK(std::abs(kl.total()) < 1e-6);
}

TEST_CASE("combine_gmm: sharp potential pins the latent") {
  Rng rng(2);
  const GmmPrior p = random_prior(rng, 3, 2);
  Vector m(2);
  m << 0.4, -0.7;
  const MixturePosterior q = combine_gmm(p, m, 1e-10 * Matrix::Identity(2, 2));
  for (Index j = 0; j < 3; ++j) {
    CHECK((q.means[j] - m).norm() < 1e-8);
    CHECK(q.covariances[j].norm() < 1e-9);
  }
  // responsibilities follow pi_j N(m; mu_j, Sigma_j)
  Vector w(3);
  for (Index j = 0; j < 3; ++j) w(j) = p.weights(j) * std::exp(log_mvn(m, p.means[j], p.covariances[j]));
  w /= w.sum();
  CHECK((q.responsibilities - w).norm() < 1e-8);
}

TEST_CASE("combine_gmm: one component matches the information-form product") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const GmmPrior p = random_prior(rng, 1, 3);
    const Matrix sr = random_spd(rng, 3, 0.1);
    const Vector m = standard_normal(rng, 3, 1);
    const MixturePosterior q = combine_gmm(p, m, sr);
    const Matrix prec = p.covariances[0].inverse() + sr.inverse();
    const Matrix cov = prec.inverse();
    const Vector mean = cov * (p.covariances[0].inverse() * p.means[0] + sr.inverse() * m);
    CHECK(q.responsibilities(0) == doctest::Approx(1.0));
    CHECK((q.means[0] - mean).norm() < 1e-10);
    CHECK((q.covariances[0] - cov).norm() < 1e-10);
    CHECK(q.log_evidence(0) ==
          doctest::Approx(log_mvn(m, p.means[0], Matrix(p.covariances[0] + sr))).epsilon(1e-12));
  }
}

TEST_CASE("combine_gmm: scalar mixture against numerical quadrature") {
  GmmPrior p;
  p.weights = Vector(3);
  p.weights << 0.5, 0.3, 0.2;
  const double mus[] = {-2.0, 0.5, 3.0}, vars[] = {0.5, 1.0, 0.3};
  for (int j = 0; j < 3; ++j) {
    p.means.push_back(Vector::Constant(1, mus[j]));
    p.covariances.push_back(Matrix::Constant(1, 1, vars[j]));
  }
  const double m = 1.2, r = 0.8;
  const MixturePosterior q = combine_gmm(p, Vector::Constant(1, m), Matrix::Constant(1, 1, r));
  // Simpson's rule on [-20, 20]
  const int steps = 20000;
  const double lo = -20.0, h = 40.0 / steps;
  double z[3] = {0, 0, 0}, first[3] = {0, 0, 0}, second[3] = {0, 0, 0};
  for (int i = 0; i <= steps; ++i) {
    const double x = lo + i * h;
    const double wgt = (i == 0 || i == steps) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    for (int j = 0; j < 3; ++j) {
      const double f = wgt * p.weights(j) * normal_pdf(x, mus[j], vars[j]) * normal_pdf(x, m, r);
      z[j] += f;
      first[j] += f * x;
      second[j] += f * x * x;
    }
  }
  const double total = (z[0] + z[1] + z[2]) * h / 3.0;
  for (int j = 0; j < 3; ++j) {
    const double zj = z[j] * h / 3.0;
    const double mean = first[j] / z[j];
    CHECK(q.responsibilities(j) == doctest::Approx(zj / total).epsilon(1e-9));
    CHECK(q.means[j](0) == doctest::Approx(mean).epsilon(1e-9));
    CHECK(q.covariances[j](0, 0) == doctest::Approx(second[j] / z[j] - mean * mean).epsilon(1e-8));
  }
}

TEST_CASE("combine_gmm: two-dimensional grid quadrature") {
  Rng rng(17);
  const GmmPrior p = random_prior(rng, 3, 2);
  const Vector m = standard_normal(rng, 2, 1);
  const Matrix sr = random_spd(rng, 2, 0.4);
  const MixturePosterior q = combine_gmm(p, m, sr);
  const int steps = 600;
  const double lo = -14.0, h = 28.0 / steps;
  Vector z = Vector::Zero(3);
  double marginal = 0.0;
  Vector x(2);
  for (int a = 0; a < steps; ++a)
    for (int b = 0; b < steps; ++b) {
      x << lo + (a + 0.5) * h, lo + (b + 0.5) * h;
      const double lik = std::exp(log_mvn(x, m, sr));
      for (Index j = 0; j < 3; ++j) {
        z(j) += p.weights(j) * std::exp(log_mvn(x, p.means[j], p.covariances[j])) * lik;
        marginal += q.responsibilities(j) * std::exp(log_mvn(x, q.means[j], q.covariances[j]));
      }
    }
  z /= z.sum();
  CHECK((q.responsibilities - z).cwiseAbs().maxCoeff() < 1e-4);
  CHECK(std::abs(marginal * h * h - 1.0) < 1e-3);
}

TEST_CASE("combine_gmm: a far component gets no responsibility") {
  GmmPrior p;
  p.weights = Vector::Constant(2, 0.5);
  p.means = {Vector::Zero(2), Vector::Constant(2, 50.0)};
  p.covariances = {Matrix::Identity(2, 2), Matrix::Identity(2, 2)};
  const MixturePosterior q = combine_gmm(p, Vector::Zero(2), 0.1 * Matrix::Identity(2, 2));
  CHECK(q.responsibilities(1) < 1e-100);
  CHECK(q.responsibilities(0) == doctest::Approx(1.0));
}

TEST_CASE("combine_gmm: shape errors") {
  Rng rng(4);
  const GmmPrior p = random_prior(rng, 2, 2);
  CHECK_THROWS_AS(combine_gmm(p, Vector::Zero(3), Matrix::Identity(3, 3)), Error);
  CHECK_THROWS_AS(combine_gmm(p, Vector::Zero(2), -Matrix::Identity(2, 2)), Error);
}

TEST_CASE("mixture_kl: Monte Carlo agreement and permutation invariance") {
  Rng rng(5);
  const GmmPrior p = random_prior(rng, 2, 2);
  const Vector m = standard_normal(rng, 2, 1);
  const Matrix sr = random_spd(rng, 2, 0.5);
  const MixturePosterior q = combine_gmm(p, m, sr);
  const MixtureKL parts = mixture_kl(q, p);
  const double exact = parts.total();
  CHECK(parts.categorical >= 0.0);
  CHECK(parts.gaussian >= 0.0);

  std::discrete_distribution<int> pick(q.responsibilities.data(), q.responsibilities.data() + 2);
  const int draws = 1000000;
  double s1 = 0.0, s2 = 0.0;
  for (int i = 0; i < draws; ++i) {
    const int z = pick(rng);
    const Matrix l = q.covariances[z].llt().matrixL();
    const Vector h = q.means[z] + l * standard_normal(rng, 2, 1);
    const double v = std::log(q.responsibilities(z)) + log_mvn(h, q.means[z], q.covariances[z]) -
                     std::log(p.weights(z)) - log_mvn(h, p.means[z], p.covariances[z]);
    s1 += v;
    s2 += v * v;
  }
  const double mean = s1 / draws;
  const double se = std::sqrt((s2 / draws - mean * mean) / draws);
  CHECK(std::abs(mean - exact) < 3.0 * se);

  const GmmPrior p4 = random_prior(rng, 4, 2);
  const MixturePosterior q4 = combine_gmm(p4, m, sr);
  GmmPrior perm = p4;
  const int order[] = {2, 0, 3, 1};
  for (int j = 0; j < 4; ++j) {
    perm.weights(j) = p4.weights(order[j]);
    perm.means[j] = p4.means[order[j]];
    perm.covariances[j] = p4.covariances[order[j]];
  }
  const MixturePosterior qp = combine_gmm(perm, m, sr);
  for (int j = 0; j < 4; ++j)
    CHECK(qp.responsibilities(j) == doctest::Approx(q4.responsibilities(order[j])).epsilon(1e-12));
  CHECK(mixture_kl(qp, perm).total() == doctest::Approx(mixture_kl(q4, p4).total()).epsilon(1e-12));
}

TEST_CASE("gaussian_kl_dense: known values") {
  const Matrix i2 = Matrix::Identity(2, 2);
  CHECK(gaussian_kl_dense(Vector::Zero(2), i2, Vector::Zero(2), i2) == doctest::Approx(0.0));
  Vector m(2);
  m << 1.0, 2.0;
  CHECK(gaussian_kl_dense(m, i2, Vector::Zero(2), i2) == doctest::Approx(2.5));
  // univariate: log(s1/s0) + (s0^2 + d^2) / (2 s1^2) - 1/2
  CHECK(gaussian_kl_dense(Vector::Constant(1, 0.3), Matrix::Constant(1, 1, 0.25), Vector::Zero(1),
                          Matrix::Constant(1, 1, 4.0)) ==
        doctest::Approx(std::log(2.0 / 0.5) + (0.25 + 0.09) / 8.0 - 0.5));
}

TEST_CASE("gmm_free_energy: KL term matches the closed-form mixture") {
  for (GmmVariant v : {GmmVariant::kGmm, GmmVariant::kVae}) {
    Rng rng(6);
    GmmSrvaeModel model(small_config(v), rng);
    model.means.value *= 2.0;
    const Matrix y = standard_normal(rng, 7, 2);
    Tape tape;
    const GmmFreeEnergy fe = gmm_free_energy(tape, model, y, 1, rng);
    std::vector<Vector> means;
    std::vector<Matrix> covs;
    recognition_potentials(model, y, means, covs);
    const GmmPrior prior = model.prior();
    double kl = 0.0;
    for (Index b = 0; b < y.rows(); ++b) {
      if (v == GmmVariant::kGmm) {
        kl += mixture_kl(combine_gmm(prior, means[b], covs[b]), prior).total();
      } else {
        kl += gaussian_kl_dense(means[b], covs[b], Vector::Zero(2), Matrix::Identity(2, 2));
      }
    }
    CHECK(fe.kl.scalar() == doctest::Approx(kl / 7.0).epsilon(1e-7));
    CHECK(fe.free_energy.scalar() == doctest::Approx(fe.recon.scalar() - fe.kl.scalar()));
  }
}

TEST_CASE("gmm_free_energy: reconstruction against a Monte Carlo oracle") {
  Rng rng(7);
  GmmSrvaeModel model(small_config(GmmVariant::kGmm), rng);
  const Matrix y = standard_normal(rng, 1, 2);
  std::vector<Vector> means;
  std::vector<Matrix> covs;
  recognition_potentials(model, y, means, covs);
  const MixturePosterior q = combine_gmm(model.prior(), means[0], covs[0]);
  // oracle: sample z ~ q(z), h ~ q(h | z), average log N(y; decoder)
  std::discrete_distribution<int> pick(q.responsibilities.data(),
                                       q.responsibilities.data() + q.responsibilities.size());
  const int draws = 20000;
  Matrix h(draws, 2);
  for (int i = 0; i < draws; ++i) {
    const int z = pick(rng);
    const Matrix l = q.covariances[z].llt().matrixL();
    h.row(i) = (q.means[z] + l * standard_normal(rng, 2, 1)).transpose();
  }
  const Matrix out = model.decoder.evaluate(h);
  double s1 = 0.0, s2 = 0.0;
  for (int i = 0; i < draws; ++i) {
    double ll = 0.0;
    for (int d = 0; d < 2; ++d) {
      const double var = std::log1p(std::exp(out(i, 2 + d))) + 1e-6;
      ll += std::log(normal_pdf(y(0, d), out(i, d), var));
    }
    s1 += ll;
    s2 += ll * ll;
  }
  const double oracle = s1 / draws;
  const double se = std::sqrt((s2 / draws - oracle * oracle) / draws);
  Tape tape;
  const GmmFreeEnergy fe = gmm_free_energy(tape, model, y, 4000, rng);
  CHECK(std::abs(fe.recon.scalar() - oracle) < 5.0 * se);
}

TEST_CASE("gmm_free_energy: parameter gradients match finite differences") {
  for (GmmVariant v : {GmmVariant::kGmm, GmmVariant::kVae}) {
    CAPTURE(gmm_variant_name(v));
    Rng rng(8);
    GmmSrvaeModel model(small_config(v), rng);
    const Matrix y = standard_normal(rng, 5, 2);
    const Index k = v == GmmVariant::kGmm ? 3 : 1;
    const std::vector<Matrix> noise{standard_normal(rng, 5 * k, 2), standard_normal(rng, 5 * k, 2)};
    const double err = check_parameter_gradients(model.parameters(), [&](Tape& t) {
      return gmm_free_energy(t, model, y, noise).free_energy;
    });
    CHECK(err < 1e-5);
  }
}

TEST_CASE("generate: deterministic under a seed, mean matches an affine decoder") {
  GmmModelConfig cfg = small_config(GmmVariant::kGmm);
  cfg.hidden = {};
  Rng init(9);
  GmmSrvaeModel model(cfg, init);
  model.logits.value << 0.3, -0.4, 1.0;
  Rng a(10), b(10);
  CHECK(generate(model, 50, a) == generate(model, 50, b));

  Rng rng(11);
  const Index n = 100000;
  const Matrix y = generate(model, n, rng, false);
  const GmmPrior p = model.prior();
  Vector eh = Vector::Zero(2);
  for (Index j = 0; j < 3; ++j) eh += p.weights(j) * p.means[j];
  const Matrix w = model.decoder.weight(0).value;
  const Matrix bias = model.decoder.bias(0).value;
  const Matrix expected = eh.transpose() * w.leftCols(2) + bias.leftCols(2);
  const Vector mean = y.colwise().mean().transpose();
  const Vector sd = ((y.rowwise() - y.colwise().mean()).array().square().colwise().sum() /
                     static_cast<double>(n - 1)).sqrt().transpose();
  for (Index d = 0; d < 2; ++d) CHECK(std::abs(mean(d) - expected(0, d)) < 4.0 * sd(d) / std::sqrt(double(n)));
}

TEST_CASE("vae variant: fixed standard normal prior") {
  Rng rng(12);
  GmmSrvaeModel model(small_config(GmmVariant::kVae), rng);
  const GmmPrior p = model.prior();
  CHECK(p.components() == 1);
  CHECK(p.means[0].isZero());
  CHECK(p.covariances[0].isIdentity());
  for (Parameter* q : model.parameters()) CHECK(q->name.find("prior") == std::string::npos);
}

TEST_CASE("train: improves the bound, deterministic, checkpoint round trip") {
  const Matrix data = pinwheel(13, 60);
  GmmTrainConfig tc;
  tc.learning_rate = 1e-2;
  tc.batch = 100;
  tc.epochs = 30;
  tc.seed = 4;
  for (GmmVariant v : {GmmVariant::kGmm, GmmVariant::kVae}) {
    CAPTURE(gmm_variant_name(v));
    GmmModelConfig cfg = small_config(v);
    cfg.hidden = {50, 50};
    Rng r1(14), r2(14);
    GmmSrvaeModel m1(cfg, r1), m2(cfg, r2);
    const double before = evaluate_free_energy(m1, data, 8, 1);
    const MetricTrace t1 = train(m1, data, tc);
    const MetricTrace t2 = train(m2, data, tc);
    CHECK(t1.free_energy == t2.free_energy);
    const double after = evaluate_free_energy(m1, data, 8, 1);
    CHECK(after > before + 0.2);

    const GmmSrvaeModel back = GmmSrvaeModel::from_json(m1.to_json());
    GmmSrvaeModel copy = back;
    CHECK(evaluate_free_energy(copy, data, 8, 1) == after);
  }
}

TEST_CASE("train: zero learning rate leaves parameters unchanged") {
  Rng rng(15);
  GmmSrvaeModel model(small_config(GmmVariant::kGmm), rng);
  std::vector<Matrix> before;
  for (Parameter* p : model.parameters()) before.push_back(p->value);
  GmmTrainConfig tc;
  tc.learning_rate = 0.0;
  tc.epochs = 2;
  train(model, pinwheel(16, 20), tc);
  const std::vector<Parameter*> after = model.parameters();
  for (std::size_t i = 0; i < after.size(); ++i) CHECK(after[i]->value == before[i]);
}

TEST_CASE("train: KL warm-up") {
  const Matrix data = pinwheel(3, 20);
  auto run = [&](Index warmup) {
    Rng rng(5);
    GmmSrvaeModel model(small_config(GmmVariant::kGmm), rng);
    GmmTrainConfig tc;
    tc.learning_rate = 1e-2;
    tc.batch = 25;
    tc.epochs = 4;
    tc.kl_warmup_epochs = warmup;
    return train(model, data, tc).free_energy;
  };
  CHECK(run(1) == run(0));
  const auto warm = run(3);
  CHECK(warm != run(0));
  for (double v : warm) CHECK(std::isfinite(v));
  Rng rng(5);
  GmmSrvaeModel model(small_config(GmmVariant::kGmm), rng);
  GmmTrainConfig bad;
  bad.kl_warmup_epochs = -1;
  CHECK_THROWS_AS(train(model, data, bad), Error);
}

TEST_CASE("mixture_kl: potential equal to the only active component halves its covariance") {
  Rng rng(18);
  GmmPrior p = random_prior(rng, 2, 2);
  p.weights << 1.0, 0.0;
  const MixturePosterior q = combine_gmm(p, p.means[0], p.covariances[0]);
  CHECK(q.responsibilities(0) == doctest::Approx(1.0));
  CHECK((q.means[0] - p.means[0]).norm() < 1e-12);
  CHECK((q.covariances[0] - 0.5 * p.covariances[0]).norm() < 1e-12);
  CHECK(mixture_kl(q, p).total() == doctest::Approx(std::log(2.0) - 0.5).epsilon(1e-12));
}
