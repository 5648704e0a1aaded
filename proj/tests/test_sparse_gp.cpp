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
#include "gp_oracle.hpp"
#include "srvae/random.hpp"
#include "srvae/sparse_gp.hpp"

using namespace srvae;
using namespace srvae::testing;

TEST_CASE("eq_kernel values") {
  const KernelParams unit = KernelParams::from(1.0, 1.0);
  Vector a(1), b(1);
  a << 0.3;
  b << 1.3;
  CHECK(eq_kernel(a, a, KernelParams::from(2.5, 0.7)) == doctest::Approx(2.5));
  CHECK(eq_kernel(a, b, unit) == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
  CHECK(eq_kernel(a, b, unit) == eq_kernel(b, a, unit));
  b << 40.0;
  CHECK(eq_kernel(a, b, unit) < 1e-300);
}

TEST_CASE("projector interpolates and decays") {
  Rng rng(3);
  InducingModel m = random_model(rng, 2, 4, 3);
  // Exact interpolation only holds without the diagonal jitter.
  m.jitter.enabled = false;
  for (Index k = 0; k < 2; ++k) {
    for (Index j = 0; j < 4; ++j) {
      const Matrix f = projector(m.inducing[k].row(j).transpose(), k, m);
      Matrix e = Matrix::Zero(1, 4);
      e(0, j) = 1.0;
      CHECK((f - e).cwiseAbs().maxCoeff() < 1e-8);
    }
  }
  Vector far(1);
  far << 60.0;
  CHECK(projector(far, 0, m).cwiseAbs().maxCoeff() < 1e-6);

  InducingModel single;
  single.inducing = {Matrix::Constant(1, 1, 0.5)};
  single.kernels = {KernelParams::from(1.7, 0.9)};
  single.mixing = Matrix::Ones(1, 1);
  single.offset = Vector::Zero(1);
  Vector x(1);
  x << 1.1;
  const double expected = std::exp(-0.36 / 0.81) / (1.0 + 1e-8);
  CHECK(projector(x, 0, single)(0, 0) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("conditional_h at inducing points and with zero map") {
  Rng rng(5);
  InducingModel m = random_model(rng, 2, 3, 4);
  m.inducing[1] = m.inducing[0];
  m.jitter.enabled = false;
  const Vector u = standard_normal(rng, 6, 1);
  const GaussianDense g = conditional_h(m.inducing[0].row(1).transpose(), u, m);
  CHECK(g.covariance.cwiseAbs().maxCoeff() < 1e-8);

  m.mixing.setZero();
  Vector x(1);
  x << 0.77;
  const GaussianDense z = conditional_h(x, u, m);
  CHECK((z.mean - m.offset).norm() == doctest::Approx(0.0));
  CHECK(z.covariance.cwiseAbs().maxCoeff() == doctest::Approx(0.0));
}

TEST_CASE("conditional_h scalar GP conditional by hand") {
  InducingModel m;
  m.inducing = {(Matrix(2, 1) << 0.0, 1.0).finished()};
  m.kernels = {KernelParams::from(1.0, 1.0)};
  m.mixing = Matrix::Constant(1, 1, 2.0);
  m.offset = Vector::Constant(1, 0.5);
  Vector x(1), u(2);
  x << 0.5;
  u << 1.0, -1.0;
  // k(x, z) = [e^-0.25, e^-0.25], K_zz = [[1, e^-1], [e^-1, 1]] (+1e-8 I).
  const double a = std::exp(-0.25), c = std::exp(-1.0), j = 1.0 + 1e-8;
  const double det = j * j - c * c;
  const double w0 = a * (j - c) / det, w1 = a * (j - c) / det;
  const double mean_f = w0 * 1.0 + w1 * -1.0;
  const double var_f = 1.0 - (w0 * a + w1 * a);
  const GaussianDense g = conditional_h(x, u, m);
  CHECK(g.mean(0) == doctest::Approx(2.0 * mean_f + 0.5).epsilon(1e-12));
  CHECK(g.covariance(0, 0) == doctest::Approx(4.0 * var_f).epsilon(1e-9));
}

TEST_CASE("structured_qU matches dense linear-Gaussian conditioning over 100 seeds") {
  double worst = 0.0;
  for (int seed = 0; seed < 100; ++seed) {
    Rng rng(1000 + seed);
    const Index k = 1 + seed % 3;
    const Index mm = 1 + (seed / 3) % 4;
    const Index t = 1 + (seed * 7) % 8;
    const Index n = 1 + (seed * 5) % 5;
    const InducingModel m = random_model(rng, k, mm, n);
    const EvidenceBatch e = random_evidence(rng, t, n, 1.2 * (mm - 1));
    const GaussianDense got = structured_qU(e, m);
    const GaussianDense want = oracle_posterior(e, m);
    worst = std::max({worst, relative_error(got.covariance, want.covariance),
                      relative_error(got.mean, want.mean)});
    CHECK(relative_error(got.chol * got.chol.transpose(), got.covariance) < 1e-10);
  }
  CHECK(worst < 1e-8);
}

TEST_CASE("structured_qU spec instance K=2 M=3 T=5 N=4") {
  Rng rng(77);
  const InducingModel m = random_model(rng, 2, 3, 4);
  const EvidenceBatch e = random_evidence(rng, 5, 4, 2.4);
  const GaussianDense got = structured_qU(e, m);
  const GaussianDense want = oracle_posterior(e, m);
  CHECK(relative_error(got.covariance, want.covariance) < 1e-8);
  CHECK(relative_error(got.mean, want.mean) < 1e-8);
  // Mixing couples the latents, so inter-latent blocks are populated.
  CHECK(got.covariance.block(0, 3, 3, 3).norm() > 1e-6);
}

TEST_CASE("structured_qU prior limits") {
  Rng rng(8);
  const InducingModel m = random_model(rng, 2, 3, 3);
  EvidenceBatch empty;
  empty.inputs.resize(0, 1);
  empty.mean.resize(0, 3);
  empty.variance.resize(0, 3);
  const GaussianDense prior = structured_qU(empty, m);
  CHECK(prior.mean.cwiseAbs().maxCoeff() == 0.0);
  CHECK(relative_error(prior.covariance, prior_covariance_U(m)) < 1e-12);

  EvidenceBatch vague = random_evidence(rng, 6, 3, 2.4);
  vague.variance.setConstant(1e8);
  const GaussianDense q = structured_qU(vague, m);
  CHECK(q.mean.cwiseAbs().maxCoeff() < 1e-6);
  CHECK((q.covariance - prior_covariance_U(m)).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("adding a potential never increases posterior variances") {
  for (int seed = 0; seed < 20; ++seed) {
    Rng rng(300 + seed);
    const InducingModel m = random_model(rng, 2, 3, 3);
    const EvidenceBatch full = random_evidence(rng, 6, 3, 2.4);
    EvidenceBatch part;
    part.inputs = full.inputs.topRows(5);
    part.mean = full.mean.topRows(5);
    part.variance = full.variance.topRows(5);
    const Vector before = structured_qU(part, m).covariance.diagonal();
    const Vector after = structured_qU(full, m).covariance.diagonal();
    CHECK(((after - before).array() <= 1e-12).all());
  }
}

TEST_CASE("structured_qU rejects non-positive variances") {
  Rng rng(9);
  const InducingModel m = random_model(rng, 1, 2, 2);
  EvidenceBatch e = random_evidence(rng, 3, 2, 1.2);
  e.variance(1, 0) = 0.0;
  try {
    structured_qU(e, m);
    FAIL("expected an error");
  } catch (const Error& err) {
    CHECK(err.code() == ErrorCode::kZeroVariance);
  }
}

TEST_CASE("factored_qU empty evidence and single-latent equivalence") {
  Rng rng(11);
  InducingModel m = random_model(rng, 3, 3, 3);
  EvidenceBatch empty;
  empty.inputs.resize(0, 1);
  empty.mean.resize(0, 3);
  empty.variance.resize(0, 3);
  const std::vector<GaussianDense> prior = factored_qU(empty, m);
  const Matrix ku = prior_covariance_U(m);
  for (Index k = 0; k < 3; ++k)
    CHECK(relative_error(prior[k].covariance, ku.block(3 * k, 3 * k, 3, 3)) < 1e-12);
  const GaussianDense joint = block_diagonal(prior);
  CHECK(joint.covariance.block(0, 3, 3, 6).cwiseAbs().maxCoeff() == 0.0);

  InducingModel one = random_model(rng, 1, 4, 1);
  one.mixing.setOnes();
  one.offset.setZero();
  const EvidenceBatch e = random_evidence(rng, 7, 1, 3.6);
  const GaussianDense s = structured_qU(e, one);
  const GaussianDense f = factored_qU(e, one).front();
  CHECK(relative_error(f.covariance, s.covariance) < 1e-12);
  CHECK(relative_error(f.mean, s.mean) < 1e-12);
}

TEST_CASE("factored equals structured when no explaining away is possible") {
  Rng rng(12);
  InducingModel m = random_model(rng, 3, 3, 3);
  m.mixing = Vector::Constant(3, 1.0).asDiagonal();
  m.mixing.diagonal() << 0.7, -1.3, 2.0;
  const EvidenceBatch e = random_evidence(rng, 6, 3, 2.4);
  EvidenceBatch on_f = e;
  for (Index k = 0; k < 3; ++k) {
    const double c = m.mixing(k, k);
    on_f.mean.col(k) = (e.mean.col(k).array() - m.offset(k)) / c;
    on_f.variance.col(k) = e.variance.col(k) / (c * c);
  }
  const GaussianDense s = structured_qU(e, m);
  const GaussianDense f = block_diagonal(factored_qU(on_f, m));
  CHECK(relative_error(f.covariance, s.covariance) < 1e-8);
  CHECK(relative_error(f.mean, s.mean) < 1e-8);
}

TEST_CASE("posterior_h_marginal limits") {
  Rng rng(13);
  InducingModel m = random_model(rng, 2, 3, 4);
  Vector x(1);
  x << 0.9;
  const PosteriorMarginal p = posterior_h_marginal(x, prior_U(m), m);
  Matrix kx = Matrix::Zero(2, 2);
  for (Index k = 0; k < 2; ++k) kx(k, k) = m.kernels[k].variance();
  CHECK((p.mean - m.offset).cwiseAbs().maxCoeff() < 1e-8);
  CHECK((p.covariance - m.mixing * kx * m.mixing.transpose()).cwiseAbs().maxCoeff() < 1e-8);
  CHECK(relative_error(p.chol * p.chol.transpose(), p.covariance) < 1e-7);

  m.mixing = Matrix::Identity(2, 2);
  m.offset = Vector::Zero(2);
  m.inducing[1] = m.inducing[0];
  m.jitter.enabled = false;
  const EvidenceBatch e = random_evidence(rng, 4, 2, 2.4);
  const GaussianDense q = structured_qU(e, m);
  const PosteriorMarginal at = posterior_h_marginal(m.inducing[0].row(2).transpose(), q, m);
  CHECK(std::abs(at.mean(0) - q.mean(2)) < 1e-8);
  CHECK(std::abs(at.mean(1) - q.mean(5)) < 1e-8);
}

TEST_CASE("posterior_h_marginal matches the joint (U, f(x)) Gaussian") {
  for (int seed = 0; seed < 10; ++seed) {
    Rng rng(500 + seed);
    const InducingModel m = random_model(rng, 2, 3, 3);
    const EvidenceBatch e = random_evidence(rng, 5, 3, 2.4);
    const GaussianDense q = structured_qU(e, m);
    Vector x(1);
    x << uniform(rng, 1, 1, 0.0, 2.4)(0, 0);
    // Joint prior covariance over (U, f(x)), then condition f(x) on U.
    const Index p = m.total_inducing();
    Matrix joint = Matrix::Zero(p + 2, p + 2);
    joint.topLeftCorner(p, p) = oracle_ku(m);
    for (Index k = 0; k < 2; ++k) {
      const Matrix kux = kernel_matrix(m.inducing[k], x.transpose(), m.kernels[k]);
      joint.block(3 * k, p + k, 3, 1) = kux;
      joint.block(p + k, 3 * k, 1, 3) = kux.transpose();
      joint(p + k, p + k) = m.kernels[k].variance();
    }
    const Matrix kuu_inv = dense_inverse(joint.topLeftCorner(p, p));
    const Matrix a = joint.bottomLeftCorner(2, p) * kuu_inv;
    const Matrix schur = joint.bottomRightCorner(2, 2) - a * joint.topRightCorner(p, 2);
    const Vector mean_f = a * q.mean;
    const Matrix cov_f = a * q.covariance * a.transpose() + schur;
    const PosteriorMarginal got = posterior_h_marginal(x, q, m);
    CHECK(relative_error(got.mean, m.mixing * mean_f + m.offset) < 1e-8);
    CHECK(relative_error(got.covariance, m.mixing * cov_f * m.mixing.transpose()) < 1e-8);
  }
}

TEST_CASE("factored_posterior_h consistency") {
  Rng rng(14);
  InducingModel m = random_model(rng, 2, 3, 4);
  const EvidenceBatch e = random_evidence(rng, 5, 2, 2.4);
  const std::vector<GaussianDense> qs = factored_qU(e, m);
  Vector x(1);
  x << 1.7;
  const FactoredMarginal f = factored_posterior_h(x, qs, m);
  const PosteriorMarginal full = posterior_h_marginal(x, block_diagonal(qs), m);
  CHECK(relative_error(f.mean, full.mean) < 1e-10);
  CHECK(relative_error(f.variance, Vector(full.covariance.diagonal())) < 1e-10);

  const std::vector<GaussianDense> priors = factored_qU(
      EvidenceBatch{Matrix(0, 1), Matrix(0, 2), Matrix(0, 2)}, m);
  const FactoredMarginal fp = factored_posterior_h(x, priors, m);
  Vector want = Vector::Zero(4);
  for (Index k = 0; k < 2; ++k)
    want += m.mixing.col(k).cwiseAbs2() * m.kernels[k].variance();
  CHECK(relative_error(fp.variance, want) < 1e-8);

  m.mixing.setZero();
  const FactoredMarginal z = factored_posterior_h(x, qs, m);
  CHECK((z.mean - m.offset).norm() == 0.0);
  CHECK(z.variance.norm() == 0.0);
}

TEST_CASE("gaussian_kl closed form cases") {
  Rng rng(15);
  const Matrix a = standard_normal(rng, 6, 6);
  const GaussianDense p =
      GaussianDense::from(standard_normal(rng, 6, 1), a * a.transpose() + Matrix::Identity(6, 6));
  CHECK(std::abs(gaussian_kl(p, p)) < 1e-10);
  const GaussianDense q1 = GaussianDense::from(Vector::Constant(1, 1.0), Matrix::Ones(1, 1));
  const GaussianDense p1 = GaussianDense::from(Vector::Zero(1), Matrix::Ones(1, 1));
  CHECK(gaussian_kl(q1, p1) == doctest::Approx(0.5).epsilon(1e-14));
  try {
    gaussian_kl(q1, p);
    FAIL("expected an error");
  } catch (const Error& err) {
    CHECK(err.code() == ErrorCode::kShapeMismatch);
  }
}

TEST_CASE("gaussian_kl matches a Monte-Carlo estimate") {
  Rng rng(16);
  const Matrix a = standard_normal(rng, 6, 6);
  const Matrix b = standard_normal(rng, 6, 6);
  const GaussianDense q = GaussianDense::from(standard_normal(rng, 6, 1),
                                              0.5 * a * a.transpose() + Matrix::Identity(6, 6));
  const GaussianDense p = GaussianDense::from(standard_normal(rng, 6, 1),
                                              b * b.transpose() + 2.0 * Matrix::Identity(6, 6));
  const int n = 1000000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const Vector x = q.mean + q.chol * standard_normal(rng, 6, 1);
    const double d = gaussian_logpdf(x, q.mean, q.chol) - gaussian_logpdf(x, p.mean, p.chol);
    s += d;
    s2 += d * d;
  }
  const double mean = s / n;
  const double se = std::sqrt((s2 / n - mean * mean) / n);
  CHECK(std::abs(gaussian_kl(q, p) - mean) < 3.0 * se);
}

TEST_CASE("whitened tape route: marginals agree with the plain route") {
  Rng rng(17);
  const InducingModel m = random_model(rng, 3, 4, 4);
  const EvidenceBatch e = random_evidence(rng, 6, 4, 3.6);
  const GaussianDense q = structured_qU(e, m);
  Tape tape;
  const TapeInducing ind = tape_inducing(tape, m);
  const TapeProjection proj = tape_project(tape, ind, tape.constant(e.inputs));
  const WhitenedPosterior post = tape_whitened_posterior(
      tape, proj.whitened, tape.constant(m.mixing), tape.constant(m.offset.transpose()),
      tape.constant(e.mean), tape.constant(e.variance));
  CHECK(post.kl.scalar() == doctest::Approx(gaussian_kl(q, prior_U(m))).epsilon(1e-8));

  const Matrix xs = uniform(rng, 5, 1, 0.0, 3.6);
  const LatentMarginals lm = tape_latent_marginals(tape, tape_project(tape, ind, tape.constant(xs)), post);
  for (Index t = 0; t < 5; ++t) {
    const PosteriorMarginal h = posterior_h_marginal(xs.row(t).transpose(), q, m);
    const Vector mean_h = m.mixing * lm.mean.value().row(t).transpose() + m.offset;
    const Eigen::RowVectorXd packed = lm.covariance.value().row(t);
    const Matrix cov_f = Eigen::Map<const Eigen::Matrix<double, 3, 3, Eigen::RowMajor>>(packed.data());
    CHECK(relative_error(mean_h, h.mean) < 1e-8);
    CHECK(relative_error(m.mixing * cov_f * m.mixing.transpose(), h.covariance) < 1e-8);
  }
}

TEST_CASE("whitened tape route gradients match finite differences") {
  Rng rng(18);
  const InducingModel m = random_model(rng, 2, 3, 3);
  const EvidenceBatch e = random_evidence(rng, 4, 3, 2.4);
  const Matrix xs = uniform(rng, 3, 1, 0.0, 2.4);
  const Matrix weights = standard_normal(rng, 3, 4);
  auto build = [&](Tape& tape, const std::vector<Var>& v) {
    TapeInducing ind;
    ind.inducing = {v[4], tape.constant(m.inducing[1])};
    ind.log_variance = {v[3], tape.constant(Matrix::Constant(1, 1, m.kernels[1].log_variance))};
    ind.log_lengthscale = {tape.constant(Matrix::Constant(1, 1, m.kernels[0].log_lengthscale)),
                           v[5]};
    finish_tape_inducing(ind, m.jitter);
    const TapeProjection proj = tape_project(tape, ind, tape.constant(e.inputs));
    const WhitenedPosterior post =
        tape_whitened_posterior(tape, proj.whitened, v[0], tape.constant(m.offset.transpose()),
                                v[1], exp(v[2]));
    const LatentMarginals lm = tape_latent_marginals(tape, tape_project(tape, ind, tape.constant(xs)), post);
    return add(post.kl, add(sum(mul(lm.covariance, tape.constant(weights))),
                            sum(square(lm.mean))));
  };
  const double err = srvae::testing::check_gradients(
      build, {m.mixing, e.mean, e.variance.array().log().matrix(),
              Matrix::Constant(1, 1, m.kernels[0].log_variance), m.inducing[0],
              Matrix::Constant(1, 1, m.kernels[1].log_lengthscale)});
  CHECK(err < 1e-5);
}
