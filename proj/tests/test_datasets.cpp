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
#include <filesystem>
#include <limits>

#include "srvae/datasets.hpp"

using namespace srvae;

namespace {

double logistic(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// Lloyd's algorithm from k-means++ seeds, best of several restarts.
std::vector<int> kmeans(const Matrix& x, int k, Rng& rng) {
  double best_cost = std::numeric_limits<double>::infinity();
  std::vector<int> best;
  for (int restart = 0; restart < 10; ++restart) {
    Matrix c(k, x.cols());
    std::uniform_int_distribution<Index> first(0, x.rows() - 1);
    c.row(0) = x.row(first(rng));
    for (int j = 1; j < k; ++j) {
      Vector d(x.rows());
      for (Index i = 0; i < x.rows(); ++i)
        d(i) = (c.topRows(j).rowwise() - x.row(i)).rowwise().squaredNorm().minCoeff();
      std::discrete_distribution<Index> pick(d.data(), d.data() + d.size());
      c.row(j) = x.row(pick(rng));
    }
    std::vector<int> label(static_cast<std::size_t>(x.rows()), 0);
    for (int it = 0; it < 100; ++it) {
      for (Index i = 0; i < x.rows(); ++i) {
        Index j;
        (c.rowwise() - x.row(i)).rowwise().squaredNorm().minCoeff(&j);
        label[i] = static_cast<int>(j);
      }
      Matrix sum = Matrix::Zero(k, x.cols());
      Vector count = Vector::Zero(k);
      for (Index i = 0; i < x.rows(); ++i) {
        sum.row(label[i]) += x.row(i);
        count(label[i]) += 1.0;
      }
      for (int j = 0; j < k; ++j)
        if (count(j) > 0) c.row(j) = sum.row(j) / count(j);
    }
    double cost = 0.0;
    for (Index i = 0; i < x.rows(); ++i) cost += (x.row(i) - c.row(label[i])).squaredNorm();
    if (cost < best_cost) {
      best_cost = cost;
      best = label;
    }
  }
  return best;
}

double silhouette(const Matrix& x, const std::vector<int>& label, int k) {
  double total = 0.0;
  for (Index i = 0; i < x.rows(); ++i) {
    Vector sum = Vector::Zero(k), count = Vector::Zero(k);
    for (Index j = 0; j < x.rows(); ++j) {
      if (j == i) continue;
      sum(label[j]) += (x.row(i) - x.row(j)).norm();
      count(label[j]) += 1.0;
    }
    const int own = label[i];
    if (count(own) == 0) continue;
    const double a = sum(own) / count(own);
    double b = std::numeric_limits<double>::infinity();
    for (int j = 0; j < k; ++j)
      if (j != own && count(j) > 0) b = std::min(b, sum(j) / count(j));
    total += (b - a) / std::max(a, b);
  }
  return total / static_cast<double>(x.rows());
}

}  // namespace

TEST_CASE("bar: weights, bias and the two closed-form rates") {
  const Matrix w = bar_weights(4, 10.0);
  const Vector b = bar_bias(4, 10.0);
  CHECK(w.rows() == 16);
  CHECK(w.cols() == 8);
  CHECK(b.isConstant(-10.0));
  Vector z = Vector::Zero(8);
  z(1) = 1.0;  // horizontal bar in row 1
  const Vector rate = (w * z + b).unaryExpr([](double v) { return logistic(v); });
  CHECK(rate(1 * 4 + 2) == doctest::Approx(logistic(10.0)));
  CHECK(rate(0) == doctest::Approx(4.5e-5).epsilon(0.01));
  CHECK(cross_pattern(3, 0, 2).sum() == doctest::Approx(5.0));
}

TEST_CASE("bar: empirical pixel rates agree with sigma(Wz + b)") {
  BarConfig cfg;
  cfg.side = 4;
  cfg.omega = 1.5;
  cfg.samples = 10000;
  Rng rng(1);
  const BarData data = gen_bar(cfg, rng);
  const Matrix w = bar_weights(4, 1.5);
  const Vector b = bar_bias(4, 1.5);
  Matrix p = data.latents * w.transpose();
  p.rowwise() += b.transpose();
  p = p.unaryExpr([](double v) { return logistic(v); });
  for (Index d = 0; d < 16; ++d) {
    const double diff = (data.images.col(d) - p.col(d)).sum();
    const double sd = std::sqrt((p.col(d).array() * (1.0 - p.col(d).array())).sum());
    CHECK(std::abs(diff) < 3.0 * sd);
  }
  // independent fair latents
  for (Index i = 0; i < 8; ++i) CHECK(std::abs(data.latents.col(i).mean() - 0.5) < 3.0 * 0.5 / 100.0);
}

TEST_CASE("bar: side-dependent images show one horizontal and one vertical bar") {
  BarConfig cfg;
  cfg.side = 8;
  cfg.omega = 50.0;
  cfg.side_dependent = true;
  cfg.samples = 1000;
  Rng rng(2);
  const BarData data = gen_bar(cfg, rng);
  for (Index s = 0; s < cfg.samples; ++s) {
    int rows = 0, cols = 0;
    Index r = -1, c = -1;
    for (Index i = 0; i < 8; ++i) {
      bool row_on = true, col_on = true;
      for (Index j = 0; j < 8; ++j) {
        row_on = row_on && data.images(s, i * 8 + j) == 1.0;
        col_on = col_on && data.images(s, j * 8 + i) == 1.0;
      }
      if (row_on) ++rows, r = i;
      if (col_on) ++cols, c = i;
    }
    REQUIRE(rows == 1);
    REQUIRE(cols == 1);
    CHECK(data.images.row(s).transpose() == cross_pattern(8, r, c));
    CHECK(data.latents(s, r) == 1.0);
    CHECK(data.latents(s, 8 + c) == 1.0);
    CHECK(data.latents.row(s).sum() == 2.0);
  }
}

TEST_CASE("bar: invalid configurations") {
  Rng rng(0);
  BarConfig cfg;
  cfg.side = 1;
  CHECK_THROWS_AS(gen_bar(cfg, rng), Error);
  cfg.side = 4;
  cfg.omega = 0.0;
  CHECK_THROWS_AS(gen_bar(cfg, rng), Error);
}

TEST_CASE("pinwheel: straight rays without warp or tangential noise") {
  PinwheelConfig cfg;
  cfg.tangential_std = 0.0;
  cfg.rate = 0.0;
  cfg.points_per_arm = 50;
  Rng rng(3);
  const PinwheelData data = gen_pinwheel(cfg, rng);
  for (Index i = 0; i < data.points.rows(); ++i) {
    const double angle = 2.0 * std::numbers::pi * data.labels[i] / 5.0;
    const double cross = data.points(i, 0) * std::sin(angle) - data.points(i, 1) * std::cos(angle);
    CHECK(std::abs(cross) < 1e-12);
  }
}

TEST_CASE("pinwheel: centred at the origin, five recoverable clusters") {
  PinwheelConfig cfg;
  Rng rng(4);
  const PinwheelData data = gen_pinwheel(cfg, rng);
  REQUIRE(data.points.rows() == 2500);
  const Vector mean = data.points.colwise().mean().transpose();
  for (Index d = 0; d < 2; ++d) {
    const double sd = std::sqrt((data.points.col(d).array() - mean(d)).square().mean());
    CHECK(std::abs(mean(d)) < 3.0 * sd / 50.0);
  }
  Rng km(5);
  const std::vector<int> label = kmeans(data.points, 5, km);
  CHECK(silhouette(data.points, label, 5) > 0.3);
}

TEST_CASE("gpfa: noiseless identity decoder returns sigmoid of the embedding") {
  GpfaSynthConfig cfg;
  cfg.noise = 0.0;
  cfg.mlp_decoder = false;
  cfg.length = 64;
  Rng rng(6);
  const GpfaSynthData data = gen_gpfa(cfg, rng);
  const Matrix expected = data.embeddings.unaryExpr([](double v) { return logistic(v); });
  CHECK((data.observations - expected).cwiseAbs().maxCoeff() < 1e-15);
  CHECK((data.embeddings - data.latents * data.mixing.transpose()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("gpfa: lag-zero latent variance matches the kernel variance") {
  GpfaSynthConfig cfg;
  cfg.variance = 2.0;
  cfg.length = 200;  // inputs span 4 lengthscales, so the two ends are independent
  double s1 = 0.0, s2 = 0.0;
  int n = 0;
  for (std::uint64_t rep = 0; rep < 100; ++rep) {
    Rng rng(100 + rep);
    const GpfaSynthData data = gen_gpfa(cfg, rng);
    for (Index k = 0; k < 2; ++k)
      for (Index t : {Index{0}, cfg.length - 1}) {
        const double v = data.latents(t, k) * data.latents(t, k);
        s1 += v;
        s2 += v * v;
        ++n;
      }
  }
  const double mean = s1 / n;
  const double se = std::sqrt((s2 / n - mean * mean) / n);
  CHECK(std::abs(mean - 2.0) < 3.0 * se);
}

TEST_CASE("gpfa: Poisson counts follow the generating rates") {
  GpfaSynthConfig cfg;
  cfg.likelihood = Likelihood::kPoisson;
  cfg.length = 400;
  Rng rng(7);
  const GpfaSynthData data = gen_gpfa(cfg, rng);
  CHECK((data.observations.array() >= 0.0).all());
  CHECK((data.observations.array() == data.observations.array().floor()).all());
  const double diff = (data.observations - data.clean).sum();
  CHECK(std::abs(diff) < 3.0 * std::sqrt(data.clean.sum()));
}

TEST_CASE("generators are pure functions of config and seed") {
  GpfaSynthConfig g;
  g.length = 50;
  Rng a(8), b(8);
  CHECK(gen_gpfa(g, a).observations == gen_gpfa(g, b).observations);
  PinwheelConfig p;
  Rng c(9), d(9);
  CHECK(gen_pinwheel(p, c).points == gen_pinwheel(p, d).points);
  BarConfig bc;
  bc.samples = 20;
  Rng e(10), f(10);
  CHECK(gen_bar(bc, e).images == gen_bar(bc, f).images);
}

TEST_CASE("gpfa: invalid configurations") {
  Rng rng(0);
  GpfaSynthConfig cfg;
  cfg.latents = 11;
  CHECK_THROWS_AS(gen_gpfa(cfg, rng), Error);
  cfg.latents = 2;
  cfg.length = 1;
  CHECK_THROWS_AS(gen_gpfa(cfg, rng), Error);
}

TEST_CASE("series csv round trip") {
  GpfaSynthConfig cfg;
  cfg.length = 10;
  Rng rng(11);
  const GpfaSynthData data = gen_gpfa(cfg, rng);
  const std::string path = (std::filesystem::temp_directory_path() / "srvae_series_test.csv").string();
  write_series_csv(path, data.inputs, data.observations);
  Matrix x, y;
  read_series_csv(path, x, y);
  std::filesystem::remove(path);
  CHECK((x - data.inputs).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((y - data.observations).cwiseAbs().maxCoeff() < 1e-12);
}
