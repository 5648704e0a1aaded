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

#include "srvae/datasets.hpp"

#include <cmath>
#include <numbers>

#include "srvae/sparse_gp.hpp"

namespace srvae {

namespace {

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }
double softplus(double v) { return v > 30.0 ? v : std::log1p(std::exp(v)); }

}  // namespace

Matrix bar_weights(Index side, double omega) {
  Matrix w = Matrix::Zero(side * side, 2 * side);
  for (Index r = 0; r < side; ++r)
    for (Index c = 0; c < side; ++c) {
      w(r * side + c, r) = 2.0 * omega;
      w(r * side + c, side + c) = 2.0 * omega;
    }
  return w;
}

Vector bar_bias(Index side, double omega) { return Vector::Constant(side * side, -omega); }

Vector cross_pattern(Index side, Index row, Index col) {
  Vector y = Vector::Zero(side * side);
  for (Index i = 0; i < side; ++i) {
    y(row * side + i) = 1.0;
    y(i * side + col) = 1.0;
  }
  return y;
}

BarData gen_bar(const BarConfig& config, Rng& rng) {
  require(config.side >= 2, ErrorCode::kConfig, "bar: side must be >= 2");
  require(config.omega > 0.0, ErrorCode::kConfig, "bar: omega must be > 0");
  require(config.samples >= 0, ErrorCode::kConfig, "bar: negative sample count");
  const Index d = config.side;
  const Matrix w = bar_weights(d, config.omega);
  const Vector b = bar_bias(d, config.omega);
  BarData out;
  out.latents = Matrix::Zero(config.samples, 2 * d);
  out.images = Matrix::Zero(config.samples, d * d);
  std::bernoulli_distribution coin(0.5);
  std::uniform_int_distribution<Index> pick(0, d - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (Index s = 0; s < config.samples; ++s) {
    if (config.side_dependent) {
      out.latents(s, pick(rng)) = 1.0;
      out.latents(s, d + pick(rng)) = 1.0;
    } else {
      for (Index i = 0; i < 2 * d; ++i) out.latents(s, i) = coin(rng) ? 1.0 : 0.0;
    }
    const Vector logits = w * out.latents.row(s).transpose() + b;
    for (Index p = 0; p < d * d; ++p) out.images(s, p) = unit(rng) < sigmoid(logits(p)) ? 1.0 : 0.0;
  }
  return out;
}

PinwheelData gen_pinwheel(const PinwheelConfig& config, Rng& rng) {
  require(config.arms >= 2, ErrorCode::kConfig, "pinwheel: arms must be >= 2");
  require(config.points_per_arm >= 1, ErrorCode::kConfig, "pinwheel: points per arm");
  require(config.radial_std >= 0.0 && config.tangential_std >= 0.0, ErrorCode::kConfig,
          "pinwheel: negative std");
  const Index n = config.arms * config.points_per_arm;
  PinwheelData out;
  out.points.resize(n, 2);
  out.labels.resize(static_cast<std::size_t>(n));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Index i = 0; i < n; ++i) {
    const int arm = static_cast<int>(i / config.points_per_arm);
    const double radial = 1.0 + config.radial_std * normal(rng);
    const double tangential = config.tangential_std * normal(rng);
    const double angle = 2.0 * std::numbers::pi * arm / static_cast<double>(config.arms) +
                         config.rate * std::exp(radial);
    const double c = std::cos(angle), s = std::sin(angle);
    out.points(i, 0) = c * radial - s * tangential;
    out.points(i, 1) = s * radial + c * tangential;
    out.labels[static_cast<std::size_t>(i)] = arm;
  }
  return out;
}

GpfaSynthData gen_gpfa(const GpfaSynthConfig& config, Rng& rng) {
  require(config.latents >= 1 && config.latents <= config.embedding_dim, ErrorCode::kConfig,
          "gpfa: need 1 <= K <= N");
  require(config.length >= 2, ErrorCode::kConfig, "gpfa: T must be >= 2");
  require(config.variance > 0.0 && config.lengthscale > 0.0 && config.time_scale > 0.0,
          ErrorCode::kConfig, "gpfa: kernel parameters must be positive");
  require(config.noise >= 0.0, ErrorCode::kConfig, "gpfa: negative noise");
  require(config.mlp_decoder || config.obs_dim == config.embedding_dim, ErrorCode::kConfig,
          "gpfa: identity decoder needs obs_dim == embedding_dim");
  const Index t_len = config.length;
  GpfaSynthData out;
  out.inputs.resize(t_len, 1);
  for (Index t = 0; t < t_len; ++t) out.inputs(t, 0) = static_cast<double>(t) / config.time_scale;

  // Fixed generative map from its own seed.
  Rng dec(config.decoder_seed);
  out.mixing = standard_normal(dec, config.embedding_dim, config.latents) /
               std::sqrt(static_cast<double>(config.latents));
  out.offset = Vector::Zero(config.embedding_dim);
  const Index hdim = config.hidden;
  const Matrix w1 = standard_normal(dec, config.embedding_dim, hdim) *
                    std::sqrt(2.0 / static_cast<double>(config.embedding_dim));
  const Matrix b1 = standard_normal(dec, 1, hdim) * 0.1;
  const Matrix w2 = standard_normal(dec, hdim, config.obs_dim) *
                    std::sqrt(2.0 / static_cast<double>(hdim));
  const Matrix b2 = standard_normal(dec, 1, config.obs_dim) * 0.1;

  const KernelParams kp = KernelParams::from(config.variance, config.lengthscale);
  const Matrix kxx = kernel_matrix(out.inputs, out.inputs, kp);
  const Matrix l = cholesky_jittered(kxx, JitterPolicy{}, nullptr, "gen_gpfa kernel");
  out.latents = l * standard_normal(rng, t_len, config.latents);
  out.embeddings = out.latents * out.mixing.transpose();
  out.embeddings.rowwise() += out.offset.transpose();

  Matrix pre;
  if (config.mlp_decoder) {
    Matrix hidden = out.embeddings * w1;
    hidden.rowwise() += b1.row(0);
    hidden = hidden.cwiseMax(0.0);
    pre = hidden * w2;
    pre.rowwise() += b2.row(0);
  } else {
    pre = out.embeddings;
  }
  out.observations.resize(t_len, config.obs_dim);
  if (config.likelihood == Likelihood::kGaussian) {
    out.clean = pre.unaryExpr([](double v) { return sigmoid(v); });
    out.observations = out.clean + config.noise * standard_normal(rng, t_len, config.obs_dim);
  } else {
    out.clean = pre.unaryExpr([](double v) { return softplus(v) + kPositiveFloor; });
    for (Index t = 0; t < t_len; ++t)
      for (Index n = 0; n < config.obs_dim; ++n) {
        std::poisson_distribution<long> pois(out.clean(t, n));
        out.observations(t, n) = static_cast<double>(pois(rng));
      }
  }
  return out;
}

void write_series_csv(const std::string& path, const Matrix& inputs, const Matrix& observations) {
  require(inputs.rows() == observations.rows(), ErrorCode::kShapeMismatch, "series rows");
  std::vector<std::string> header{"t"};
  for (Index n = 0; n < observations.cols(); ++n) header.push_back("y_" + std::to_string(n + 1));
  std::vector<std::vector<double>> rows;
  for (Index t = 0; t < inputs.rows(); ++t) {
    std::vector<double> row{inputs(t, 0)};
    for (Index n = 0; n < observations.cols(); ++n) row.push_back(observations(t, n));
    rows.push_back(std::move(row));
  }
  write_csv(path, header, rows);
}

void read_series_csv(const std::string& path, Matrix& inputs, Matrix& observations) {
  std::vector<std::string> header;
  const auto rows = read_csv(path, &header);
  require(header.size() >= 2 && header.front() == "t", ErrorCode::kConfig,
          "'" + path + "': expected header t,y_1..y_N");
  const Index t_len = static_cast<Index>(rows.size());
  const Index d = static_cast<Index>(header.size()) - 1;
  inputs.resize(t_len, 1);
  observations.resize(t_len, d);
  for (Index t = 0; t < t_len; ++t) {
    require(static_cast<Index>(rows[t].size()) == d + 1, ErrorCode::kConfig,
            "'" + path + "': row width");
    inputs(t, 0) = rows[t][0];
    for (Index n = 0; n < d; ++n) observations(t, n) = rows[t][n + 1];
  }
}

Json to_json(const BarConfig& c) {
  return {{"side", c.side}, {"omega", c.omega}, {"side_dependent", c.side_dependent},
          {"samples", c.samples}};
}

Json to_json(const PinwheelConfig& c) {
  return {{"arms", c.arms}, {"points_per_arm", c.points_per_arm}, {"radial_std", c.radial_std},
          {"tangential_std", c.tangential_std}, {"rate", c.rate}};
}

Json to_json(const GpfaSynthConfig& c) {
  return {{"latents", c.latents},         {"embedding_dim", c.embedding_dim},
          {"obs_dim", c.obs_dim},         {"length", c.length},
          {"variance", c.variance},       {"lengthscale", c.lengthscale},
          {"time_scale", c.time_scale},   {"decoder_seed", c.decoder_seed},
          {"hidden", c.hidden},           {"noise", c.noise},
          {"likelihood", likelihood_name(c.likelihood)}, {"mlp_decoder", c.mlp_decoder}};
}

}  // namespace srvae
