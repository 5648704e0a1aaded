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

// Seeded synthetic data: bar images, pinwheel, GPFA time series.

#ifndef SRVAE_DATASETS_HPP_
#define SRVAE_DATASETS_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "srvae/linalg.hpp"
#include "srvae/random.hpp"
#include "srvae/serialize.hpp"
#include "srvae/sr_nlgpfa.hpp"

namespace srvae {

// ---------------------------------------------------------------------------
// Bars on a D x D grid. Latent i < D is the horizontal bar in row i, latent
// D + j the vertical bar in column j. Pixel index is row * D + col.

struct BarConfig {
  Index side = 8;
  double omega = 4.0;
  bool side_dependent = false;
  Index samples = 4096;
};

struct BarData {
  Matrix images;   // samples x D^2, entries in {0, 1}
  Matrix latents;  // samples x 2D, entries in {0, 1}
};

/// D^2 x 2D loading matrix: 2 omega where the pixel lies on the bar.
Matrix bar_weights(Index side, double omega);
/// Bias vector (D^2): -omega.
Vector bar_bias(Index side, double omega);
/// Binary D^2 pattern of one horizontal and one vertical bar.
Vector cross_pattern(Index side, Index row, Index col);

BarData gen_bar(const BarConfig& config, Rng& rng);

// ---------------------------------------------------------------------------
// Pinwheel

struct PinwheelConfig {
  Index arms = 5;
  Index points_per_arm = 500;
  double radial_std = 0.3;
  double tangential_std = 0.05;
  double rate = 0.25;
};

struct PinwheelData {
  Matrix points;            // n x 2
  std::vector<int> labels;  // arm of each point
};

PinwheelData gen_pinwheel(const PinwheelConfig& config, Rng& rng);

// ---------------------------------------------------------------------------
// GPFA time series

struct GpfaSynthConfig {
  Index latents = 2;
  Index embedding_dim = 10;
  Index obs_dim = 10;
  Index length = 512;
  double variance = 1.0;
  double lengthscale = 1.0;
  /// Inputs are x_t = t / time_scale.
  double time_scale = 50.0;
  std::uint64_t decoder_seed = 1;
  Index hidden = 50;
  /// Gaussian observation noise standard deviation.
  double noise = 0.05;
  Likelihood likelihood = Likelihood::kGaussian;
  /// When false the decoder is the identity map (requires obs_dim = embedding_dim).
  bool mlp_decoder = true;
};

struct GpfaSynthData {
  Matrix inputs;        // T x 1
  Matrix observations;  // T x D
  Matrix clean;         // T x D noiseless means (Gaussian) or rates (Poisson)
  Matrix latents;       // T x K ground-truth f
  Matrix embeddings;    // T x N ground-truth h
  Matrix mixing;        // N x K
  Vector offset;        // N
};

GpfaSynthData gen_gpfa(const GpfaSynthConfig& config, Rng& rng);

/// `t,y_1..y_D` CSV of a series.
void write_series_csv(const std::string& path, const Matrix& inputs, const Matrix& observations);
/// Reads a series CSV back into inputs (T x 1) and observations.
void read_series_csv(const std::string& path, Matrix& inputs, Matrix& observations);

Json to_json(const BarConfig& c);
Json to_json(const PinwheelConfig& c);
Json to_json(const GpfaSynthConfig& c);

}  // namespace srvae

#endif  // SRVAE_DATASETS_HPP_
