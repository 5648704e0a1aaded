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

// Evaluation metrics, the scaling benchmark and seed-aggregated reports.

#ifndef SRVAE_METRICS_HPP_
#define SRVAE_METRICS_HPP_

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "srvae/linalg.hpp"
#include "srvae/serialize.hpp"
#include "srvae/sr_nlgpfa.hpp"

namespace srvae {

/// Mean squared error over the empirical variance of the targets, per output
/// column, averaged over columns. kZeroVariance if a target column is constant.
double smse(const Matrix& predictions, const Matrix& targets);

/// Negative log-likelihood per scalar datum, -sum log p(y | g) / (rows * cols).
double nll(const Matrix& y, const Matrix& decoder_out, Likelihood kind, double log_noise = 0.0);
/// Per-datum NLL from per-row log predictive densities over `dims` outputs.
double nll_from_log_predictive(const Vector& log_predictive, Index dims);

/// Maps binary latent rows (n x 2D) to mean images (n x D^2).
using BarDecoder = std::function<Matrix(const Matrix& latents)>;

/// Mean over all 2^(2D) latent configurations of the squared distance from
/// the decoded image to the nearest one-row-one-column cross. Row bars are
/// latents 0..D-1. kTooLarge for D > 8.
double cross_distance(const BarDecoder& decode, Index side, std::size_t* evaluations = nullptr);

/// sum_{i != j} |S_ij| / sum |S_ij| (0 for an all-zero matrix).
double off_diagonal_ratio(const Matrix& s);

/// Fraction of `points` whose nearest `reference` row lies within `radius`.
double coverage(const Matrix& points, const Matrix& reference, double radius);

struct BenchmarkRow {
  Index latents = 0;
  Index inducing = 0;
  double structured_seconds = 0.0;
  double factored_seconds = 0.0;
};

/// Best-of-`repeats` wall time of structured_qU and factored_qU on random
/// inputs with `points` evidence points and N = 2K embeddings, for every
/// (K, M) pair.
std::vector<BenchmarkRow> complexity_benchmark(const std::vector<Index>& latents,
                                               const std::vector<Index>& inducing, Index points,
                                               Index repeats = 3, std::uint64_t seed = 0);
void write_benchmark_csv(const std::string& path, const std::vector<BenchmarkRow>& rows);

/// Metric name -> per-seed values, aggregated to mean and sample std.
struct EvalReport {
  std::vector<std::uint64_t> seeds;
  std::map<std::string, std::vector<double>> values;
  Json config;

  void add(const std::string& metric, double value) { values[metric].push_back(value); }
  double mean(const std::string& metric) const;
  double std(const std::string& metric) const;
  Json to_json() const;
  /// CSV with header metric,mean,std,count.
  void write_csv(const std::string& path) const;
};

}  // namespace srvae

#endif  // SRVAE_METRICS_HPP_
