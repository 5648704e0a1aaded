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

#include "srvae/metrics.hpp"

#include <chrono>
#include <cmath>
#include <limits>

#include "srvae/datasets.hpp"
#include "srvae/sparse_gp.hpp"

namespace srvae {

double smse(const Matrix& predictions, const Matrix& targets) {
  require(predictions.rows() == targets.rows() && predictions.cols() == targets.cols(),
          ErrorCode::kShapeMismatch, "smse: shapes differ");
  require(targets.rows() > 0 && targets.cols() > 0, ErrorCode::kInvalidArgument, "smse: empty");
  double total = 0.0;
  for (Index c = 0; c < targets.cols(); ++c) {
    const double mu = targets.col(c).mean();
    const double var = (targets.col(c).array() - mu).square().mean();
    require(var > 0.0, ErrorCode::kZeroVariance, "smse: target column " + std::to_string(c) + " is constant");
    total += (predictions.col(c) - targets.col(c)).squaredNorm() / static_cast<double>(targets.rows()) / var;
  }
  return total / static_cast<double>(targets.cols());
}

double nll(const Matrix& y, const Matrix& decoder_out, Likelihood kind, double log_noise) {
  require(y.size() > 0, ErrorCode::kInvalidArgument, "nll: empty");
  return -log_likelihood(y, decoder_out, kind, log_noise).sum() / static_cast<double>(y.size());
}

double nll_from_log_predictive(const Vector& log_predictive, Index dims) {
  require(log_predictive.size() > 0 && dims > 0, ErrorCode::kInvalidArgument, "nll: empty");
  return -log_predictive.sum() / static_cast<double>(log_predictive.size() * dims);
}

double cross_distance(const BarDecoder& decode, Index side, std::size_t* evaluations) {
  require(side >= 2, ErrorCode::kInvalidArgument, "cross_distance: side must be >= 2");
  require(side <= 8, ErrorCode::kTooLarge, "cross_distance: more than 2^16 latent configurations");
  const Index latents = 2 * side;
  const Index total = Index{1} << latents;
  const Index pixels = side * side;
  Matrix crosses(side * side, pixels);
  for (Index r = 0; r < side; ++r)
    for (Index c = 0; c < side; ++c) crosses.row(r * side + c) = cross_pattern(side, r, c).transpose();
  const Vector cross_norms = crosses.rowwise().squaredNorm();
  const Index chunk = 4096;
  double sum = 0.0;
  std::size_t count = 0;
  for (Index start = 0; start < total; start += chunk) {
    const Index n = std::min(chunk, total - start);
    Matrix z(n, latents);
    for (Index r = 0; r < n; ++r)
      for (Index i = 0; i < latents; ++i) z(r, i) = static_cast<double>(((start + r) >> i) & 1);
    const Matrix y = decode(z);
    require(y.rows() == n && y.cols() == pixels, ErrorCode::kShapeMismatch,
            "cross_distance: decoder output shape");
    count += static_cast<std::size_t>(n);
    // |y - c|^2 = |y|^2 - 2 y.c + |c|^2
    const Matrix dots = y * crosses.transpose();
    for (Index r = 0; r < n; ++r) {
      const double best = ((cross_norms.transpose().array() - 2.0 * dots.row(r).array()).minCoeff());
      sum += best + y.row(r).squaredNorm();
    }
  }
  if (evaluations) *evaluations = count;
  return sum / static_cast<double>(total);
}

double off_diagonal_ratio(const Matrix& s) {
  require(s.rows() == s.cols(), ErrorCode::kShapeMismatch, "off_diagonal_ratio: square matrix required");
  const double all = s.cwiseAbs().sum();
  if (all == 0.0) return 0.0;
  return (all - s.diagonal().cwiseAbs().sum()) / all;
}

double coverage(const Matrix& points, const Matrix& reference, double radius) {
  require(points.cols() == reference.cols(), ErrorCode::kShapeMismatch, "coverage: dimensions");
  require(points.rows() > 0 && reference.rows() > 0, ErrorCode::kInvalidArgument, "coverage: empty");
  const double r2 = radius * radius;
  Index hit = 0;
  for (Index i = 0; i < points.rows(); ++i) {
    const double best = (reference.rowwise() - points.row(i)).rowwise().squaredNorm().minCoeff();
    if (best <= r2) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(points.rows());
}

std::vector<BenchmarkRow> complexity_benchmark(const std::vector<Index>& latents,
                                               const std::vector<Index>& inducing, Index points,
                                               Index repeats, std::uint64_t seed) {
  require(points >= 1 && repeats >= 1, ErrorCode::kInvalidArgument, "benchmark: sizes");
  std::vector<BenchmarkRow> rows;
  for (Index k : latents)
    for (Index m : inducing) {
      Rng rng(seed);
      InducingModel model;
      model.inducing = uniform_inducing_grid(k, m, 0.0, 1.0);
      for (Index j = 0; j < k; ++j) model.kernels.push_back(KernelParams::from(1.0, 0.3));
      const Index n = 2 * k;
      model.mixing = standard_normal(rng, n, k);
      model.offset = Vector::Zero(n);
      EvidenceBatch structured;
      structured.inputs = uniform(rng, points, 1, 0.0, 1.0);
      structured.mean = standard_normal(rng, points, n);
      structured.variance = uniform(rng, points, n, 0.5, 1.5);
      EvidenceBatch factored = structured;
      factored.mean = standard_normal(rng, points, k);
      factored.variance = uniform(rng, points, k, 0.5, 1.5);
      BenchmarkRow row;
      row.latents = k;
      row.inducing = m;
      row.structured_seconds = row.factored_seconds = std::numeric_limits<double>::infinity();
      for (Index r = 0; r < repeats; ++r) {
        auto t0 = std::chrono::steady_clock::now();
        const GaussianDense s = structured_qU(structured, model);
        auto t1 = std::chrono::steady_clock::now();
        const auto f = factored_qU(factored, model);
        auto t2 = std::chrono::steady_clock::now();
        require(s.mean.allFinite() && !f.empty(), ErrorCode::kNotPositiveDefinite, "benchmark: inference failed");
        row.structured_seconds = std::min(row.structured_seconds, std::chrono::duration<double>(t1 - t0).count());
        row.factored_seconds = std::min(row.factored_seconds, std::chrono::duration<double>(t2 - t1).count());
      }
      rows.push_back(row);
    }
  return rows;
}

void write_benchmark_csv(const std::string& path, const std::vector<BenchmarkRow>& rows) {
  std::vector<std::vector<double>> out;
  for (const BenchmarkRow& r : rows)
    out.push_back({static_cast<double>(r.latents), static_cast<double>(r.inducing), r.structured_seconds,
                   r.factored_seconds});
  write_csv(path, {"K", "M", "structured_seconds", "factored_seconds"}, out);
}

double EvalReport::mean(const std::string& metric) const {
  const auto& v = values.at(metric);
  require(!v.empty(), ErrorCode::kInvalidArgument, "report: no values for " + metric);
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double EvalReport::std(const std::string& metric) const {
  const auto& v = values.at(metric);
  if (v.size() < 2) return 0.0;
  const double mu = mean(metric);
  double s = 0.0;
  for (double x : v) s += (x - mu) * (x - mu);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

Json EvalReport::to_json() const {
  Json metrics = Json::object();
  for (const auto& [name, v] : values)
    metrics[name] = {{"mean", mean(name)}, {"std", std(name)}, {"values", v}};
  return {{"seeds", seeds}, {"metrics", metrics}, {"config", config}};
}

void EvalReport::write_csv(const std::string& path) const {
  std::string text = "metric,mean,std,count\n";
  for (const auto& [name, v] : values)
    text += name + "," + format_double(mean(name)) + "," + format_double(std(name)) + "," +
            std::to_string(v.size()) + "\n";
  write_text_file(path, text);
}

}  // namespace srvae
