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


#include "srvae/gmm_srvae.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "srvae/linalg.hpp"
#include "srvae/optim.hpp"

namespace srvae {
namespace {

constexpr double kLog2Pi = 1.8378770664093453;
constexpr double kDiagFloor = 1e-4;
constexpr double kVarianceFloor = 1e-6;

double softplus(double v) { return v > 30.0 ? v : std::log1p(std::exp(v)); }
double softplus_inverse(double v) { return v > 30.0 ? v : std::log(std::expm1(v)); }

Index packed_size(Index n) { return n * (n + 1) / 2; }

/// Row-wise packed lower triangle -> row-major n x n factor with a softplus
/// diagonal.
Var lower_from_packed(Tape& tape, const Var& raw, Index n) {
  const Index p = packed_size(n);
  const Index rows = raw.rows();
  const Var all = hcat({raw, add_scalar(softplus(raw), kDiagFloor),
                        tape.constant(Matrix::Zero(rows, 1))});
  std::vector<Index> idx;
  idx.reserve(static_cast<std::size_t>(n * n));
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) {
      const Index k = i * (i + 1) / 2 + j;
      idx.push_back(j < i ? k : (j == i ? p + k : 2 * p));
    }
  return select_cols(all, idx);
}

Matrix lower_from_packed(const Matrix& raw_row, Index n) {
  Matrix l = Matrix::Zero(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j <= i; ++j) {
      const double v = raw_row(0, i * (i + 1) / 2 + j);
      l(i, j) = j == i ? softplus(v) + kDiagFloor : v;
    }
  return l;
}

/// Per-row diagonal Gaussian log density, summed over columns -> r x 1.
Var gaussian_log_density(const Var& y, const Var& mean, const Var& variance) {
  return scale(sum_rows(log(variance) + square(y - mean) / variance + kLog2Pi), -0.5);
}

struct Decoded {
  Matrix mean;
  Matrix variance;
};

Decoded decode_plain(GmmSrvaeModel& model, const Matrix& h) {
  const Matrix out = model.decoder.evaluate(h);
  const Index d = model.obs_dim();
  Decoded r{out.leftCols(d), out.rightCols(d)};
  r.variance = r.variance.unaryExpr([](double v) { return softplus(v) + kVarianceFloor; });
  return r;
}

}  // namespace

GmmVariant gmm_variant_from_string(const std::string& s) {
  if (s == "gmm") return GmmVariant::kGmm;
  if (s == "vae") return GmmVariant::kVae;
  fail(ErrorCode::kConfig, "unknown gmm model variant '" + s + "'");
}

const char* gmm_variant_name(GmmVariant v) {
  return v == GmmVariant::kGmm ? "gmm" : "vae";
}

double gaussian_kl_dense(const Vector& m0, const Matrix& s0, const Vector& m1, const Matrix& s1) {
  require(m0.size() == m1.size() && s0.rows() == m0.size() && s1.rows() == m1.size(),
          ErrorCode::kShapeMismatch, "gaussian_kl: dimensions");
  const Matrix l0 = cholesky(s0, "gaussian_kl");
  const Matrix l1 = cholesky(s1, "gaussian_kl");
  const Matrix x = solve_lower(l1, l0);
  const Matrix delta = solve_lower(l1, Matrix(m0 - m1));
  const double n = static_cast<double>(m0.size());
  return 0.5 * (x.squaredNorm() + delta.squaredNorm() - n + logdet_from_cholesky(l1) -
                logdet_from_cholesky(l0));
}

MixturePosterior combine_gmm(const GmmPrior& prior, const Vector& potential_mean,
                             const Matrix& potential_covariance) {
  const Index k = prior.components();
  const Index n = potential_mean.size();
  require(k >= 1, ErrorCode::kInvalidArgument, "combine_gmm: empty mixture");
  require(static_cast<Index>(prior.means.size()) == k &&
              static_cast<Index>(prior.covariances.size()) == k &&
              potential_covariance.rows() == n && potential_covariance.cols() == n,
          ErrorCode::kShapeMismatch, "combine_gmm: dimensions");
  require((prior.weights.array() >= 0.0).all() && prior.weights.sum() > 0.0,
          ErrorCode::kInvalidArgument, "combine_gmm: mixture weights");
  MixturePosterior q;
  q.log_evidence.resize(k);
  Vector logits(k);
  for (Index j = 0; j < k; ++j) {
    const Matrix& sj = prior.covariances[j];
    require(sj.rows() == n && prior.means[j].size() == n, ErrorCode::kShapeMismatch,
            "combine_gmm: component dimensions");
    const Matrix ls = cholesky(Matrix(sj + potential_covariance), "combine_gmm");
    const Matrix alpha = solve_lower(ls, Matrix(potential_mean - prior.means[j]));
    q.log_evidence(j) = -0.5 * alpha.squaredNorm() - 0.5 * logdet_from_cholesky(ls) -
                        0.5 * static_cast<double>(n) * kLog2Pi;
    const Matrix w = solve_lower(ls, sj);
    q.means.push_back(prior.means[j] + w.transpose() * alpha);
    q.covariances.push_back(symmetrize(sj - w.transpose() * w));
    logits(j) = std::log(prior.weights(j)) + q.log_evidence(j);
  }
  const double top = logits.maxCoeff();
  require(std::isfinite(top), ErrorCode::kInvalidArgument, "combine_gmm: all weights are zero");
  q.responsibilities = (logits.array() - top).unaryExpr([](double v) { return std::exp(v); }).matrix();
  q.responsibilities /= q.responsibilities.sum();
  return q;
}

MixtureKL mixture_kl(const MixturePosterior& q, const GmmPrior& p) {
  const Index k = p.components();
  require(q.responsibilities.size() == k, ErrorCode::kStructureMismatch,
          "mixture_kl: component count");
  const Vector pi = p.weights / p.weights.sum();
  MixtureKL kl;
  for (Index j = 0; j < k; ++j) {
    const double r = q.responsibilities(j);
    if (r <= 0.0) continue;
    if (pi(j) <= 0.0) fail(ErrorCode::kInfiniteKL, "mixture_kl: mass on a zero-weight component");
    kl.categorical += r * (std::log(r) - std::log(pi(j)));
    kl.gaussian += r * gaussian_kl_dense(q.means[j], q.covariances[j], p.means[j], p.covariances[j]);
  }
  return kl;
}

GmmSrvaeModel::GmmSrvaeModel(const GmmModelConfig& config, Rng& rng) : config_(config) {
  const Index n = config.latent_dim, d = config.obs_dim, k = config.components;
  require(n >= 1 && d >= 1 && k >= 1, ErrorCode::kConfig, "gmm model: dimensions must be positive");
  const Index p = packed_size(n);
  const double diag = softplus_inverse(1.0 - kDiagFloor);
  if (config.variant == GmmVariant::kGmm) {
    Matrix raw = Matrix::Zero(k, p);
    for (Index j = 0; j < k; ++j)
      for (Index i = 0; i < n; ++i) raw(j, i * (i + 1) / 2 + i) = diag;
    logits = Parameter("prior_logits", Matrix::Zero(1, k));
    means = Parameter("prior_means", standard_normal(rng, k, n));
    chol_raw = Parameter("prior_chol", raw);
  } else {
    logits = Parameter("prior_logits", Matrix::Zero(1, 1));
    means = Parameter("prior_means", Matrix::Zero(1, n));
    chol_raw = Parameter("prior_chol", Matrix::Zero(1, p));
    logits.trainable = means.trainable = chol_raw.trainable = false;
  }
  std::vector<Index> sizes{d};
  sizes.insert(sizes.end(), config.hidden.begin(), config.hidden.end());
  sizes.push_back(config.variant == GmmVariant::kGmm ? n + p : 2 * n);
  recognition = Mlp("recognition", sizes, Activation::kIdentity, rng);
  sizes.front() = n;
  sizes.back() = 2 * d;
  decoder = Mlp("decoder", sizes, Activation::kIdentity, rng);
  require(config.initial_output_variance > kVarianceFloor, ErrorCode::kConfig,
          "gmm model: initial output variance too small");
  Parameter& out_bias = decoder.bias(decoder.depth() - 1);
  out_bias.value.rightCols(d).setConstant(softplus_inverse(config.initial_output_variance - kVarianceFloor));
}

std::vector<Parameter*> GmmSrvaeModel::parameters() {
  std::vector<Parameter*> out;
  if (config_.variant == GmmVariant::kGmm) out = {&logits, &means, &chol_raw};
  recognition.collect(out);
  decoder.collect(out);
  return out;
}

std::size_t GmmSrvaeModel::parameter_count() {
  std::size_t total = 0;
  for (Parameter* p : parameters()) total += static_cast<std::size_t>(p->value.size());
  return total;
}

GmmPrior GmmSrvaeModel::prior() const {
  const Index n = config_.latent_dim;
  GmmPrior p;
  if (config_.variant == GmmVariant::kVae) {
    p.weights = Vector::Ones(1);
    p.means.push_back(Vector::Zero(n));
    p.covariances.push_back(Matrix::Identity(n, n));
    return p;
  }
  const Index k = config_.components;
  const Matrix& lg = logits.value;
  p.weights = (lg.array() - lg.maxCoeff()).exp().transpose().matrix();
  p.weights /= p.weights.sum();
  for (Index j = 0; j < k; ++j) {
    p.means.push_back(means.value.row(j).transpose());
    const Matrix l = lower_from_packed(Matrix(chol_raw.value.row(j)), n);
    p.covariances.push_back(l * l.transpose());
  }
  return p;
}

Json GmmSrvaeModel::to_json() const {
  return {{"config",
           {{"obs_dim", config_.obs_dim},
            {"latent_dim", config_.latent_dim},
            {"components", config_.components},
            {"hidden", config_.hidden},
            {"initial_output_variance", config_.initial_output_variance},
            {"variant", gmm_variant_name(config_.variant)}}},
          {"prior_logits", parameter_to_json(logits)},
          {"prior_means", parameter_to_json(means)},
          {"prior_chol", parameter_to_json(chol_raw)},
          {"recognition", mlp_to_json(recognition)},
          {"decoder", mlp_to_json(decoder)}};
}

GmmSrvaeModel GmmSrvaeModel::from_json(const Json& j) {
  const Json& c = j.at("config");
  GmmModelConfig cfg;
  cfg.obs_dim = c.at("obs_dim").get<Index>();
  cfg.latent_dim = c.at("latent_dim").get<Index>();
  cfg.components = c.at("components").get<Index>();
  cfg.hidden = c.at("hidden").get<std::vector<Index>>();
  cfg.initial_output_variance = c.value("initial_output_variance", cfg.initial_output_variance);
  cfg.variant = gmm_variant_from_string(c.at("variant").get<std::string>());
  Rng rng(0);
  GmmSrvaeModel m(cfg, rng);
  parameter_from_json(j.at("prior_logits"), m.logits);
  parameter_from_json(j.at("prior_means"), m.means);
  parameter_from_json(j.at("prior_chol"), m.chol_raw);
  m.recognition = mlp_from_json("recognition", j.at("recognition"));
  m.decoder = mlp_from_json("decoder", j.at("decoder"));
  return m;
}

void recognition_potentials(GmmSrvaeModel& model, const Matrix& y, std::vector<Vector>& means_out,
                            std::vector<Matrix>& covariances) {
  require(y.cols() == model.obs_dim(), ErrorCode::kShapeMismatch, "recognition: observation width");
  const Index n = model.latent_dim();
  const Matrix out = model.recognition.evaluate(y);
  means_out.clear();
  covariances.clear();
  for (Index b = 0; b < y.rows(); ++b) {
    means_out.push_back(out.row(b).head(n).transpose());
    if (model.config().variant == GmmVariant::kGmm) {
      const Matrix l = lower_from_packed(Matrix(out.row(b).tail(packed_size(n))), n);
      covariances.push_back(l * l.transpose());
    } else {
      Vector s = out.row(b).tail(n).transpose();
      s = s.unaryExpr([](double v) { return softplus(v) + kDiagFloor; });
      covariances.push_back(s.array().square().matrix().asDiagonal());
    }
  }
}

GmmFreeEnergy gmm_free_energy(Tape& tape, GmmSrvaeModel& model, const Matrix& y,
                              const std::vector<Matrix>& noise) {
  require(y.cols() == model.obs_dim() && y.rows() > 0, ErrorCode::kShapeMismatch,
          "gmm_free_energy: observation width");
  require(!noise.empty(), ErrorCode::kInvalidArgument, "gmm_free_energy: no samples");
  const Index b = y.rows(), n = model.latent_dim(), d = model.obs_dim();
  const bool mixture = model.config().variant == GmmVariant::kGmm;
  const Index k = mixture ? model.components() : 1;
  for (const Matrix& e : noise)
    require(e.rows() == k * b && e.cols() == n, ErrorCode::kShapeMismatch,
            "gmm_free_energy: noise shape");
  const Var yv = tape.constant(y);
  const Var rec = model.recognition.forward(tape, yv);
  const Var m_r = col_range(rec, 0, n);
  const double inv_s = 1.0 / static_cast<double>(noise.size());

  auto reconstruction = [&](const Var& h) {  // (k b) x n -> (k b) x 1
    const Var out = model.decoder.forward(tape, h);
    const Var var = add_scalar(softplus(col_range(out, d, d)), kVarianceFloor);
    const Var target = k == 1 ? yv : tape.constant(y.replicate(k, 1));
    return gaussian_log_density(target, col_range(out, 0, d), var);
  };

  Var recon, kl;
  if (!mixture) {
    const Var s = add_scalar(softplus(col_range(rec, n, n)), kDiagFloor);
    for (const Matrix& e : noise) {
      const Var term = reconstruction(m_r + s * tape.constant(e));
      recon = recon.valid() ? recon + term : term;
    }
    recon = scale(recon, inv_s);
    kl = scale(sum_rows(square(s) + square(m_r) - 2.0 * log(s)) - static_cast<double>(n), 0.5);
  } else {
    const Var l_r = lower_from_packed(tape, col_range(rec, n, packed_size(n)), n);
    const Var sigma_r = batch_matmul(l_r, batch_transpose(l_r, n, n), n, n, n);
    const Var lg = tape.parameter(model.logits);
    const Var log_pi = lg - logsumexp_rows(lg);
    const Var mu_all = tape.parameter(model.means);
    const Var l_all = lower_from_packed(tape, tape.parameter(model.chol_raw), n);
    std::vector<Var> evidence, kls, post_mean, post_chol;
    for (Index j = 0; j < k; ++j) {
      const Var mu = repeat_rows(row_range(mu_all, j, 1), b);
      const Var lj = repeat_rows(row_range(l_all, j, 1), b);
      const Var sigma_j = batch_matmul(lj, batch_transpose(lj, n, n), n, n, n);
      const Var ls = batch_cholesky(sigma_j + sigma_r, n);
      const Var alpha = batch_solve_lower(ls, m_r - mu, n, 1);
      evidence.push_back(add_scalar(scale(sum_rows(square(alpha)), -0.5) - batch_log_diag_sum(ls, n),
                                    -0.5 * static_cast<double>(n) * kLog2Pi) +
                         col_range(log_pi, j, 1));
      const Var w = batch_solve_lower(ls, sigma_j, n, n);
      const Var wt = batch_transpose(w, n, n);
      const Var mean = mu + batch_matmul(wt, alpha, n, n, 1);
      const Var lc = batch_cholesky(sigma_j - batch_matmul(wt, w, n, n, n), n);
      post_mean.push_back(mean);
      post_chol.push_back(lc);
      const Var x = batch_solve_lower(lj, lc, n, n);
      const Var delta = batch_solve_lower(lj, mean - mu, n, 1);
      kls.push_back(add_scalar(scale(sum_rows(square(x)) + sum_rows(square(delta)), 0.5) +
                                   batch_log_diag_sum(lj, n) - batch_log_diag_sum(lc, n),
                               -0.5 * static_cast<double>(n)));
    }
    const Var logits_q = hcat(evidence);
    const Var log_r = logits_q - logsumexp_rows(logits_q);
    const Var r = exp(log_r);
    const Var mean_all = vcat(post_mean);
    const Var chol_all = vcat(post_chol);
    for (const Matrix& e : noise) {
      const Var ll = reconstruction(mean_all + batch_matmul(chol_all, tape.constant(e), n, n, 1));
      std::vector<Var> cols;
      for (Index j = 0; j < k; ++j) cols.push_back(row_range(ll, j * b, b));
      const Var term = sum_rows(r * hcat(cols));
      recon = recon.valid() ? recon + term : term;
    }
    recon = scale(recon, inv_s);
    kl = sum_rows(r * (log_r - log_pi)) + sum_rows(r * hcat(kls));
  }
  const double inv_b = 1.0 / static_cast<double>(b);
  GmmFreeEnergy fe;
  fe.recon = scale(sum(recon), inv_b);
  fe.kl = scale(sum(kl), inv_b);
  fe.free_energy = fe.recon - fe.kl;
  return fe;
}

GmmFreeEnergy gmm_free_energy(Tape& tape, GmmSrvaeModel& model, const Matrix& y, Index samples,
                              Rng& rng) {
  require(samples >= 1, ErrorCode::kInvalidArgument, "gmm_free_energy: samples must be >= 1");
  const Index k = model.config().variant == GmmVariant::kGmm ? model.components() : 1;
  std::vector<Matrix> noise;
  for (Index s = 0; s < samples; ++s) noise.push_back(standard_normal(rng, k * y.rows(), model.latent_dim()));
  return gmm_free_energy(tape, model, y, noise);
}

Matrix generate(GmmSrvaeModel& model, Index count, Rng& rng, bool with_noise) {
  require(count >= 0, ErrorCode::kInvalidArgument, "generate: negative count");
  const GmmPrior p = model.prior();
  const Index n = model.latent_dim();
  std::vector<Matrix> factors;
  for (const Matrix& c : p.covariances) factors.push_back(cholesky(c, "generate"));
  std::discrete_distribution<Index> pick(p.weights.data(), p.weights.data() + p.weights.size());
  Matrix h(count, n);
  for (Index i = 0; i < count; ++i) {
    const Index z = pick(rng);
    h.row(i) = (p.means[z] + factors[z] * standard_normal(rng, n, 1)).transpose();
  }
  Decoded dec = decode_plain(model, h);
  if (with_noise)
    dec.mean += (dec.variance.array().sqrt() * standard_normal(rng, count, model.obs_dim()).array()).matrix();
  return dec.mean;
}

MetricTrace train(GmmSrvaeModel& model, const Matrix& data, const GmmTrainConfig& config) {
  require(config.batch >= 1 && config.epochs >= 0 && config.samples >= 1 && config.learning_rate >= 0.0 &&
              config.kl_warmup_epochs >= 0,
          ErrorCode::kConfig, "invalid training configuration");
  require(data.rows() > 0, ErrorCode::kInvalidArgument, "train: no data");
  Rng rng(config.seed);
  std::vector<Parameter*> params = model.parameters();
  AdamConfig adam;
  adam.learning_rate = config.learning_rate;
  std::vector<Index> order(static_cast<std::size_t>(data.rows()));
  std::iota(order.begin(), order.end(), Index{0});
  MetricTrace trace;
  for (Index epoch = 0; epoch < config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::vector<Parameter> snapshot;
    for (Parameter* p : params) snapshot.push_back(*p);
    std::shuffle(order.begin(), order.end(), rng);
    double fe = 0.0, recon = 0.0, kl = 0.0;
    const double beta =
        config.kl_warmup_epochs > 0
            ? std::min(1.0, static_cast<double>(epoch + 1) / static_cast<double>(config.kl_warmup_epochs))
            : 1.0;
    try {
      for (Index b0 = 0; b0 < data.rows(); b0 += config.batch) {
        const Index nb = std::min(config.batch, data.rows() - b0);
        Matrix batch(nb, data.cols());
        for (Index r = 0; r < nb; ++r) batch.row(r) = data.row(order[b0 + r]);
        Tape tape;
        const GmmFreeEnergy terms = gmm_free_energy(tape, model, batch, config.samples, rng);
        zero_grad(params);
        tape.backward(beta < 1.0 ? neg(sub(terms.recon, scale(terms.kl, beta))) : neg(terms.free_energy));
        adam_step(params, adam);
        fe += terms.free_energy.scalar() * nb;
        recon += terms.recon.scalar() * nb;
        kl += terms.kl.scalar() * nb;
      }
      if (!std::isfinite(fe)) fail(ErrorCode::kNumerical, "train: non-finite free energy");
    } catch (const Error&) {
      for (std::size_t i = 0; i < params.size(); ++i) *params[i] = snapshot[i];
      throw;
    }
    const double total = static_cast<double>(data.rows());
    trace.free_energy.push_back(fe / total);
    trace.recon.push_back(recon / total);
    trace.kl.push_back(kl / total);
    trace.seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  }
  zero_grad(params);
  return trace;
}

double evaluate_free_energy(GmmSrvaeModel& model, const Matrix& data, Index samples, std::uint64_t seed) {
  require(samples >= 1 && data.rows() > 0, ErrorCode::kInvalidArgument, "evaluate: empty input");
  Rng rng(seed);
  double total = 0.0;
  const Index chunk = 1024;
  for (Index b0 = 0; b0 < data.rows(); b0 += chunk) {
    const Index nb = std::min(chunk, data.rows() - b0);
    Tape tape;
    total += gmm_free_energy(tape, model, data.middleRows(b0, nb), samples, rng).free_energy.scalar() * nb;
  }
  zero_grad(model.parameters());
  return total / static_cast<double>(data.rows());
}

}  // namespace srvae
