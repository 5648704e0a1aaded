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

#include "srvae/sr_nlgpfa.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>

#include "srvae/optim.hpp"

namespace srvae {

Likelihood likelihood_from_string(const std::string& s) {
  if (s == "gaussian") return Likelihood::kGaussian;
  if (s == "poisson") return Likelihood::kPoisson;
  fail(ErrorCode::kConfig, "unknown likelihood '" + s + "'");
}

const char* likelihood_name(Likelihood l) {
  return l == Likelihood::kGaussian ? "gaussian" : "poisson";
}

GpfaVariant gpfa_variant_from_string(const std::string& s) {
  if (s == "structured") return GpfaVariant::kStructured;
  if (s == "factored") return GpfaVariant::kFactored;
  if (s == "vae") return GpfaVariant::kVae;
  fail(ErrorCode::kConfig, "unknown model variant '" + s + "'");
}

const char* gpfa_variant_name(GpfaVariant v) {
  switch (v) {
    case GpfaVariant::kStructured: return "structured";
    case GpfaVariant::kFactored: return "factored";
    case GpfaVariant::kVae: return "vae";
  }
  return "structured";
}

namespace {

// Width of the recognition mean/variance blocks.
Index potential_width(const GpfaModelConfig& c) {
  return c.variant == GpfaVariant::kFactored ? c.latents : c.embedding_dim;
}

std::vector<Index> layer_sizes(Index in, const std::vector<Index>& hidden, Index out) {
  std::vector<Index> sizes{in};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(out);
  return sizes;
}

}  // namespace

GpfaModel::GpfaModel(const GpfaModelConfig& config, Rng& rng) : config_(config) {
  require(config.latents >= 1 && config.embedding_dim >= 1 && config.obs_dim >= 1,
          ErrorCode::kConfig, "model dimensions must be positive");
  require(config.init_variance > 0.0 && config.init_lengthscale > 0.0, ErrorCode::kConfig,
          "kernel initialisation must be positive");
  for (Index k = 0; k < config.latents; ++k) {
    log_variance.emplace_back("log_variance" + std::to_string(k),
                              Matrix::Constant(1, 1, std::log(config.init_variance)));
    log_lengthscale.emplace_back("log_lengthscale" + std::to_string(k),
                                 Matrix::Constant(1, 1, std::log(config.init_lengthscale)));
  }
  const double bound = 1.0 / std::sqrt(static_cast<double>(config.latents));
  mixing = Parameter("C", uniform(rng, config.embedding_dim, config.latents, -bound, bound));
  offset = Parameter("d", Matrix::Zero(1, config.embedding_dim));
  offset.trainable = config.train_offset;
  log_noise = Parameter("log_noise", Matrix::Constant(1, 1, std::log(0.1)));
  log_noise.trainable = config.likelihood == Likelihood::kGaussian;
  recognition = Mlp("recognition",
                    layer_sizes(config.obs_dim, config.hidden, 2 * potential_width(config)),
                    Activation::kIdentity, rng);
  decoder = Mlp("decoder", layer_sizes(config.embedding_dim, config.hidden, config.obs_dim),
                config.decoder_output, rng);
}

std::vector<Parameter*> GpfaModel::parameters() {
  std::vector<Parameter*> out;
  for (Parameter& p : log_variance) out.push_back(&p);
  for (Parameter& p : log_lengthscale) out.push_back(&p);
  out.push_back(&mixing);
  out.push_back(&offset);
  out.push_back(&log_noise);
  recognition.collect(out);
  decoder.collect(out);
  return out;
}

std::size_t GpfaModel::parameter_count() {
  std::size_t n = 0;
  for (Parameter* p : parameters()) n += p->value.size();
  return n;
}

InducingModel GpfaModel::inducing_model(const std::vector<Matrix>& inducing) const {
  InducingModel m;
  m.inducing = inducing;
  for (Index k = 0; k < latents(); ++k)
    m.kernels.push_back({log_variance[k].value(0, 0), log_lengthscale[k].value(0, 0)});
  m.mixing = mixing.value;
  m.offset = offset.value.transpose();
  return m;
}

Json GpfaModel::to_json() const {
  Json kernels = Json::array();
  for (Index k = 0; k < latents(); ++k)
    kernels.push_back({{"log_variance", parameter_to_json(log_variance[k])},
                       {"log_lengthscale", parameter_to_json(log_lengthscale[k])}});
  return {{"config",
           {{"obs_dim", config_.obs_dim},
            {"latents", config_.latents},
            {"embedding_dim", config_.embedding_dim},
            {"hidden", config_.hidden},
            {"likelihood", likelihood_name(config_.likelihood)},
            {"variant", gpfa_variant_name(config_.variant)},
            {"decoder_output", activation_name(config_.decoder_output)},
            {"init_variance", config_.init_variance},
            {"init_lengthscale", config_.init_lengthscale},
            {"train_offset", config_.train_offset}}},
          {"kernels", kernels},
          {"C", parameter_to_json(mixing)},
          {"d", parameter_to_json(offset)},
          {"log_noise", parameter_to_json(log_noise)},
          {"recognition", mlp_to_json(recognition)},
          {"decoder", mlp_to_json(decoder)}};
}

GpfaModel GpfaModel::from_json(const Json& j) {
  const Json& c = j.at("config");
  GpfaModelConfig cfg;
  cfg.obs_dim = c.at("obs_dim").get<Index>();
  cfg.latents = c.at("latents").get<Index>();
  cfg.embedding_dim = c.at("embedding_dim").get<Index>();
  cfg.hidden = c.at("hidden").get<std::vector<Index>>();
  cfg.likelihood = likelihood_from_string(c.at("likelihood").get<std::string>());
  cfg.variant = gpfa_variant_from_string(c.at("variant").get<std::string>());
  cfg.decoder_output = activation_from_string(c.at("decoder_output").get<std::string>());
  cfg.init_variance = c.value("init_variance", 1.0);
  cfg.init_lengthscale = c.value("init_lengthscale", 1.0);
  cfg.train_offset = c.value("train_offset", true);
  Rng rng(0);
  GpfaModel m(cfg, rng);
  const Json& kernels = j.at("kernels");
  require(kernels.size() == static_cast<std::size_t>(cfg.latents), ErrorCode::kConfig,
          "checkpoint kernel count");
  for (Index k = 0; k < cfg.latents; ++k) {
    parameter_from_json(kernels[k].at("log_variance"), m.log_variance[k]);
    parameter_from_json(kernels[k].at("log_lengthscale"), m.log_lengthscale[k]);
  }
  parameter_from_json(j.at("C"), m.mixing);
  parameter_from_json(j.at("d"), m.offset);
  parameter_from_json(j.at("log_noise"), m.log_noise);
  m.recognition = mlp_from_json("recognition", j.at("recognition"));
  m.decoder = mlp_from_json("decoder", j.at("decoder"));
  return m;
}

std::vector<Matrix> window_inducing(const Matrix& inputs, Index latents, Index per_latent) {
  require(inputs.rows() > 0, ErrorCode::kInvalidArgument, "window_inducing: empty window");
  const double lo = inputs.col(0).minCoeff();
  const double hi = inputs.col(0).maxCoeff();
  std::vector<Matrix> grid = uniform_inducing_grid(latents, per_latent, lo, hi);
  if (inputs.cols() > 1)
    for (Matrix& z : grid) {
      Matrix full = Matrix::Zero(per_latent, inputs.cols());
      full.col(0) = z.col(0);
      z = full;
    }
  return grid;
}

namespace {

struct RecognitionOut {
  Var mean;
  Var variance;
};

RecognitionOut recognition_forward(Tape& tape, GpfaModel& model, const Matrix& y) {
  require(y.cols() == model.obs_dim(), ErrorCode::kShapeMismatch,
          "observations have " + std::to_string(y.cols()) + " columns, model expects " +
              std::to_string(model.obs_dim()));
  const Index w = potential_width(model.config());
  const Var out = model.recognition.forward(tape, tape.constant(y));
  return {col_range(out, 0, w), add_scalar(softplus(col_range(out, w, w)), kPositiveFloor)};
}

// Everything needed to sample from q over one window.
struct TapePosterior {
  Var mean;    // B x K (latent f) or B x N (VAE, on h)
  Var factor;  // structured: B x K^2 lower factors; otherwise B x width std devs
  Var kl;
  TapeInducing inducing;
  std::vector<WhitenedPosterior> whitened;  // one (structured) or K (factored)
  Var marginal_var;                         // B x K (GP variants)
};

TapeInducing model_inducing(Tape& tape, GpfaModel& model, const std::vector<Var>& z) {
  require(static_cast<Index>(z.size()) == model.latents(), ErrorCode::kShapeMismatch,
          "one inducing set per latent required");
  TapeInducing ind;
  ind.inducing = z;
  for (Index k = 0; k < model.latents(); ++k) {
    ind.log_variance.push_back(tape.parameter(model.log_variance[k]));
    ind.log_lengthscale.push_back(tape.parameter(model.log_lengthscale[k]));
  }
  finish_tape_inducing(ind, JitterPolicy{});
  return ind;
}

TapePosterior build_posterior(Tape& tape, GpfaModel& model, const Matrix& inputs,
                              const Matrix& y, const std::vector<Var>& z) {
  const RecognitionOut rec = recognition_forward(tape, model, y);
  TapePosterior out;
  const Index k_count = model.latents();
  if (model.config().variant == GpfaVariant::kVae) {
    out.mean = rec.mean;
    out.factor = sqrt(rec.variance);
    const Var terms = sub(add(rec.variance, square(rec.mean)), add_scalar(log(rec.variance), 1.0));
    out.kl = scale(sum(terms), 0.5);
    return out;
  }
  out.inducing = model_inducing(tape, model, z);
  const TapeProjection proj = tape_project(tape, out.inducing, tape.constant(inputs));
  if (model.config().variant == GpfaVariant::kStructured) {
    const WhitenedPosterior post =
        tape_whitened_posterior(tape, proj.whitened, tape.parameter(model.mixing),
                                tape.parameter(model.offset), rec.mean, rec.variance);
    const LatentMarginals lm = tape_latent_marginals(tape, proj, post);
    out.mean = lm.mean;
    out.factor = batch_cholesky(lm.covariance, k_count);
    std::vector<Index> diag;
    for (Index k = 0; k < k_count; ++k) diag.push_back(k * k_count + k);
    out.marginal_var = select_cols(lm.covariance, diag);
    out.kl = post.kl;
    out.whitened = {post};
    return out;
  }
  const Var one = tape.constant(Matrix::Ones(1, 1));
  const Var zero = tape.constant(Matrix::Zero(1, 1));
  std::vector<Var> means, vars, kls;
  for (Index k = 0; k < k_count; ++k) {
    const WhitenedPosterior post = tape_whitened_posterior(
        tape, {proj.whitened[k]}, one, zero, col_range(rec.mean, k, 1),
        col_range(rec.variance, k, 1));
    TapeProjection single;
    single.whitened = {proj.whitened[k]};
    single.prior_var = {proj.prior_var[k]};
    const LatentMarginals lm = tape_latent_marginals(tape, single, post);
    means.push_back(lm.mean);
    vars.push_back(lm.covariance);
    kls.push_back(post.kl);
    out.whitened.push_back(post);
  }
  out.mean = hcat(means);
  out.marginal_var = hcat(vars);
  // Rounding can leave the conditional variance a hair below zero.
  out.factor = sqrt(add_scalar(out.marginal_var, 1e-12));
  Var kl = kls.front();
  for (std::size_t k = 1; k < kls.size(); ++k) kl = add(kl, kls[k]);
  out.kl = kl;
  return out;
}

// Embedding samples stacked sample-major: rows s*B .. s*B+B-1 hold sample s.
Var sample_embeddings(Tape& tape, GpfaModel& model, const TapePosterior& post, Index samples,
                      Rng& rng) {
  const Index b = post.mean.rows();
  const Index w = post.mean.cols();
  std::vector<Matrix> noise;
  for (Index s = 0; s < samples; ++s) noise.push_back(standard_normal(rng, b, w));
  std::vector<Var> parts;
  for (Index s = 0; s < samples; ++s) {
    const Var eps = tape.constant(noise[s]);
    Var draw;
    if (model.config().variant == GpfaVariant::kStructured)
      draw = add(post.mean, batch_matmul(post.factor, eps, w, w, 1));
    else
      draw = add(post.mean, mul(post.factor, eps));
    if (model.config().variant != GpfaVariant::kVae)
      draw = add(matmul(draw, transpose(tape.parameter(model.mixing))),
                 tape.parameter(model.offset));
    parts.push_back(draw);
  }
  return samples == 1 ? parts.front() : vcat(parts);
}

Matrix tile_rows(const Matrix& y, Index times) {
  Matrix out(y.rows() * times, y.cols());
  for (Index s = 0; s < times; ++s) out.middleRows(s * y.rows(), y.rows()) = y;
  return out;
}

void check_counts(const Matrix& y) {
  if ((y.array() < 0.0).any())
    fail(ErrorCode::kNegativeCount, "Poisson likelihood: negative count");
}

}  // namespace

EvidenceBatch recognize(GpfaModel& model, const Matrix& observations) {
  Tape tape;
  const RecognitionOut rec = recognition_forward(tape, model, observations);
  EvidenceBatch e;
  e.inputs = Matrix(observations.rows(), 0);
  e.mean = rec.mean.value();
  e.variance = rec.variance.value();
  return e;
}

std::vector<DiagonalGaussianPotential> recognize_list(GpfaModel& model,
                                                      const Matrix& observations) {
  const EvidenceBatch e = recognize(model, observations);
  std::vector<DiagonalGaussianPotential> out;
  for (Index t = 0; t < e.mean.rows(); ++t)
    out.push_back({e.mean.row(t).transpose(), e.variance.row(t).transpose()});
  return out;
}

Vector log_likelihood(const Matrix& y, const Matrix& decoder_out, Likelihood kind,
                      double log_noise) {
  require(y.rows() == decoder_out.rows() && y.cols() == decoder_out.cols(),
          ErrorCode::kShapeMismatch, "log_likelihood: shapes");
  Vector out(y.rows());
  if (kind == Likelihood::kGaussian) {
    const double var = std::exp(log_noise);
    const double norm = 0.5 * static_cast<double>(y.cols()) *
                        (log_noise + std::log(2.0 * std::numbers::pi));
    for (Index t = 0; t < y.rows(); ++t)
      out(t) = -0.5 * (y.row(t) - decoder_out.row(t)).squaredNorm() / var - norm;
    return out;
  }
  check_counts(y);
  for (Index t = 0; t < y.rows(); ++t) {
    double acc = 0.0;
    for (Index n = 0; n < y.cols(); ++n) {
      const double g = decoder_out(t, n);
      const double rate = (g > 30.0 ? g : std::log1p(std::exp(g))) + kPositiveFloor;
      acc += y(t, n) * std::log(rate) - rate - std::lgamma(y(t, n) + 1.0);
    }
    out(t) = acc;
  }
  return out;
}

Var log_likelihood(Tape& tape, const Matrix& y, const Var& decoder_out, Likelihood kind,
                   const Var& log_noise) {
  require(y.rows() == decoder_out.rows() && y.cols() == decoder_out.cols(),
          ErrorCode::kShapeMismatch, "log_likelihood: shapes");
  const double count = static_cast<double>(y.size());
  if (kind == Likelihood::kGaussian) {
    const Var sq = sum(square(sub(decoder_out, tape.constant(y))));
    const Var fit = scale(mul(sq, exp(neg(log_noise))), -0.5);
    return sub(fit, scale(add_scalar(log_noise, std::log(2.0 * std::numbers::pi)), 0.5 * count));
  }
  check_counts(y);
  double log_fact = 0.0;
  for (Index i = 0; i < y.rows(); ++i)
    for (Index j = 0; j < y.cols(); ++j) log_fact += std::lgamma(y(i, j) + 1.0);
  const Var rate = add_scalar(softplus(decoder_out), kPositiveFloor);
  return add_scalar(sub(sum(mul(tape.constant(y), log(rate))), sum(rate)), -log_fact);
}

FreeEnergyTerms free_energy_mc(Tape& tape, GpfaModel& model, const Window& window,
                               const std::vector<Var>& inducing, Index samples, Rng& rng) {
  require(samples >= 1, ErrorCode::kInvalidArgument, "free_energy_mc: S must be >= 1");
  require(window.observations.rows() > 0, ErrorCode::kInvalidArgument,
          "free_energy_mc: empty batch");
  require(window.inputs.rows() == window.observations.rows(), ErrorCode::kShapeMismatch,
          "free_energy_mc: inputs/observations rows differ");
  const TapePosterior post =
      build_posterior(tape, model, window.inputs, window.observations, inducing);
  const Var h = sample_embeddings(tape, model, post, samples, rng);
  const Var g = model.decoder.forward(tape, h);
  const Var ll = log_likelihood(tape, tile_rows(window.observations, samples), g,
                                model.config().likelihood, tape.parameter(model.log_noise));
  FreeEnergyTerms out;
  out.recon = scale(ll, 1.0 / static_cast<double>(samples));
  out.kl = post.kl;
  out.free_energy = sub(out.recon, out.kl);
  return out;
}

FreeEnergyTerms free_energy_mc(Tape& tape, GpfaModel& model, const Window& window,
                               Index samples, Rng& rng) {
  std::vector<Var> z;
  if (model.config().variant != GpfaVariant::kVae) {
    require(static_cast<Index>(window.inducing.size()) == model.latents(),
            ErrorCode::kShapeMismatch, "window needs one inducing set per latent");
    for (const Matrix& m : window.inducing) z.push_back(tape.constant(m));
  }
  return free_energy_mc(tape, model, window, z, samples, rng);
}

namespace {

GaussianDense posterior_from_tape(const TapePosterior& post, GpfaModel& model) {
  if (model.config().variant == GpfaVariant::kStructured)
    return unwhiten(post.whitened.front(), post.inducing);
  std::vector<GaussianDense> parts;
  for (Index k = 0; k < model.latents(); ++k) {
    TapeInducing single;
    single.chol_kzz = {post.inducing.chol_kzz[k]};
    parts.push_back(unwhiten(post.whitened[k], single));
  }
  return block_diagonal(parts);
}

}  // namespace

GaussianDense window_posterior(GpfaModel& model, const Window& window) {
  require(model.config().variant != GpfaVariant::kVae, ErrorCode::kInvalidArgument,
          "the VAE variant has no inducing posterior");
  Tape tape;
  std::vector<Var> z;
  for (const Matrix& m : window.inducing) z.push_back(tape.constant(m));
  const TapePosterior post =
      build_posterior(tape, model, window.inputs, window.observations, z);
  return posterior_from_tape(post, model);
}

std::vector<Window> make_windows(const Matrix& inputs, const Matrix& observations,
                                 Index length, Index latents, Index inducing) {
  require(length >= 1, ErrorCode::kConfig, "window length must be >= 1");
  require(inputs.rows() == observations.rows(), ErrorCode::kShapeMismatch,
          "inputs/observations rows differ");
  std::vector<Window> out;
  for (Index start = 0; start < inputs.rows(); start += length) {
    const Index n = std::min(length, inputs.rows() - start);
    Window w;
    w.inputs = inputs.middleRows(start, n);
    w.observations = observations.middleRows(start, n);
    w.inducing = window_inducing(w.inputs, latents, inducing);
    out.push_back(std::move(w));
  }
  return out;
}

MetricTrace train(GpfaModel& model, const Matrix& inputs, const Matrix& observations,
                  const GpfaTrainConfig& config, const EpochCallback& on_epoch) {
  require(config.samples >= 1 && config.window >= 1 && config.epochs >= 0 &&
              config.inducing >= 1 && config.learning_rate >= 0.0,
          ErrorCode::kConfig, "invalid training configuration");
  Rng rng(config.seed);
  const std::vector<Window> windows =
      make_windows(inputs, observations, config.window, model.latents(), config.inducing);
  std::vector<Parameter*> params = model.parameters();
  AdamConfig adam;
  adam.learning_rate = config.learning_rate;
  std::vector<std::size_t> order(windows.size());
  std::iota(order.begin(), order.end(), 0);
  MetricTrace trace;
  for (Index epoch = 0; epoch < config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::vector<Parameter> snapshot;
    for (Parameter* p : params) snapshot.push_back(*p);
    std::shuffle(order.begin(), order.end(), rng);
    double fe = 0.0, recon = 0.0, kl = 0.0;
    try {
      for (std::size_t idx : order) {
        Tape tape;
        const FreeEnergyTerms terms = free_energy_mc(tape, model, windows[idx], config.samples, rng);
        zero_grad(params);
        tape.backward(neg(terms.free_energy));
        adam_step(params, adam);
        fe += terms.free_energy.scalar();
        recon += terms.recon.scalar();
        kl += terms.kl.scalar();
      }
      if (!std::isfinite(fe)) fail(ErrorCode::kNumerical, "train: non-finite free energy");
    } catch (const Error&) {
      for (std::size_t i = 0; i < params.size(); ++i) *params[i] = snapshot[i];
      throw;
    }
    const double n = static_cast<double>(windows.size());
    trace.free_energy.push_back(fe / n);
    trace.recon.push_back(recon / n);
    trace.kl.push_back(kl / n);
    trace.seconds.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
    if (on_epoch) on_epoch(epoch, model);
  }
  zero_grad(params);
  return trace;
}

ReinferResult reinfer(GpfaModel& model, const Matrix& inputs, const Matrix& observations,
                      const std::vector<Matrix>& inducing, const ReinferConfig& config) {
  require(model.config().variant != GpfaVariant::kVae, ErrorCode::kInvalidArgument,
          "reinfer: the VAE variant has no inducing posterior");
  require(static_cast<Index>(inducing.size()) == model.latents(), ErrorCode::kShapeMismatch,
          "reinfer: one inducing set per latent required");
  ReinferResult out;
  out.inducing = inducing;
  if (inputs.rows() == 0) {
    out.posterior = prior_U(model.inducing_model(inducing));
    out.latent_means = Matrix(0, model.latents());
    out.latent_variances = Matrix(0, model.latents());
    return out;
  }
  Window full{inputs, observations, inducing};
  if (config.optimize_inducing) {
    std::vector<Parameter> z;
    for (Index k = 0; k < model.latents(); ++k)
      z.emplace_back("Z" + std::to_string(k), inducing[k]);
    std::vector<Parameter*> zp;
    for (Parameter& p : z) zp.push_back(&p);
    AdamConfig adam;
    adam.learning_rate = config.learning_rate;
    Rng rng(config.seed);
    for (Index step = 0; step < config.steps; ++step) {
      Tape tape;
      std::vector<Var> zv;
      for (Parameter& p : z) zv.push_back(tape.parameter(p));
      const FreeEnergyTerms terms = free_energy_mc(tape, model, full, zv, config.samples, rng);
      zero_grad(zp);
      tape.backward(neg(terms.free_energy));
      adam_step(zp, adam);
    }
    for (Index k = 0; k < model.latents(); ++k) out.inducing[k] = z[k].value;
    for (Parameter* p : model.parameters()) p->zero_grad();
    full.inducing = out.inducing;
  }
  Tape tape;
  std::vector<Var> zv;
  for (const Matrix& m : full.inducing) zv.push_back(tape.constant(m));
  const TapePosterior post = build_posterior(tape, model, inputs, observations, zv);
  out.posterior = posterior_from_tape(post, model);
  out.latent_means = post.mean.value();
  out.latent_variances = post.marginal_var.value();
  Rng rng(config.seed);
  Tape fe_tape;
  out.free_energy = free_energy_mc(fe_tape, model, full, config.samples, rng).free_energy.scalar();
  return out;
}

double relevance_score(GpfaModel& model, Index latent, Index output, const Matrix& latents) {
  require(latent >= 0 && latent < model.latents(), ErrorCode::kInvalidArgument,
          "relevance_score: latent index");
  require(output >= 0 && output < model.obs_dim(), ErrorCode::kInvalidArgument,
          "relevance_score: output index");
  require(latents.cols() == model.latents() && latents.rows() > 0, ErrorCode::kShapeMismatch,
          "relevance_score: latents must be T x K");
  Tape tape;
  const Var f = tape.variable(latents);
  const Var h = add(matmul(f, tape.constant(model.mixing.value.transpose())),
                    tape.constant(model.offset.value));
  Var g = model.decoder.forward(tape, h);
  if (model.config().likelihood == Likelihood::kPoisson) g = add_scalar(softplus(g), kPositiveFloor);
  tape.backward(sum(col_range(g, output, 1)));
  const Matrix grad = tape.grad(f);
  for (Parameter* p : model.parameters()) p->zero_grad();
  return grad.col(latent).squaredNorm() / static_cast<double>(latents.rows());
}

Prediction predict(GpfaModel& model, const Matrix& inputs, const Matrix& observations,
                   const Matrix& target_inputs, const Matrix& target_observations,
                   Index window, Index inducing, Index samples, Rng& rng) {
  require(samples >= 1 && window >= 1 && inducing >= 1, ErrorCode::kInvalidArgument,
          "predict: invalid sizes");
  require(inputs.rows() == observations.rows() && inputs.rows() > 0, ErrorCode::kShapeMismatch,
          "predict: observed inputs/observations");
  require(target_inputs.rows() == target_observations.rows() &&
              target_observations.cols() == model.obs_dim(),
          ErrorCode::kShapeMismatch, "predict: target shapes");
  const Index n_obs = inputs.rows();
  const Index n_tgt = target_inputs.rows();
  const Index d = model.obs_dim();
  const bool is_vae = model.config().variant == GpfaVariant::kVae;
  Prediction out;
  out.mean = Matrix::Zero(n_tgt, d);
  out.log_predictive = Vector::Zero(n_tgt);
  std::vector<bool> done(static_cast<std::size_t>(n_tgt), false);
  const double log_s = std::log(static_cast<double>(samples));
  for (Index start = 0; start < n_obs; start += window) {
    const Index len = std::min(window, n_obs - start);
    const bool first = start == 0;
    const bool last = start + len >= n_obs;
    const double lo = inputs(start, 0);
    const double hi = last ? 0.0 : inputs(start + len, 0);
    std::vector<Index> targets;
    for (Index i = 0; i < n_tgt; ++i) {
      const double x = target_inputs(i, 0);
      if (done[static_cast<std::size_t>(i)]) continue;
      if ((first || x >= lo) && (last || x < hi)) targets.push_back(i);
    }
    if (targets.empty()) continue;
    const Index b = static_cast<Index>(targets.size());
    Matrix tx(b, target_inputs.cols()), ty(b, d);
    for (Index i = 0; i < b; ++i) {
      tx.row(i) = target_inputs.row(targets[i]);
      ty.row(i) = target_observations.row(targets[i]);
      done[static_cast<std::size_t>(targets[i])] = true;
    }
    Tape tape;
    Var mean, factor;
    if (is_vae) {
      mean = tape.constant(Matrix::Zero(b, model.embedding_dim()));
      factor = tape.constant(Matrix::Ones(b, model.embedding_dim()));
    } else {
      Matrix span(len + b, inputs.cols());
      span << inputs.middleRows(start, len), tx;
      std::vector<Var> z;
      for (const Matrix& m : window_inducing(span, model.latents(), inducing))
        z.push_back(tape.constant(m));
      const TapePosterior post = build_posterior(tape, model, inputs.middleRows(start, len),
                                                 observations.middleRows(start, len), z);
      const TapeProjection proj = tape_project(tape, post.inducing, tape.constant(tx));
      const Index k_count = model.latents();
      if (model.config().variant == GpfaVariant::kStructured) {
        const LatentMarginals lm = tape_latent_marginals(tape, proj, post.whitened.front());
        mean = lm.mean;
        factor = batch_cholesky(lm.covariance, k_count);
      } else {
        std::vector<Var> means, vars;
        for (Index k = 0; k < k_count; ++k) {
          TapeProjection single;
          single.whitened = {proj.whitened[k]};
          single.prior_var = {proj.prior_var[k]};
          const LatentMarginals lm = tape_latent_marginals(tape, single, post.whitened[k]);
          means.push_back(lm.mean);
          vars.push_back(lm.covariance);
        }
        mean = hcat(means);
        factor = sqrt(add_scalar(hcat(vars), 1e-12));
      }
    }
    TapePosterior target_post;
    target_post.mean = mean;
    target_post.factor = factor;
    const Matrix g =
        model.decoder.forward(tape, sample_embeddings(tape, model, target_post, samples, rng)).value();
    Matrix ll(b, samples);
    Matrix acc = Matrix::Zero(b, d);
    for (Index s = 0; s < samples; ++s) {
      const Matrix gs = g.middleRows(s * b, b);
      ll.col(s) = log_likelihood(ty, gs, model.config().likelihood, model.log_noise.value(0, 0));
      if (model.config().likelihood == Likelihood::kPoisson)
        acc += gs.unaryExpr([](double v) { return (v > 30.0 ? v : std::log1p(std::exp(v))) + kPositiveFloor; });
      else
        acc += gs;
    }
    for (Index i = 0; i < b; ++i) {
      out.mean.row(targets[i]) = acc.row(i) / static_cast<double>(samples);
      const double mx = ll.row(i).maxCoeff();
      out.log_predictive(targets[i]) = mx + std::log((ll.row(i).array() - mx).exp().sum()) - log_s;
    }
  }
  return out;
}

double evaluate_free_energy(GpfaModel& model, const Matrix& inputs, const Matrix& observations,
                            Index window, Index inducing, Index samples, std::uint64_t seed) {
  const std::vector<Window> windows =
      make_windows(inputs, observations, window, model.latents(), inducing);
  Rng rng(seed);
  double total = 0.0;
  for (const Window& w : windows) {
    Tape tape;
    total += free_energy_mc(tape, model, w, samples, rng).free_energy.scalar();
  }
  return total / static_cast<double>(windows.size());
}

}  // namespace srvae
