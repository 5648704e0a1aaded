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


#include "srvae/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <map>
#include <random>

#include "srvae/datasets.hpp"
#include "srvae/gmm_srvae.hpp"
#include "srvae/metrics.hpp"
#include "srvae/sr_nlgpfa.hpp"
#include "srvae/tree_srvae.hpp"

#ifndef SRVAE_VERSION
#define SRVAE_VERSION "0.0.0-unknown"
#endif

namespace srvae {
namespace {

namespace fs = std::filesystem;
using Keys = std::initializer_list<const char*>;

constexpr int kFormatVersion = 1;

void check_keys(const Json& j, Keys allowed, const std::string& where) {
  require(j.is_object(), ErrorCode::kConfig, where + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const bool known = std::any_of(allowed.begin(), allowed.end(),
                                   [&](const char* k) { return it.key() == k; });
    require(known, ErrorCode::kConfig, "unknown key '" + it.key() + "' in " + where);
  }
}

template <class T>
T get(const Json& j, const char* key, T fallback) {
  return j.contains(key) ? j.at(key).get<T>() : fallback;
}

const Json& section(const Json& j, const char* key) {
  static const Json empty = Json::object();
  return j.contains(key) ? j.at(key) : empty;
}

double median(std::vector<double> v) {
  require(!v.empty(), ErrorCode::kInvalidArgument, "median of nothing");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double logistic(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// ---------------------------------------------------------------------------
// Run bookkeeping

class Run {
 public:
  Run(std::string command, Json config)
      : command_(std::move(command)),
        config_(std::move(config)),
        seed_(get<std::uint64_t>(config_, "seed", 0)),
        out_(get<std::string>(config_, "out", "out")),
        start_(std::chrono::steady_clock::now()) {
    std::error_code ec;
    fs::create_directories(out_, ec);
    require(!ec, ErrorCode::kIo, "cannot create output directory '" + out_.string() + "'");
  }

  std::uint64_t seed() const { return seed_; }
  const Json& config() const { return config_; }

  std::string output(const std::string& name) {
    outputs_.push_back(name);
    return (out_ / name).string();
  }

  Json finish(Json summary) {
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    write_json_file((out_ / "manifest.json").string(),
                    {{"command", command_},
                     {"config", config_},
                     {"seed", seed_},
                     {"version", version_string()},
                     {"wall_seconds", seconds},
                     {"outputs", outputs_}});
    summary["command"] = command_;
    summary["out"] = out_.string();
    return summary;
  }

 private:
  std::string command_;
  Json config_;
  std::uint64_t seed_;
  fs::path out_;
  std::chrono::steady_clock::time_point start_;
  std::vector<std::string> outputs_;
};

// ---------------------------------------------------------------------------
// Datasets

struct Dataset {
  std::string kind;  // gpfa | bar | pinwheel
  Matrix inputs;     // gpfa: T x 1
  Matrix values;     // observations, images or points
  Json description;  // generator config or file path
};

GpfaSynthConfig gpfa_config(const Json& j) {
  check_keys(j, {"kind", "latents", "embedding_dim", "obs_dim", "length", "variance", "lengthscale",
                 "time_scale", "decoder_seed", "hidden", "noise", "likelihood", "mlp_decoder"},
             "dataset");
  GpfaSynthConfig c;
  c.latents = get(j, "latents", c.latents);
  c.embedding_dim = get(j, "embedding_dim", c.embedding_dim);
  c.obs_dim = get(j, "obs_dim", c.obs_dim);
  c.length = get(j, "length", c.length);
  c.variance = get(j, "variance", c.variance);
  c.lengthscale = get(j, "lengthscale", c.lengthscale);
  c.time_scale = get(j, "time_scale", c.time_scale);
  c.decoder_seed = get(j, "decoder_seed", c.decoder_seed);
  c.hidden = get(j, "hidden", c.hidden);
  c.noise = get(j, "noise", c.noise);
  c.likelihood = likelihood_from_string(get<std::string>(j, "likelihood", "gaussian"));
  c.mlp_decoder = get(j, "mlp_decoder", c.mlp_decoder);
  return c;
}

BarConfig bar_config(const Json& j) {
  check_keys(j, {"kind", "side", "omega", "side_dependent", "samples"}, "dataset");
  BarConfig c;
  c.side = get(j, "side", c.side);
  c.omega = get(j, "omega", c.omega);
  c.side_dependent = get(j, "side_dependent", c.side_dependent);
  c.samples = get(j, "samples", c.samples);
  return c;
}

PinwheelConfig pinwheel_config(const Json& j) {
  check_keys(j, {"kind", "arms", "points_per_arm", "radial_std", "tangential_std", "rate"}, "dataset");
  PinwheelConfig c;
  c.arms = get(j, "arms", c.arms);
  c.points_per_arm = get(j, "points_per_arm", c.points_per_arm);
  c.radial_std = get(j, "radial_std", c.radial_std);
  c.tangential_std = get(j, "tangential_std", c.tangential_std);
  c.rate = get(j, "rate", c.rate);
  return c;
}

struct Generated {
  Dataset data;
  Json truth;
};

Generated generate_dataset(const Json& spec, std::uint64_t seed) {
  require(spec.is_object() && spec.contains("kind"), ErrorCode::kConfig, "dataset needs a 'kind'");
  const std::string kind = spec.at("kind").get<std::string>();
  Rng rng(seed);
  Generated g;
  g.data.kind = kind;
  if (kind == "gpfa") {
    const GpfaSynthConfig c = gpfa_config(spec);
    GpfaSynthData d = gen_gpfa(c, rng);
    g.data.inputs = d.inputs;
    g.data.values = d.observations;
    g.data.description = to_json(c);
    g.truth = {{"latents", matrix_to_json(d.latents)},
               {"embeddings", matrix_to_json(d.embeddings)},
               {"clean", matrix_to_json(d.clean)},
               {"mixing", matrix_to_json(d.mixing)}};
  } else if (kind == "bar") {
    const BarConfig c = bar_config(spec);
    BarData d = gen_bar(c, rng);
    g.data.values = d.images;
    g.data.description = to_json(c);
    g.truth = {{"latents", matrix_to_json(d.latents)}};
  } else if (kind == "pinwheel") {
    const PinwheelConfig c = pinwheel_config(spec);
    PinwheelData d = gen_pinwheel(c, rng);
    g.data.values = d.points;
    g.data.description = to_json(c);
    g.truth = {{"labels", d.labels}};
  } else {
    fail(ErrorCode::kConfig, "unknown dataset kind '" + kind + "' (expected gpfa, bar or pinwheel)");
  }
  g.data.description["kind"] = kind;
  return g;
}

std::string sidecar_path(const std::string& csv) {
  return fs::path(csv).replace_extension(".json").string();
}

Dataset read_dataset(const std::string& path) {
  require(fs::exists(path), ErrorCode::kConfig, "data file '" + path + "' does not exist");
  const std::string side = sidecar_path(path);
  require(fs::exists(side), ErrorCode::kConfig, "data sidecar '" + side + "' does not exist");
  const Json meta = read_json_file(side);
  Dataset d;
  d.kind = meta.at("kind").get<std::string>();
  d.description = meta.at("config");
  d.description["kind"] = d.kind;
  d.description["path"] = path;
  if (d.kind == "gpfa") {
    read_series_csv(path, d.inputs, d.values);
  } else {
    const auto rows = read_csv(path);
    require(!rows.empty(), ErrorCode::kConfig, "data file '" + path + "' has no rows");
    d.values.resize(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (std::size_t c = 0; c < rows[r].size(); ++c) d.values(static_cast<Index>(r), static_cast<Index>(c)) = rows[r][c];
  }
  return d;
}

Dataset load_dataset(const Json& config, std::uint64_t seed) {
  const bool has_path = config.contains("data");
  const bool has_spec = config.contains("dataset");
  require(has_path != has_spec, ErrorCode::kConfig,
          "give exactly one of 'data' (a gen-data CSV) or 'dataset' (a generator spec)");
  if (has_path) return read_dataset(config.at("data").get<std::string>());
  return generate_dataset(config.at("dataset"), seed).data;
}

void write_dataset(Run& run, const Generated& g, std::uint64_t seed) {
  const std::string csv = run.output("data.csv");
  const Dataset& d = g.data;
  if (d.kind == "gpfa") {
    write_series_csv(csv, d.inputs, d.values);
  } else {
    std::vector<std::string> header;
    if (d.kind == "pinwheel") {
      header = {"x", "y"};
    } else {
      for (Index p = 0; p < d.values.cols(); ++p) header.push_back("p_" + std::to_string(p));
    }
    std::vector<std::vector<double>> rows(static_cast<std::size_t>(d.values.rows()));
    for (Index r = 0; r < d.values.rows(); ++r)
      for (Index c = 0; c < d.values.cols(); ++c) rows[r].push_back(d.values(r, c));
    write_csv(csv, header, rows);
  }
  Json config = d.description;
  config.erase("kind");
  write_json_file(run.output("data.json"),
                  {{"kind", d.kind}, {"config", config}, {"seed", seed}, {"truth", g.truth}});
}

// ---------------------------------------------------------------------------
// Held-out split for series

struct Split {
  Matrix obs_x, obs_y, tgt_x, tgt_y;
};

Split split_series(const Matrix& x, const Matrix& y, double fraction, std::uint64_t seed) {
  require(fraction >= 0.0 && fraction < 1.0, ErrorCode::kConfig, "holdout fraction must be in [0, 1)");
  Rng rng(seed);
  std::bernoulli_distribution hold(fraction);
  std::vector<Index> keep, held;
  for (Index t = 0; t < x.rows(); ++t) (hold(rng) ? held : keep).push_back(t);
  require(!keep.empty(), ErrorCode::kConfig, "holdout leaves no observed points");
  Split s;
  s.obs_x = x(keep, Eigen::all);
  s.obs_y = y(keep, Eigen::all);
  s.tgt_x = x(held, Eigen::all);
  s.tgt_y = y(held, Eigen::all);
  return s;
}

// ---------------------------------------------------------------------------
// Models

GpfaModelConfig gpfa_model_config(const Json& j, const Dataset& data) {
  check_keys(j, {"kind", "variant", "latents", "embedding_dim", "hidden", "likelihood", "decoder_output",
                 "init_variance", "init_lengthscale", "train_offset"},
             "model");
  GpfaModelConfig c;
  c.obs_dim = data.values.cols();
  c.latents = get(j, "latents", c.latents);
  c.embedding_dim = get(j, "embedding_dim", c.embedding_dim);
  c.hidden = get(j, "hidden", c.hidden);
  const std::string fallback = get<std::string>(data.description, "likelihood", "gaussian");
  c.likelihood = likelihood_from_string(get<std::string>(j, "likelihood", fallback));
  c.variant = gpfa_variant_from_string(get<std::string>(j, "variant", "structured"));
  c.decoder_output = activation_from_string(get<std::string>(j, "decoder_output", "identity"));
  c.init_variance = get(j, "init_variance", c.init_variance);
  c.init_lengthscale = get(j, "init_lengthscale", c.init_lengthscale);
  c.train_offset = get(j, "train_offset", c.train_offset);
  return c;
}

GpfaTrainConfig gpfa_train_config(const Json& j, std::uint64_t seed) {
  check_keys(j, {"learning_rate", "window", "samples", "epochs", "inducing"}, "train");
  GpfaTrainConfig c;
  c.learning_rate = get(j, "learning_rate", 1e-4);
  c.window = get(j, "window", Index{128});
  c.samples = get(j, "samples", Index{1});
  c.epochs = get(j, "epochs", Index{200});
  c.inducing = get(j, "inducing", Index{64});
  c.seed = seed;
  return c;
}

Json gpfa_train_json(const GpfaTrainConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"window", c.window}, {"samples", c.samples},
          {"epochs", c.epochs}, {"inducing", c.inducing}};
}

Index side_of(Index pixels) {
  const Index s = static_cast<Index>(std::llround(std::sqrt(static_cast<double>(pixels))));
  return s * s == pixels ? s : 0;
}

TreeModelConfig tree_model_config(const Json& j, const Dataset& data) {
  check_keys(j, {"kind", "variant", "nodes", "cardinality", "edges", "recognition_hidden",
                 "decoder_hidden"},
             "model");
  TreeModelConfig c;
  c.pixels = data.values.cols();
  const Index side = side_of(c.pixels);
  const Index nodes = get(j, "nodes", side > 0 ? 2 * side : Index{16});
  const Index card = get(j, "cardinality", Index{2});
  c.structure = TreeStructure::chain(nodes, card);
  if (j.contains("edges")) {
    c.structure.edges.clear();
    for (const Json& e : j.at("edges")) c.structure.edges.emplace_back(e.at(0).get<Index>(), e.at(1).get<Index>());
  }
  c.structure.validate();
  c.recognition_hidden = get(j, "recognition_hidden", c.recognition_hidden);
  c.decoder_hidden = get(j, "decoder_hidden", c.decoder_hidden);
  c.variant = tree_variant_from_string(get<std::string>(j, "variant", "tree"));
  return c;
}

TreeTrainConfig tree_train_config(const Json& j, std::uint64_t seed) {
  check_keys(j, {"learning_rate", "batch", "epochs", "temperature", "hard"}, "train");
  TreeTrainConfig c;
  c.learning_rate = get(j, "learning_rate", c.learning_rate);
  c.batch = get(j, "batch", c.batch);
  c.epochs = get(j, "epochs", c.epochs);
  c.temperature = get(j, "temperature", c.temperature);
  c.hard = get(j, "hard", c.hard);
  c.seed = seed;
  return c;
}

Json tree_train_json(const TreeTrainConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"batch", c.batch}, {"epochs", c.epochs},
          {"temperature", c.temperature}, {"hard", c.hard}};
}

GmmModelConfig gmm_model_config(const Json& j, const Dataset& data) {
  check_keys(j, {"kind", "variant", "latent_dim", "components", "hidden", "initial_output_variance"},
             "model");
  GmmModelConfig c;
  c.obs_dim = data.values.cols();
  c.latent_dim = get(j, "latent_dim", c.latent_dim);
  c.components = get(j, "components", c.components);
  c.hidden = get(j, "hidden", c.hidden);
  c.initial_output_variance = get(j, "initial_output_variance", c.initial_output_variance);
  c.variant = gmm_variant_from_string(get<std::string>(j, "variant", "gmm"));
  return c;
}

GmmTrainConfig gmm_train_config(const Json& j, std::uint64_t seed) {
  check_keys(j, {"learning_rate", "batch", "epochs", "samples", "kl_warmup_epochs"}, "train");
  GmmTrainConfig c;
  c.learning_rate = get(j, "learning_rate", c.learning_rate);
  c.batch = get(j, "batch", Index{100});
  c.epochs = get(j, "epochs", Index{300});
  c.samples = get(j, "samples", c.samples);
  c.kl_warmup_epochs = get(j, "kl_warmup_epochs", Index{100});
  c.seed = seed;
  return c;
}

Json gmm_train_json(const GmmTrainConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"batch", c.batch}, {"epochs", c.epochs},
          {"samples", c.samples}, {"kl_warmup_epochs", c.kl_warmup_epochs}};
}

std::string model_kind(const Json& model) {
  require(model.is_object() && model.contains("kind"), ErrorCode::kConfig,
          "model needs a 'kind' (gpfa, tree or gmm)");
  const std::string kind = model.at("kind").get<std::string>();
  require(kind == "gpfa" || kind == "tree" || kind == "gmm", ErrorCode::kConfig,
          "unknown model kind '" + kind + "' (expected gpfa, tree or gmm)");
  return kind;
}

Json checkpoint(const std::string& kind, const Json& model, const Json& extra) {
  Json j = {{"format_version", kFormatVersion}, {"model_kind", kind}, {"model", model},
            {"version", version_string()}};
  for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
  return j;
}

Json read_checkpoint(const Json& config) {
  require(config.contains("checkpoint"), ErrorCode::kConfig, "missing 'checkpoint' path");
  const std::string path = config.at("checkpoint").get<std::string>();
  require(fs::exists(path), ErrorCode::kConfig, "checkpoint '" + path + "' does not exist");
  const Json j = read_json_file(path);
  require(j.value("format_version", 0) == kFormatVersion, ErrorCode::kConfig,
          "checkpoint '" + path + "' has an unsupported format version");
  return j;
}

void write_trace(Run& run, const MetricTrace& trace) { trace.write_csv(run.output("trace.csv")); }

double final_value(const MetricTrace& t) {
  return t.free_energy.empty() ? std::nan("") : t.free_energy.back();
}

Matrix bar_decoder_means(TreeSrvaeModel& model, const Matrix& z) {
  return model.decoder.evaluate(z).unaryExpr([](double v) { return logistic(v); });
}

// ---------------------------------------------------------------------------
// Commands

Json cmd_gen_data(Run& run) {
  check_keys(run.config(), {"seed", "out", "dataset"}, "gen-data config");
  require(run.config().contains("dataset"), ErrorCode::kConfig, "gen-data needs a 'dataset' section");
  const Generated g = generate_dataset(run.config().at("dataset"), run.seed());
  write_dataset(run, g, run.seed());
  return run.finish({{"kind", g.data.kind}, {"rows", g.data.values.rows()}, {"cols", g.data.values.cols()}});
}

Json cmd_train(Run& run) {
  const Json& cfg = run.config();
  check_keys(cfg, {"seed", "out", "data", "dataset", "model", "train", "holdout"}, "train config");
  const std::string kind = model_kind(section(cfg, "model"));
  const Dataset data = load_dataset(cfg, run.seed());
  const Json& mj = cfg.at("model");
  const Json& tj = section(cfg, "train");
  Rng init(run.seed());
  Json summary = {{"model", kind}};
  MetricTrace trace;
  if (kind == "gpfa") {
    require(data.kind == "gpfa", ErrorCode::kConfig, "gpfa models need a gpfa time series");
    const Json& hj = section(cfg, "holdout");
    check_keys(hj, {"fraction", "seed"}, "holdout");
    const Json holdout = {{"fraction", get(hj, "fraction", 0.2)},
                          {"seed", get(hj, "seed", run.seed() + 500)}};
    const Split split = split_series(data.inputs, data.values, holdout["fraction"].get<double>(),
                                     holdout["seed"].get<std::uint64_t>());
    GpfaModel model(gpfa_model_config(mj, data), init);
    const GpfaTrainConfig tc = gpfa_train_config(tj, run.seed());
    const std::string path = run.output("checkpoint.json");
    auto save = [&](Index epoch, const GpfaModel& m) {
      write_json_file(path, checkpoint("gpfa", m.to_json(),
                                       {{"seed", run.seed()}, {"holdout", holdout},
                                        {"train", gpfa_train_json(tc)}, {"epochs_completed", epoch + 1}}));
    };
    save(-1, model);
    trace = train(model, split.obs_x, split.obs_y, tc, save);
    summary["variant"] = gpfa_variant_name(model.config().variant);
  } else if (kind == "tree") {
    TreeSrvaeModel model(tree_model_config(mj, data), init);
    const TreeTrainConfig tc = tree_train_config(tj, run.seed());
    trace = train(model, data.values, tc);
    write_json_file(run.output("checkpoint.json"),
                    checkpoint("tree", model.to_json(),
                               {{"seed", run.seed()}, {"train", tree_train_json(tc)},
                                {"epochs_completed", tc.epochs}}));
    summary["variant"] = tree_variant_name(model.config().variant);
  } else {
    GmmSrvaeModel model(gmm_model_config(mj, data), init);
    const GmmTrainConfig tc = gmm_train_config(tj, run.seed());
    trace = train(model, data.values, tc);
    write_json_file(run.output("checkpoint.json"),
                    checkpoint("gmm", model.to_json(),
                               {{"seed", run.seed()}, {"train", gmm_train_json(tc)},
                                {"epochs_completed", tc.epochs}}));
    summary["variant"] = gmm_variant_name(model.config().variant);
  }
  write_trace(run, trace);
  summary["epochs"] = trace.size();
  summary["final_free_energy"] = final_value(trace);
  return run.finish(summary);
}

Json cmd_eval(Run& run) {
  const Json& cfg = run.config();
  check_keys(cfg, {"seed", "out", "checkpoint", "data", "dataset", "eval"}, "eval config");
  const Json ck = read_checkpoint(cfg);
  const std::string kind = ck.at("model_kind").get<std::string>();
  const Dataset data = load_dataset(cfg, run.seed());
  const Json& ej = section(cfg, "eval");
  EvalReport report;
  report.seeds = {run.seed()};
  report.config = cfg;
  if (kind == "gpfa") {
    check_keys(ej, {"samples", "window", "inducing"}, "eval");
    GpfaModel model = GpfaModel::from_json(ck.at("model"));
    const Json& tr = ck.at("train");
    const Index samples = get(ej, "samples", Index{32});
    const Index window = get(ej, "window", tr.at("window").get<Index>());
    const Index inducing = get(ej, "inducing", tr.at("inducing").get<Index>());
    const Json& h = ck.at("holdout");
    const Split split = split_series(data.inputs, data.values, h.at("fraction").get<double>(),
                                     h.at("seed").get<std::uint64_t>());
    require(split.tgt_x.rows() > 1, ErrorCode::kConfig,
            "eval: the holdout has fewer than two points; train with a larger holdout fraction");
    Rng rng(run.seed());
    const Prediction p = predict(model, split.obs_x, split.obs_y, split.tgt_x, split.tgt_y, window,
                                 inducing, samples, rng);
    report.add("smse", smse(p.mean, split.tgt_y));
    report.add("nll", nll_from_log_predictive(p.log_predictive, split.tgt_y.cols()));
    report.add("free_energy", evaluate_free_energy(model, split.obs_x, split.obs_y, window, inducing,
                                                   samples, run.seed()));
  } else if (kind == "tree") {
    check_keys(ej, {"samples"}, "eval");
    TreeSrvaeModel model = TreeSrvaeModel::from_json(ck.at("model"));
    require(data.values.cols() == model.config().pixels, ErrorCode::kShapeMismatch,
            "eval: image size differs from the model");
    report.add("free_energy", evaluate_free_energy(model, data.values, get(ej, "samples", Index{1}), run.seed()));
    const Index side = side_of(model.config().pixels);
    const TreeStructure& s = model.structure();
    const bool bars = side > 0 && side <= 8 && s.nodes() == 2 * side &&
                      std::all_of(s.cardinalities.begin(), s.cardinalities.end(),
                                  [](Index c) { return c == 2; });
    if (bars)
      report.add("cross_distance",
                 cross_distance([&](const Matrix& z) { return bar_decoder_means(model, z); }, side));
  } else {
    check_keys(ej, {"samples", "coverage_radius", "generated"}, "eval");
    GmmSrvaeModel model = GmmSrvaeModel::from_json(ck.at("model"));
    report.add("free_energy", evaluate_free_energy(model, data.values, get(ej, "samples", Index{8}), run.seed()));
    Rng rng(run.seed());
    const Matrix g = generate(model, get(ej, "generated", data.values.rows()), rng);
    report.add("coverage", coverage(g, data.values, get(ej, "coverage_radius", 0.15)));
  }
  write_json_file(run.output("eval_report.json"), report.to_json());
  report.write_csv(run.output("eval_report.csv"));
  Json summary = {{"model", kind}};
  for (const auto& [name, v] : report.values) summary[name] = v.front();
  return run.finish(summary);
}

Json cmd_reinfer(Run& run) {
  const Json& cfg = run.config();
  check_keys(cfg, {"seed", "out", "checkpoint", "data", "dataset", "reinfer"}, "reinfer config");
  const Json ck = read_checkpoint(cfg);
  require(ck.at("model_kind") == "gpfa", ErrorCode::kConfig, "reinfer applies to gpfa checkpoints only");
  const Dataset data = load_dataset(cfg, run.seed());
  require(data.kind == "gpfa", ErrorCode::kConfig, "reinfer needs a gpfa time series");
  const Json& rj = section(cfg, "reinfer");
  check_keys(rj, {"inducing", "optimize_inducing", "steps", "learning_rate", "samples"}, "reinfer");
  GpfaModel model = GpfaModel::from_json(ck.at("model"));
  const Json& h = ck.at("holdout");
  const Split split = split_series(data.inputs, data.values, h.at("fraction").get<double>(),
                                   h.at("seed").get<std::uint64_t>());
  ReinferConfig rc;
  rc.samples = get(rj, "samples", rc.samples);
  rc.optimize_inducing = get(rj, "optimize_inducing", rc.optimize_inducing);
  rc.steps = get(rj, "steps", rc.steps);
  rc.learning_rate = get(rj, "learning_rate", rc.learning_rate);
  rc.seed = run.seed();
  const Index m = get(rj, "inducing", ck.at("train").at("inducing").get<Index>());
  const ReinferResult r =
      reinfer(model, split.obs_x, split.obs_y, window_inducing(split.obs_x, model.latents(), m), rc);
  Json z = Json::array();
  for (const Matrix& zk : r.inducing) z.push_back(matrix_to_json(zk));
  write_json_file(run.output("posterior.json"),
                  {{"mean", matrix_to_json(r.posterior.mean)},
                   {"covariance", matrix_to_json(r.posterior.covariance)},
                   {"inducing", z}});
  std::vector<std::string> header{"t"};
  for (Index k = 0; k < model.latents(); ++k) header.push_back("mean_" + std::to_string(k + 1));
  for (Index k = 0; k < model.latents(); ++k) header.push_back("var_" + std::to_string(k + 1));
  std::vector<std::vector<double>> rows;
  for (Index t = 0; t < split.obs_x.rows(); ++t) {
    std::vector<double> row{split.obs_x(t, 0)};
    for (Index k = 0; k < model.latents(); ++k) row.push_back(r.latent_means(t, k));
    for (Index k = 0; k < model.latents(); ++k) row.push_back(r.latent_variances(t, k));
    rows.push_back(std::move(row));
  }
  write_csv(run.output("latents.csv"), header, rows);
  return run.finish({{"inducing", m},
                     {"free_energy", r.free_energy},
                     {"off_diagonal_ratio", off_diagonal_ratio(r.posterior.covariance)}});
}

Json cmd_bench(Run& run) {
  const Json& cfg = run.config();
  check_keys(cfg, {"seed", "out", "bench"}, "bench config");
  const Json& bj = section(cfg, "bench");
  check_keys(bj, {"latents", "inducing", "points", "repeats"}, "bench");
  const auto latents = get(bj, "latents", std::vector<Index>{2, 4, 8});
  const auto inducing = get(bj, "inducing", std::vector<Index>{8, 16, 32});
  const std::vector<BenchmarkRow> rows = complexity_benchmark(
      latents, inducing, get(bj, "points", Index{16}), get(bj, "repeats", Index{3}), run.seed());
  write_benchmark_csv(run.output("bench.csv"), rows);
  Json table = Json::array();
  for (const BenchmarkRow& r : rows)
    table.push_back({{"K", r.latents}, {"M", r.inducing}, {"structured_seconds", r.structured_seconds},
                     {"factored_seconds", r.factored_seconds}});
  return run.finish({{"rows", table}});
}

Json cmd_compare_bounds(Run& run) {
  const Json& cfg = run.config();
  check_keys(cfg, {"seed", "out", "dataset", "omega", "seeds", "side", "samples", "side_dependent",
                   "points_per_arm", "variants", "model", "train", "eval_samples"},
             "compare-bounds config");
  const std::string dataset = get<std::string>(cfg, "dataset", "bar");
  require(dataset == "bar" || dataset == "pinwheel", ErrorCode::kConfig,
          "compare-bounds dataset must be 'bar' or 'pinwheel'");
  const bool bar = dataset == "bar";
  const Index seeds = get(cfg, "seeds", Index{5});
  require(seeds >= 1, ErrorCode::kConfig, "seeds must be >= 1");
  const auto variants = get(cfg, "variants", bar ? std::vector<std::string>{"tree", "svae"}
                                                  : std::vector<std::string>{"gmm", "vae"});
  require(variants.size() >= 2, ErrorCode::kConfig, "compare-bounds needs at least two variants");
  Json model_spec = section(cfg, "model");
  model_spec["kind"] = bar ? "tree" : "gmm";
  const Json& tj = section(cfg, "train");
  const Index eval_samples = get(cfg, "eval_samples", Index{bar ? 1 : 8});

  std::map<std::string, std::vector<double>> results;
  std::vector<std::vector<std::string>> csv_rows;
  for (Index s = 0; s < seeds; ++s) {
    const std::uint64_t seed = run.seed() + static_cast<std::uint64_t>(s);
    Json spec;
    if (bar)
      spec = {{"kind", "bar"}, {"side", get(cfg, "side", Index{8})}, {"omega", get(cfg, "omega", 4.0)},
              {"samples", get(cfg, "samples", Index{4096})},
              {"side_dependent", get(cfg, "side_dependent", false)}};
    else
      spec = {{"kind", "pinwheel"}, {"points_per_arm", get(cfg, "points_per_arm", Index{500})}};
    const Dataset data = generate_dataset(spec, seed).data;
    for (const std::string& v : variants) {
      Json mj = model_spec;
      mj["variant"] = v;
      Rng init(seed);
      double fe;
      if (bar) {
        TreeSrvaeModel model(tree_model_config(mj, data), init);
        TreeTrainConfig tc = tree_train_config(tj, seed);
        if (!tj.contains("learning_rate")) tc.learning_rate = 2e-3;
        if (!tj.contains("epochs")) tc.epochs = 150;
        train(model, data.values, tc);
        fe = evaluate_free_energy(model, data.values, eval_samples, seed);
      } else {
        GmmSrvaeModel model(gmm_model_config(mj, data), init);
        train(model, data.values, gmm_train_config(tj, seed));
        fe = evaluate_free_energy(model, data.values, eval_samples, seed);
      }
      results[v].push_back(fe);
      csv_rows.push_back({v, std::to_string(seed), format_double(fe)});
    }
  }
  std::string text = "variant,seed,free_energy\n";
  for (const auto& r : csv_rows) text += r[0] + "," + r[1] + "," + r[2] + "\n";
  write_text_file(run.output("compare.csv"), text);
  Json medians = Json::object(), per_seed = Json::object();
  for (const auto& [v, vals] : results) {
    medians[v] = median(vals);
    per_seed[v] = vals;
  }
  const std::string& first = variants[0];
  const std::string& second = variants[1];
  const bool holds = median(results[first]) >= median(results[second]);
  const Json summary = {{"dataset", dataset},
                        {"seeds", seeds},
                        {"free_energy", per_seed},
                        {"median_free_energy", medians},
                        {"ordering", first + " >= " + second},
                        {"ordering_holds", holds}};
  Json file = summary;
  if (bar) file["omega"] = get(cfg, "omega", 4.0);
  write_json_file(run.output("compare.json"), file);
  Json out = summary;
  if (bar) out["omega"] = file["omega"];
  return run.finish(out);
}

Json apply_overrides(const std::string& command, Json config, const Json& overrides) {
  if (overrides.is_null()) return config;
  check_keys(overrides, {"seed", "out", "omega", "latents", "inducing", "epochs", "dataset", "seeds"},
             "command-line flags");
  require(config.is_object(), ErrorCode::kConfig, "configuration must be a JSON object");
  auto reject = [&](const std::string& flag) {
    fail(ErrorCode::kConfig, "flag --" + flag + " does not apply to '" + command + "'");
  };
  for (auto it = overrides.begin(); it != overrides.end(); ++it) {
    const std::string& k = it.key();
    const Json& v = it.value();
    if (k == "seed" || k == "out") {
      config[k] = v;
    } else if (k == "omega") {
      if (command == "gen-data") config["dataset"]["omega"] = v;
      else if (command == "compare-bounds") config["omega"] = v;
      else reject(k);
    } else if (k == "latents") {
      if (command == "gen-data") config["dataset"]["latents"] = v;
      else if (command == "train") config["model"]["latents"] = v;
      else reject(k);
    } else if (k == "inducing") {
      if (command == "train") config["train"]["inducing"] = v;
      else if (command == "eval") config["eval"]["inducing"] = v;
      else if (command == "reinfer") config["reinfer"]["inducing"] = v;
      else reject(k);
    } else if (k == "epochs") {
      if (command == "train" || command == "compare-bounds") config["train"]["epochs"] = v;
      else reject(k);
    } else {  // dataset, seeds
      if (command == "compare-bounds") config[k] = v;
      else reject(k);
    }
  }
  return config;
}

}  // namespace

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"gen-data", "train", "eval", "reinfer", "bench",
                                              "compare-bounds"};
  return names;
}

Json load_config(const std::string& path) {
  require(fs::exists(path), ErrorCode::kConfig, "config file '" + path + "' does not exist");
  try {
    return Json::parse(read_text_file(path));
  } catch (const Json::exception& e) {
    fail(ErrorCode::kConfig, "config file '" + path + "' is not valid JSON: " + e.what());
  }
}

Json run_command(const std::string& command, const Json& config, const Json& overrides) {
  const auto& names = command_names();
  require(std::find(names.begin(), names.end(), command) != names.end(), ErrorCode::kConfig,
          "unknown command '" + command + "'");
  try {
    Run run(command, apply_overrides(command, config, overrides));
    if (command == "gen-data") return cmd_gen_data(run);
    if (command == "train") return cmd_train(run);
    if (command == "eval") return cmd_eval(run);
    if (command == "reinfer") return cmd_reinfer(run);
    if (command == "bench") return cmd_bench(run);
    return cmd_compare_bounds(run);
  } catch (const Json::exception& e) {
    fail(ErrorCode::kConfig, command + ": " + e.what());
  }
}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kNotPositiveDefinite:
    case ErrorCode::kInfiniteKL:
    case ErrorCode::kNumerical:
    case ErrorCode::kNonScalarRoot:
      return 3;
    default:
      return 2;
  }
}

const char* version_string() { return SRVAE_VERSION; }

}  // namespace srvae
