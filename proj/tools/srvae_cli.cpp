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


// Command-line front end over the C library.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "srvae/srvae.h"

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<double> omega;
  std::optional<long> latents;
  std::optional<long> inducing;
  std::optional<long> epochs;
  std::optional<std::string> dataset;
  std::optional<long> seeds;

  nlohmann::json overrides() const {
    nlohmann::json j = nlohmann::json::object();
    if (seed) j["seed"] = *seed;
    if (out) j["out"] = *out;
    if (omega) j["omega"] = *omega;
    if (latents) j["latents"] = *latents;
    if (inducing) j["inducing"] = *inducing;
    if (epochs) j["epochs"] = *epochs;
    if (dataset) j["dataset"] = *dataset;
    if (seeds) j["seeds"] = *seeds;
    return j;
  }
};

void add_flags(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "JSON configuration file");
  cmd->add_option("--seed", f.seed, "Random seed");
  cmd->add_option("--out", f.out, "Output directory");
  cmd->add_option("--omega", f.omega, "Bar coupling strength (gen-data, compare-bounds)");
  cmd->add_option("--latents", f.latents, "Number of GP latents (gen-data, train)");
  cmd->add_option("--inducing", f.inducing, "Inducing points per window (train, eval, reinfer)");
  cmd->add_option("--epochs", f.epochs, "Training epochs (train, compare-bounds)");
  cmd->add_option("--dataset", f.dataset, "bar or pinwheel (compare-bounds)");
  cmd->add_option("--seeds", f.seeds, "Number of replicate seeds (compare-bounds)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Structured recognition VAEs: data generation, training and evaluation"};
  app.set_version_flag("--version", std::string(srvae_version()));
  app.require_subcommand(1);
  Flags flags;
  const char* commands[][2] = {
      {"gen-data", "Generate a synthetic dataset"},
      {"train", "Train a model and write a checkpoint"},
      {"eval", "Evaluate a checkpoint"},
      {"reinfer", "Re-infer the latent posterior with new inducing points"},
      {"bench", "Time structured and factored posterior computation"},
      {"compare-bounds", "Compare final free energies across recognition variants"},
  };
  for (const auto& c : commands) add_flags(app.add_subcommand(c[0], c[1]), flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  srvae_context* ctx = srvae_context_new();
  if (ctx == nullptr) {
    std::cerr << "error: out of memory\n";
    return 1;
  }
  const std::string overrides = flags.overrides().dump();
  const srvae_status status = srvae_run(ctx, command.c_str(),
                                        flags.config.empty() ? nullptr : flags.config.c_str(),
                                        overrides.c_str());
  if (status == SRVAE_OK) {
    std::cout << srvae_last_result(ctx) << std::endl;
  } else {
    std::cerr << "error: " << command << ": " << srvae_last_error(ctx) << std::endl;
  }
  const int code = srvae_exit_code(status);
  srvae_context_free(ctx);
  return code;
}
