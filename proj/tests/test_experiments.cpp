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

#include <filesystem>
#include <string>

#include "srvae/experiments.hpp"
#include "srvae/serialize.hpp"

using namespace srvae;
namespace fs = std::filesystem;

namespace {

std::string scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("srvae_exp_" + name);
  fs::remove_all(p);
  return p.string();
}

ErrorCode code_of(const std::string& command, const Json& config, const Json& overrides = Json::object()) {
  try {
    run_command(command, config, overrides);
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::kInvalidArgument;
}

Json gpfa_pipeline(const std::string& dir) {
  run_command("gen-data", {{"seed", 4}, {"out", dir + "/data"}, {"dataset", {{"kind", "gpfa"}, {"length", 96}}}}, {});
  run_command("train",
              {{"seed", 4}, {"out", dir + "/run"}, {"data", dir + "/data/data.csv"},
               {"model", {{"kind", "gpfa"}, {"hidden", {8}}}},
               {"train", {{"epochs", 3}, {"window", 48}, {"inducing", 8}}}},
              {});
  return run_command("eval",
                     {{"seed", 4}, {"out", dir + "/eval"}, {"data", dir + "/data/data.csv"},
                      {"checkpoint", dir + "/run/checkpoint.json"}},
                     {});
}

}  // namespace

TEST_CASE("gpfa pipeline reports smse and nll and writes a manifest") {
  const std::string dir = scratch("pipeline");
  const Json summary = gpfa_pipeline(dir);
  CHECK(summary.contains("smse"));
  CHECK(summary.contains("nll"));
  const Json report = read_json_file(dir + "/eval/eval_report.json");
  CHECK(report["metrics"].contains("smse"));
  CHECK(report["metrics"].contains("nll"));
  const Json manifest = read_json_file(dir + "/eval/manifest.json");
  CHECK(manifest["command"] == "eval");
  CHECK(manifest["seed"] == 4);
  CHECK(manifest["version"] == std::string(version_string()));
  CHECK(manifest["wall_seconds"].get<double>() >= 0.0);
  CHECK(manifest["config"]["checkpoint"] == dir + "/run/checkpoint.json");
  const Json ck = read_json_file(dir + "/run/checkpoint.json");
  CHECK(ck["model_kind"] == "gpfa");
  CHECK(ck["epochs_completed"] == 3);
  fs::remove_all(dir);
}

TEST_CASE("reruns produce identical metric files and leave inputs untouched") {
  const std::string a = scratch("rerun_a"), b = scratch("rerun_b");
  gpfa_pipeline(a);
  const std::string data_before = read_text_file(a + "/data/data.csv");
  const std::string ck_before = read_text_file(a + "/run/checkpoint.json");
  run_command("eval",
              {{"seed", 4}, {"out", a + "/eval2"}, {"data", a + "/data/data.csv"},
               {"checkpoint", a + "/run/checkpoint.json"}},
              {});
  CHECK(read_text_file(a + "/data/data.csv") == data_before);
  CHECK(read_text_file(a + "/run/checkpoint.json") == ck_before);
  CHECK(read_text_file(a + "/eval/eval_report.csv") == read_text_file(a + "/eval2/eval_report.csv"));
  gpfa_pipeline(b);
  CHECK(read_text_file(a + "/data/data.csv") == read_text_file(b + "/data/data.csv"));
  CHECK(read_text_file(a + "/eval/eval_report.csv") == read_text_file(b + "/eval/eval_report.csv"));
  const auto fe_a = read_csv(a + "/run/trace.csv");
  const auto fe_b = read_csv(b + "/run/trace.csv");
  REQUIRE(fe_a.size() == fe_b.size());
  for (std::size_t r = 0; r < fe_a.size(); ++r)
    for (std::size_t c = 0; c + 1 < fe_a[r].size(); ++c) CHECK(fe_a[r][c] == fe_b[r][c]);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("configuration errors") {
  const std::string dir = scratch("errors");
  CHECK(code_of("train", {{"out", dir}, {"colour", 1}}) == ErrorCode::kConfig);
  CHECK(code_of("gen-data", {{"out", dir}, {"dataset", {{"kind", "bar"}, {"sides", 8}}}}) == ErrorCode::kConfig);
  CHECK(code_of("gen-data", {{"out", dir}, {"dataset", {{"kind", "spiral"}}}}) == ErrorCode::kConfig);
  CHECK(code_of("gen-data", {{"out", dir}}) == ErrorCode::kConfig);
  CHECK(code_of("bench", {{"out", dir}}, {{"omega", 4}}) == ErrorCode::kConfig);
  CHECK(code_of("bench", {{"out", dir}}, {{"verbose", true}}) == ErrorCode::kConfig);
  CHECK(code_of("train", {{"out", dir}, {"dataset", {{"kind", "bar"}}}, {"model", {{"kind", "lstm"}}}}) ==
        ErrorCode::kConfig);
  CHECK(code_of("train", {{"out", dir}, {"model", {{"kind", "tree"}}}}) == ErrorCode::kConfig);
  CHECK(code_of("eval", {{"out", dir}, {"checkpoint", dir + "/none.json"}}) == ErrorCode::kConfig);
  CHECK(code_of("train", {{"out", dir}, {"seed", "four"}, {"model", {{"kind", "gmm"}}},
                          {"dataset", {{"kind", "pinwheel"}}}}) == ErrorCode::kConfig);
  try {
    load_config(dir + "/missing.json");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kConfig);
    CHECK(std::string(e.what()).find("missing.json") != std::string::npos);
  }
  CHECK(exit_code_for(ErrorCode::kConfig) == 2);
  CHECK(exit_code_for(ErrorCode::kShapeMismatch) == 2);
  CHECK(exit_code_for(ErrorCode::kNumerical) == 3);
  CHECK(exit_code_for(ErrorCode::kNotPositiveDefinite) == 3);
  fs::remove_all(dir);
}

TEST_CASE("overrides land in the effective configuration") {
  const std::string dir = scratch("overrides");
  run_command("gen-data", {{"dataset", {{"kind", "bar"}, {"samples", 16}}}},
              {{"seed", 9}, {"out", dir}, {"omega", 10.0}});
  const Json manifest = read_json_file(dir + "/manifest.json");
  CHECK(manifest["seed"] == 9);
  CHECK(manifest["config"]["dataset"]["omega"] == 10.0);
  const Json side = read_json_file(dir + "/data.json");
  CHECK(side["kind"] == "bar");
  CHECK(side["config"]["omega"] == 10.0);
  CHECK(read_csv(dir + "/data.csv").size() == 16);
  fs::remove_all(dir);
}

TEST_CASE("tree and gmm train and eval") {
  const std::string dir = scratch("models");
  run_command("gen-data", {{"seed", 1}, {"out", dir + "/bars"}, {"dataset", {{"kind", "bar"}, {"samples", 64}}}}, {});
  const Json t = run_command("train",
                             {{"seed", 1}, {"out", dir + "/tree"}, {"data", dir + "/bars/data.csv"},
                              {"model", {{"kind", "tree"}, {"recognition_hidden", {8}}, {"decoder_hidden", {8}}}},
                              {"train", {{"epochs", 2}, {"batch", 32}}}},
                             {});
  CHECK(t["variant"] == "tree");
  const Json te = run_command("eval",
                              {{"seed", 1}, {"out", dir + "/tree_eval"}, {"data", dir + "/bars/data.csv"},
                               {"checkpoint", dir + "/tree/checkpoint.json"}},
                              {});
  CHECK(std::isfinite(te["free_energy"].get<double>()));
  CHECK(te["cross_distance"].get<double>() >= 0.0);

  const Json g = run_command("train",
                             {{"seed", 1}, {"out", dir + "/gmm"},
                              {"dataset", {{"kind", "pinwheel"}, {"points_per_arm", 20}}},
                              {"model", {{"kind", "gmm"}, {"variant", "vae"}, {"hidden", {8}}}},
                              {"train", {{"epochs", 2}}}},
                             {});
  CHECK(g["variant"] == "vae");
  const Json ge = run_command("eval",
                              {{"seed", 1}, {"out", dir + "/gmm_eval"},
                               {"dataset", {{"kind", "pinwheel"}, {"points_per_arm", 20}}},
                               {"checkpoint", dir + "/gmm/checkpoint.json"}},
                              {});
  CHECK(ge["coverage"].get<double>() >= 0.0);
  CHECK(ge["coverage"].get<double>() <= 1.0);
  fs::remove_all(dir);
}

TEST_CASE("reinfer writes posterior and latents") {
  const std::string dir = scratch("reinfer");
  gpfa_pipeline(dir);
  const Json r = run_command("reinfer",
                             {{"seed", 4}, {"out", dir + "/re"}, {"data", dir + "/data/data.csv"},
                              {"checkpoint", dir + "/run/checkpoint.json"}, {"reinfer", {{"steps", 0}}}},
                             {{"inducing", 12}});
  CHECK(r["inducing"] == 12);
  CHECK(std::isfinite(r["free_energy"].get<double>()));
  CHECK(r["off_diagonal_ratio"].get<double>() >= 0.0);
  const Json post = read_json_file(dir + "/re/posterior.json");
  CHECK(post["inducing"].size() == 2);
  std::vector<std::string> header;
  read_csv(dir + "/re/latents.csv", &header);
  CHECK(header == std::vector<std::string>{"t", "mean_1", "mean_2", "var_1", "var_2"});
  fs::remove_all(dir);
}

TEST_CASE("compare-bounds emits per-variant free energies and a verdict") {
  const std::string dir = scratch("compare");
  const Json s = run_command("compare-bounds",
                             {{"samples", 32}, {"model", {{"recognition_hidden", {8}}, {"decoder_hidden", {8}}}},
                              {"train", {{"batch", 16}}}},
                             {{"out", dir}, {"dataset", "bar"}, {"omega", 4.0}, {"seeds", 2}, {"epochs", 1}});
  CHECK(s["free_energy"]["tree"].size() == 2);
  CHECK(s["free_energy"]["svae"].size() == 2);
  CHECK(s["ordering_holds"].is_boolean());
  CHECK(s["omega"] == 4.0);
  CHECK(read_text_file(dir + "/compare.csv").rfind("variant,seed,free_energy\n", 0) == 0);
  fs::remove_all(dir);
}
