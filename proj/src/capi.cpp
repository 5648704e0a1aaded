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


#include "srvae/srvae.h"

#include <memory>
#include <new>
#include <string>
#include <variant>

#include "srvae/experiments.hpp"
#include "srvae/gmm_srvae.hpp"
#include "srvae/sr_nlgpfa.hpp"
#include "srvae/tree_srvae.hpp"

struct srvae_context {
  std::string error;
  std::string result;
};

struct srvae_model {
  std::string kind;
  Eigen::Index window = 128;
  Eigen::Index inducing = 64;
  std::variant<std::monostate, srvae::GpfaModel, srvae::TreeSrvaeModel, srvae::GmmSrvaeModel> model;
};

namespace {

srvae_status to_status(srvae::ErrorCode code) {
  return static_cast<srvae_status>(static_cast<int>(code) + 1);
}

template <class F>
srvae_status guarded(srvae_context* ctx, F&& body) {
  if (ctx == nullptr) return SRVAE_ERR_INVALID_ARGUMENT;
  ctx->error.clear();
  try {
    body();
    return SRVAE_OK;
  } catch (const srvae::Error& e) {
    ctx->error = e.what();
    return to_status(e.code());
  } catch (const srvae::Json::exception& e) {
    ctx->error = std::string("Config: ") + e.what();
    return SRVAE_ERR_CONFIG;
  } catch (const std::bad_alloc&) {
    ctx->error = "Internal: out of memory";
    return SRVAE_ERR_INTERNAL;
  } catch (const std::exception& e) {
    ctx->error = std::string("Internal: ") + e.what();
    return SRVAE_ERR_INTERNAL;
  }
}

srvae::Json parse_overrides(const char* text) {
  if (text == nullptr || *text == '\0') return srvae::Json::object();
  try {
    return srvae::Json::parse(text);
  } catch (const srvae::Json::exception& e) {
    srvae::fail(srvae::ErrorCode::kConfig, std::string("overrides are not valid JSON: ") + e.what());
  }
}

srvae_status run(srvae_context* ctx, const char* command, const srvae::Json& (*config)(const char*, srvae::Json&),
                 const char* source, const char* overrides) {
  return guarded(ctx, [&] {
    srvae::require(command != nullptr, srvae::ErrorCode::kInvalidArgument, "command is NULL");
    ctx->result.clear();
    srvae::Json storage;
    const srvae::Json& cfg = config(source, storage);
    ctx->result = srvae::run_command(command, cfg, parse_overrides(overrides)).dump();
  });
}

const srvae::Json& config_from_path(const char* path, srvae::Json& storage) {
  storage = path ? srvae::load_config(path) : srvae::Json::object();
  return storage;
}

const srvae::Json& config_from_text(const char* text, srvae::Json& storage) {
  if (text == nullptr || *text == '\0') {
    storage = srvae::Json::object();
  } else {
    try {
      storage = srvae::Json::parse(text);
    } catch (const srvae::Json::exception& e) {
      srvae::fail(srvae::ErrorCode::kConfig, std::string("config is not valid JSON: ") + e.what());
    }
  }
  return storage;
}

}  // namespace

extern "C" {

const char* srvae_version(void) { return srvae::version_string(); }

const char* srvae_status_name(srvae_status status) {
  if (status == SRVAE_OK) return "Ok";
  if (status == SRVAE_ERR_INTERNAL) return "Internal";
  if (status >= SRVAE_ERR_INVALID_ARGUMENT && status <= SRVAE_ERR_NUMERICAL)
    return srvae::error_code_name(static_cast<srvae::ErrorCode>(status - 1));
  return "Unknown";
}

int srvae_exit_code(srvae_status status) {
  if (status == SRVAE_OK) return 0;
  if (status == SRVAE_ERR_INTERNAL) return 1;
  if (status >= SRVAE_ERR_INVALID_ARGUMENT && status <= SRVAE_ERR_NUMERICAL)
    return srvae::exit_code_for(static_cast<srvae::ErrorCode>(status - 1));
  return 1;
}

srvae_context* srvae_context_new(void) { return new (std::nothrow) srvae_context(); }

void srvae_context_free(srvae_context* ctx) { delete ctx; }

const char* srvae_last_error(const srvae_context* ctx) { return ctx ? ctx->error.c_str() : ""; }

const char* srvae_last_result(const srvae_context* ctx) { return ctx ? ctx->result.c_str() : ""; }

srvae_status srvae_run(srvae_context* ctx, const char* command, const char* config_path,
                       const char* overrides_json) {
  return run(ctx, command, config_from_path, config_path, overrides_json);
}

srvae_status srvae_run_json(srvae_context* ctx, const char* command, const char* config_json,
                            const char* overrides_json) {
  return run(ctx, command, config_from_text, config_json, overrides_json);
}

srvae_status srvae_model_load(srvae_context* ctx, const char* path, srvae_model** out) {
  return guarded(ctx, [&] {
    srvae::require(path != nullptr && out != nullptr, srvae::ErrorCode::kInvalidArgument,
                   "model_load: NULL argument");
    *out = nullptr;
    const srvae::Json j = srvae::read_json_file(path);
    auto m = std::make_unique<srvae_model>();
    m->kind = j.at("model_kind").get<std::string>();
    if (m->kind == "gpfa") {
      m->model.emplace<srvae::GpfaModel>(srvae::GpfaModel::from_json(j.at("model")));
      m->window = j.at("train").at("window").get<Eigen::Index>();
      m->inducing = j.at("train").at("inducing").get<Eigen::Index>();
    } else if (m->kind == "tree") {
      m->model.emplace<srvae::TreeSrvaeModel>(srvae::TreeSrvaeModel::from_json(j.at("model")));
    } else if (m->kind == "gmm") {
      m->model.emplace<srvae::GmmSrvaeModel>(srvae::GmmSrvaeModel::from_json(j.at("model")));
    } else {
      srvae::fail(srvae::ErrorCode::kConfig, "model_load: unknown model kind '" + m->kind + "'");
    }
    *out = m.release();
  });
}

void srvae_model_free(srvae_model* model) { delete model; }

const char* srvae_model_kind(const srvae_model* model) { return model ? model->kind.c_str() : ""; }

srvae_status srvae_model_free_energy(srvae_context* ctx, srvae_model* model, const double* data,
                                     size_t rows, size_t cols, size_t samples, uint64_t seed,
                                     double* out) {
  return guarded(ctx, [&] {
    srvae::require(model != nullptr && data != nullptr && out != nullptr,
                   srvae::ErrorCode::kInvalidArgument, "model_free_energy: NULL argument");
    srvae::require(rows > 0 && cols > 0 && samples > 0, srvae::ErrorCode::kInvalidArgument,
                   "model_free_energy: empty data or zero samples");
    using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const srvae::Matrix y = Eigen::Map<const RowMajor>(data, static_cast<Eigen::Index>(rows),
                                                       static_cast<Eigen::Index>(cols));
    const auto s = static_cast<Eigen::Index>(samples);
    auto& variant = model->model;
    if (auto* g = std::get_if<srvae::GpfaModel>(&variant)) {
      srvae::require(cols >= 2, srvae::ErrorCode::kShapeMismatch,
                     "model_free_energy: gpfa data needs a time column and observations");
      *out = srvae::evaluate_free_energy(*g, y.leftCols(1), y.rightCols(y.cols() - 1), model->window,
                                         model->inducing, s, seed);
    } else if (auto* t = std::get_if<srvae::TreeSrvaeModel>(&variant)) {
      *out = srvae::evaluate_free_energy(*t, y, s, seed);
    } else if (auto* m = std::get_if<srvae::GmmSrvaeModel>(&variant)) {
      *out = srvae::evaluate_free_energy(*m, y, s, seed);
    }
  });
}

}  // extern "C"
