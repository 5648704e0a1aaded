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


/* C interface to the srvae library. All strings are UTF-8 and
 * NUL-terminated. Strings returned by the library stay valid until the next
 * call on the same context. */

#ifndef SRVAE_SRVAE_H_
#define SRVAE_SRVAE_H_

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define SRVAE_API __declspec(dllexport)
#else
#define SRVAE_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum srvae_status {
  SRVAE_OK = 0,
  SRVAE_ERR_INVALID_ARGUMENT = 1,
  SRVAE_ERR_SHAPE_MISMATCH = 2,
  SRVAE_ERR_NOT_POSITIVE_DEFINITE = 3,
  SRVAE_ERR_NON_SCALAR_ROOT = 4,
  SRVAE_ERR_MALFORMED_TREE = 5,
  SRVAE_ERR_STRUCTURE_MISMATCH = 6,
  SRVAE_ERR_INFINITE_KL = 7,
  SRVAE_ERR_TOO_LARGE = 8,
  SRVAE_ERR_NEGATIVE_COUNT = 9,
  SRVAE_ERR_ZERO_VARIANCE = 10,
  SRVAE_ERR_IO = 11,
  SRVAE_ERR_CONFIG = 12,
  SRVAE_ERR_NUMERICAL = 13,
  SRVAE_ERR_INTERNAL = 99
} srvae_status;

typedef struct srvae_context srvae_context;
typedef struct srvae_model srvae_model;

SRVAE_API const char* srvae_version(void);
SRVAE_API const char* srvae_status_name(srvae_status status);

/* Process exit code for a status: 0 ok, 3 numerical, 1 internal, 2 other. */
SRVAE_API int srvae_exit_code(srvae_status status);

SRVAE_API srvae_context* srvae_context_new(void);
SRVAE_API void srvae_context_free(srvae_context* ctx);

/* Message of the last failed call, or "" after a success. */
SRVAE_API const char* srvae_last_error(const srvae_context* ctx);

/* JSON summary of the last successful srvae_run, or "". */
SRVAE_API const char* srvae_last_result(const srvae_context* ctx);

/* Runs a subcommand (gen-data, train, eval, reinfer, bench, compare-bounds).
 * config_path may be NULL for an empty configuration. overrides_json is a
 * JSON object of flag values (seed, out, omega, latents, inducing, epochs,
 * dataset, seeds) or NULL. */
SRVAE_API srvae_status srvae_run(srvae_context* ctx, const char* command,
                                 const char* config_path,
                                 const char* overrides_json);

/* Same as srvae_run with the configuration given inline as JSON text. */
SRVAE_API srvae_status srvae_run_json(srvae_context* ctx, const char* command,
                                      const char* config_json,
                                      const char* overrides_json);

/* Loads a checkpoint written by `train`. */
SRVAE_API srvae_status srvae_model_load(srvae_context* ctx, const char* path,
                                        srvae_model** out);
SRVAE_API void srvae_model_free(srvae_model* model);

/* "gpfa", "tree" or "gmm". */
SRVAE_API const char* srvae_model_kind(const srvae_model* model);

/* Monte Carlo free energy of row-major data (rows x cols). For gpfa models
 * column 0 holds the time stamps and the rest the observations. */
SRVAE_API srvae_status srvae_model_free_energy(srvae_context* ctx,
                                               srvae_model* model,
                                               const double* data, size_t rows,
                                               size_t cols, size_t samples,
                                               uint64_t seed, double* out);

#ifdef __cplusplus
}
#endif

#endif /* SRVAE_SRVAE_H_ */
