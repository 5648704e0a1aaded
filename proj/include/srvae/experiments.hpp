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

// JSON-configured experiment commands shared by the C API and the CLI.
//
// Every command reads one configuration document, writes its outputs and a
// manifest.json under the configured output directory and returns a JSON
// summary. Unknown configuration keys are rejected before any work starts.

#ifndef SRVAE_EXPERIMENTS_HPP_
#define SRVAE_EXPERIMENTS_HPP_

#include <string>
#include <vector>

#include "srvae/error.hpp"
#include "srvae/serialize.hpp"

namespace srvae {

/// Names accepted by run_command.
const std::vector<std::string>& command_names();

/// Reads a configuration file; a missing or malformed file is kConfig and
/// the message names the path.
Json load_config(const std::string& path);

/// Command-line overrides. Recognised keys: seed, out, omega, latents,
/// inducing, epochs, dataset, seeds; null means none. A key that has no meaning for the
/// command is a configuration error.
Json run_command(const std::string& command, const Json& config, const Json& overrides);

/// Process exit code for an error: 3 for numerical failures, 2 otherwise.
int exit_code_for(ErrorCode code);

/// Library version string (release plus git description).
const char* version_string();

}  // namespace srvae

#endif  // SRVAE_EXPERIMENTS_HPP_
