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

// JSON and CSV helpers shared by checkpoints, datasets and reports.

#ifndef SRVAE_SERIALIZE_HPP_
#define SRVAE_SERIALIZE_HPP_

#include <json.hpp>

#include <string>
#include <vector>

#include "srvae/autodiff.hpp"
#include "srvae/nn.hpp"

namespace srvae {

using Json = nlohmann::json;

/// Matrix as a list of rows.
Json matrix_to_json(const Matrix& m);
/// Accepts a list of rows, a flat list (column vector) or a number (1 x 1).
Matrix matrix_from_json(const Json& j);

/// Value plus optimizer state.
Json parameter_to_json(const Parameter& p);
/// Restores into an existing parameter; shapes must match.
void parameter_from_json(const Json& j, Parameter& p);

Json mlp_to_json(const Mlp& net);
Mlp mlp_from_json(const std::string& name, const Json& j);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);
/// Throws Error(kIo) when unreadable and Error(kConfig) when not valid JSON.
Json read_json_file(const std::string& path);
void write_json_file(const std::string& path, const Json& j);

/// Writes a CSV with a header row; rows must match the header width.
void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows);
/// Reads a numeric CSV with a header row.
std::vector<std::vector<double>> read_csv(const std::string& path,
                                          std::vector<std::string>* header = nullptr);

/// Shortest decimal that round-trips a double.
std::string format_double(double v);

}  // namespace srvae

#endif  // SRVAE_SERIALIZE_HPP_
