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

// Per-epoch training metrics shared by every model.

#ifndef SRVAE_TRACE_HPP_
#define SRVAE_TRACE_HPP_

#include <string>
#include <vector>

namespace srvae {

struct MetricTrace {
  std::vector<double> free_energy;
  std::vector<double> recon;
  std::vector<double> kl;
  std::vector<double> seconds;

  std::size_t size() const { return free_energy.size(); }
  /// CSV with header epoch,free_energy,recon,kl,seconds.
  void write_csv(const std::string& path) const;
};

}  // namespace srvae

#endif  // SRVAE_TRACE_HPP_
