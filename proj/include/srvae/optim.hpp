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

#ifndef SRVAE_OPTIM_HPP_
#define SRVAE_OPTIM_HPP_

#include <span>
#include <vector>

#include "srvae/autodiff.hpp"

namespace srvae {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// One bias-corrected Adam descent step on every trainable parameter.
/// Gradient slots are left untouched; callers zero them.
void adam_step(std::span<Parameter* const> params, const AdamConfig& config);

inline void zero_grad(std::span<Parameter* const> params) {
  for (Parameter* p : params) p->zero_grad();
}

}  // namespace srvae

#endif  // SRVAE_OPTIM_HPP_
