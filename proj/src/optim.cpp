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

#include "srvae/optim.hpp"

#include <cmath>

namespace srvae {

void adam_step(std::span<Parameter* const> params, const AdamConfig& config) {
  for (Parameter* p : params) {
    if (!p->trainable) continue;
    ++p->step;
    const double t = static_cast<double>(p->step);
    p->first_moment = config.beta1 * p->first_moment + (1.0 - config.beta1) * p->grad;
    p->second_moment = config.beta2 * p->second_moment +
                       (1.0 - config.beta2) * p->grad.cwiseProduct(p->grad);
    const double c1 = 1.0 - std::pow(config.beta1, t);
    const double c2 = 1.0 - std::pow(config.beta2, t);
    p->value.array() -= config.learning_rate * (p->first_moment.array() / c1) /
                        ((p->second_moment.array() / c2).sqrt() + config.epsilon);
  }
}

}  // namespace srvae
