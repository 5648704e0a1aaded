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

#ifndef SRVAE_NN_HPP_
#define SRVAE_NN_HPP_

#include <string>
#include <vector>

#include "srvae/autodiff.hpp"
#include "srvae/random.hpp"

namespace srvae {

enum class Activation { kIdentity, kRelu, kSigmoid, kSoftplus };

Activation activation_from_string(const std::string& name);
const char* activation_name(Activation a);

Var apply_activation(const Var& x, Activation a);

/// Fully connected network: ReLU on hidden layers, `output` on the last.
/// Weights are stored as (fan_in x fan_out), biases as (1 x fan_out).
class Mlp {
 public:
  Mlp() = default;
  /// sizes = {in, hidden..., out}; weights ~ U[-1/sqrt(fan_in), 1/sqrt(fan_in)].
  Mlp(const std::string& name, const std::vector<Index>& sizes, Activation output, Rng& rng);
  /// From explicit parameters.
  Mlp(const std::string& name, const std::vector<Matrix>& weights,
      const std::vector<Matrix>& biases, Activation output);

  Var forward(Tape& tape, const Var& x);
  /// Same computation on a throwaway tape.
  Matrix evaluate(const Matrix& x);

  Index input_dim() const { return layers_.empty() ? 0 : layers_.front().weight.value.rows(); }
  Index output_dim() const { return layers_.empty() ? 0 : layers_.back().weight.value.cols(); }
  std::size_t depth() const { return layers_.size(); }
  Activation output_activation() const { return output_; }

  Parameter& weight(std::size_t layer) { return layers_[layer].weight; }
  Parameter& bias(std::size_t layer) { return layers_[layer].bias; }
  const Parameter& weight(std::size_t layer) const { return layers_[layer].weight; }
  const Parameter& bias(std::size_t layer) const { return layers_[layer].bias; }

  void collect(std::vector<Parameter*>& out);
  std::size_t parameter_count() const;

 private:
  struct Layer {
    Parameter weight;
    Parameter bias;
  };
  std::vector<Layer> layers_;
  Activation output_ = Activation::kIdentity;
};

/// Runs an MLP given explicit layer matrices (no parameters involved).
Matrix mlp_forward(const std::vector<Matrix>& weights, const std::vector<Matrix>& biases,
                   Activation output, const Matrix& input);

}  // namespace srvae

#endif  // SRVAE_NN_HPP_
