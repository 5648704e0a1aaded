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

#include "srvae/nn.hpp"

#include <cmath>

namespace srvae {

Activation activation_from_string(const std::string& name) {
  if (name == "identity") return Activation::kIdentity;
  if (name == "relu") return Activation::kRelu;
  if (name == "sigmoid") return Activation::kSigmoid;
  if (name == "softplus") return Activation::kSoftplus;
  fail(ErrorCode::kInvalidArgument, "unknown activation '" + name + "'");
}

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::kIdentity: return "identity";
    case Activation::kRelu: return "relu";
    case Activation::kSigmoid: return "sigmoid";
    case Activation::kSoftplus: return "softplus";
  }
  return "identity";
}

Var apply_activation(const Var& x, Activation a) {
  switch (a) {
    case Activation::kIdentity: return x;
    case Activation::kRelu: return relu(x);
    case Activation::kSigmoid: return sigmoid(x);
    case Activation::kSoftplus: return softplus(x);
  }
  return x;
}

Mlp::Mlp(const std::string& name, const std::vector<Index>& sizes, Activation output,
         Rng& rng)
    : output_(output) {
  require(sizes.size() >= 2, ErrorCode::kInvalidArgument, "Mlp needs at least in/out sizes");
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(sizes[l]));
    Layer layer;
    layer.weight = Parameter(name + ".w" + std::to_string(l),
                             uniform(rng, sizes[l], sizes[l + 1], -bound, bound));
    layer.bias = Parameter(name + ".b" + std::to_string(l),
                           uniform(rng, 1, sizes[l + 1], -bound, bound));
    layers_.push_back(std::move(layer));
  }
}

Mlp::Mlp(const std::string& name, const std::vector<Matrix>& weights,
         const std::vector<Matrix>& biases, Activation output)
    : output_(output) {
  require(weights.size() == biases.size() && !weights.empty(), ErrorCode::kShapeMismatch,
          "Mlp: weight/bias count");
  for (std::size_t l = 0; l < weights.size(); ++l) {
    require(biases[l].rows() == 1 && biases[l].cols() == weights[l].cols(),
            ErrorCode::kShapeMismatch, "Mlp: bias shape");
    if (l > 0)
      require(weights[l].rows() == weights[l - 1].cols(), ErrorCode::kShapeMismatch,
              "Mlp: consecutive layer dimensions");
    Layer layer;
    layer.weight = Parameter(name + ".w" + std::to_string(l), weights[l]);
    layer.bias = Parameter(name + ".b" + std::to_string(l), biases[l]);
    layers_.push_back(std::move(layer));
  }
}

Var Mlp::forward(Tape& tape, const Var& x) {
  require(x.cols() == input_dim(), ErrorCode::kShapeMismatch,
          "Mlp: input has " + std::to_string(x.cols()) + " columns, expected " +
              std::to_string(input_dim()));
  Var h = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    h = add(matmul(h, tape.parameter(layers_[l].weight)), tape.parameter(layers_[l].bias));
    h = (l + 1 < layers_.size()) ? relu(h) : apply_activation(h, output_);
  }
  return h;
}

Matrix Mlp::evaluate(const Matrix& x) {
  Tape tape;
  return forward(tape, tape.constant(x)).value();
}

void Mlp::collect(std::vector<Parameter*>& out) {
  for (Layer& l : layers_) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const Layer& l : layers_) n += l.weight.value.size() + l.bias.value.size();
  return n;
}

Matrix mlp_forward(const std::vector<Matrix>& weights, const std::vector<Matrix>& biases,
                   Activation output, const Matrix& input) {
  Mlp net("mlp", weights, biases, output);
  return net.evaluate(input);
}

}  // namespace srvae
