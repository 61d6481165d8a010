/* Copyright 2026 The cfss Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#pragma once

#include <cmath>
#include <random>
#include <string>

#include "cfss/ops.hpp"
#include "cfss/params.hpp"

namespace cfss {

// Kaiming-uniform weights (ReLU gain), zero bias.
template <typename T>
Tensor<T> kaiming_uniform(const Shape& shape, int fan_in, std::mt19937_64& rng) {
  Tensor<T> w(shape);
  const double bound = std::sqrt(6.0 / fan_in);
  for (auto& v : w.values()) v = static_cast<T>(uniform(rng, -bound, bound));
  return w;
}

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;

  Conv2d(ParameterStore<T>& store, const std::string& name, int in_channels, int out_channels,
         int kernel, ConvGeometry geometry, std::mt19937_64& rng, bool with_bias = true)
      : in_channels_(in_channels), out_channels_(out_channels), kernel_(kernel), geometry_(geometry) {
    if (in_channels < 1 || out_channels < 1 || kernel < 1) {
      throw ArgumentError("conv " + name + ": sizes must be positive");
    }
    weight_id_ = store.add(name + ".weight",
                           kaiming_uniform<T>({out_channels, in_channels, kernel, kernel},
                                              in_channels * kernel * kernel, rng));
    if (with_bias) bias_id_ = store.add(name + ".bias", Tensor<T>({out_channels}));
  }

  Var<T> operator()(Binding<T>& params, const Var<T>& x) const {
    return conv2d(x, params[weight_id_], bias_id_ >= 0 ? params[bias_id_] : Var<T>{}, geometry_);
  }

  int weight_id() const { return weight_id_; }
  int bias_id() const { return bias_id_; }
  int in_channels() const { return in_channels_; }
  int out_channels() const { return out_channels_; }
  const ConvGeometry& geometry() const { return geometry_; }

 private:
  int in_channels_ = 0;
  int out_channels_ = 0;
  int kernel_ = 1;
  ConvGeometry geometry_;
  int weight_id_ = -1;
  int bias_id_ = -1;
};

// Two-layer perceptron on a vector, realised as 1x1 convolutions on (C, 1, 1).
template <typename T>
class Mlp {
 public:
  Mlp() = default;

  Mlp(ParameterStore<T>& store, const std::string& name, int in, int hidden, int out,
      std::mt19937_64& rng)
      : fc1_(store, name + ".fc1", in, hidden, 1, {}, rng),
        fc2_(store, name + ".fc2", hidden, out, 1, {}, rng) {}

  // Any input with `in` elements; output has shape (out, 1, 1).
  Var<T> operator()(Binding<T>& params, const Var<T>& x) const {
    const int n = static_cast<int>(x.value().size());
    Var<T> h = relu(fc1_(params, reshape(x, {n, 1, 1})));
    return fc2_(params, h);
  }

  const Conv2d<T>& fc1() const { return fc1_; }
  const Conv2d<T>& fc2() const { return fc2_; }

 private:
  Conv2d<T> fc1_;
  Conv2d<T> fc2_;
};

}  // namespace cfss
