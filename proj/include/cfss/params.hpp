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
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cfss/autograd.hpp"
#include "cfss/errors.hpp"
#include "cfss/tensor.hpp"

namespace cfss {

// Uniform double in [0, 1) from the top 53 bits; identical on every standard library.
inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

// Standard normal via Box-Muller.
inline double normal(std::mt19937_64& rng) {
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

// Integer in [0, n).
inline int uniform_index(std::mt19937_64& rng, int n) {
  return static_cast<int>(uniform01(rng) * n);
}

// splitmix64 finaliser; derives independent seeds from (seed, stream) pairs.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Named, ordered parameter tensors of one model. Ids are insertion indices.
template <typename T>
class ParameterStore {
 public:
  int add(std::string name, Tensor<T> init) {
    if (index_.count(name)) throw ArgumentError("duplicate parameter name: " + name);
    const int id = static_cast<int>(values_.size());
    index_.emplace(name, id);
    names_.push_back(std::move(name));
    values_.push_back(std::move(init));
    return id;
  }

  int size() const { return static_cast<int>(values_.size()); }
  const std::string& name(int id) const { return names_.at(id); }
  const Tensor<T>& value(int id) const { return values_.at(id); }
  Tensor<T>& mutable_value(int id) { return values_.at(id); }

  std::optional<int> find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t element_count() const {
    std::size_t n = 0;
    for (const auto& v : values_) n += v.size();
    return n;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor<T>> values_;
  std::unordered_map<std::string, int> index_;
};

// Per-forward view of a ParameterStore. Each parameter becomes a graph leaf
// on first use, so concurrent forward passes never share gradient buffers.
template <typename T>
class Binding {
 public:
  Binding(const ParameterStore<T>& store, bool trainable)
      : store_(&store), trainable_(trainable), vars_(store.size()) {}

  Var<T> operator[](int id) {
    auto& slot = vars_.at(id);
    if (!slot.defined()) {
      slot = trainable_ ? Var<T>::leaf(store_->value(id)) : Var<T>::constant(store_->value(id));
    }
    return slot;
  }

  // Gradients after backward(); untouched parameters report zeros.
  std::vector<Tensor<T>> gradients() const {
    std::vector<Tensor<T>> out;
    out.reserve(vars_.size());
    for (int id = 0; id < static_cast<int>(vars_.size()); ++id) {
      if (vars_[id].defined()) {
        out.push_back(vars_[id].grad());
      } else {
        out.emplace_back(store_->value(id).shape());
      }
    }
    return out;
  }

  bool trainable() const { return trainable_; }

 private:
  const ParameterStore<T>* store_;
  bool trainable_;
  std::vector<Var<T>> vars_;
};

}  // namespace cfss
