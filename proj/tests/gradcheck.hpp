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

// Central finite-difference gradient checks in double precision.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "cfss/autograd.hpp"
#include "cfss/ops.hpp"
#include "cfss/params.hpp"
#include "oracle.hpp"

namespace gradcheck {

using cfss::Binding;
using cfss::ParameterStore;
using cfss::Tensor;
using cfss::Var;

inline double relative_error(const std::vector<double>& a, const std::vector<double>& n) {
  double diff = 0, na = 0, nn = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - n[i]) * (a[i] - n[i]);
    na += a[i] * a[i];
    nn += n[i] * n[i];
  }
  const double denom = std::max({std::sqrt(na), std::sqrt(nn), 1e-12});
  return std::sqrt(diff) / denom;
}

// Scalar projection sum_i w_i x_i with fixed weights, so any tensor-valued
// function can be checked through one backward pass.
inline Var<double> project(const Var<double>& x, const Tensor<double>& weights) {
  double acc = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) acc += weights[i] * x.value()[i];
  return cfss::make_var<double>(Tensor<double>({1}, acc), {x}, [x, weights](const Tensor<double>& g) {
    auto* gx = cfss::grad_slot(x);
    for (std::size_t i = 0; i < weights.size(); ++i) (*gx)[i] += g[0] * weights[i];
  });
}

inline Tensor<double> random_tensor(std::mt19937_64& rng, const cfss::Shape& shape, double lo = -1,
                                    double hi = 1) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor<double> t(shape);
  for (auto& v : t.values()) v = d(rng);
  return t;
}

// Worst relative error over all inputs of f(inputs) -> scalar.
inline double check_inputs(std::vector<Tensor<double>> inputs,
                           const std::function<Var<double>(const std::vector<Var<double>>&)>& f,
                           double h = 1e-6) {
  std::vector<Var<double>> leaves;
  for (const auto& t : inputs) leaves.push_back(Var<double>::leaf(t));
  Var<double> out = f(leaves);
  cfss::backward(out);
  double worst = 0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor<double> g = leaves[k].grad();
    std::vector<double> analytic(g.values().begin(), g.values().end());
    std::vector<double> numeric(inputs[k].size());
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      auto eval = [&](double delta) {
        std::vector<Var<double>> c;
        for (std::size_t j = 0; j < inputs.size(); ++j) {
          Tensor<double> t = inputs[j];
          if (j == k) t[i] += delta;
          c.push_back(Var<double>::constant(t));
        }
        return f(c).value()[0];
      };
      numeric[i] = (eval(h) - eval(-h)) / (2 * h);
    }
    worst = std::max(worst, relative_error(analytic, numeric));
  }
  return worst;
}

// Worst relative error over the listed parameters of f(binding) -> scalar.
inline double check_parameters(ParameterStore<double>& store, const std::vector<int>& ids,
                               const std::function<Var<double>(Binding<double>&)>& f, double h = 1e-6) {
  Binding<double> params(store, true);
  Var<double> out = f(params);
  cfss::backward(out);
  const auto grads = params.gradients();
  double worst = 0;
  for (int id : ids) {
    std::vector<double> analytic(grads[id].values().begin(), grads[id].values().end());
    std::vector<double> numeric(analytic.size());
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      auto eval = [&](double delta) {
        const double keep = store.value(id)[i];
        store.mutable_value(id)[i] = keep + delta;
        Binding<double> frozen(store, false);
        const double v = f(frozen).value()[0];
        store.mutable_value(id)[i] = keep;
        return v;
      };
      numeric[i] = (eval(h) - eval(-h)) / (2 * h);
    }
    worst = std::max(worst, relative_error(analytic, numeric));
  }
  return worst;
}

}  // namespace gradcheck
