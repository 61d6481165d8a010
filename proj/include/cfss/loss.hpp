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

#include <string>

#include "cfss/core.hpp"

namespace cfss {

struct LossWeights {
  double lambda1 = 0.1;  // segmentation
  double lambda2 = 0.5;  // prior consistency
  double lambda3 = 0.6;  // self-support

  void validate() const {
    if (lambda1 < 0 || lambda2 < 0 || lambda3 < 0) throw ArgumentError("loss weights must be >= 0");
  }
};

template <typename T>
Var<T> bce_loss(const Var<T>& pred, const Tensor<T>& target) {
  return bce(pred, target);
}

// Final prediction (1, H, W) against the query mask at image resolution.
template <typename T>
Var<T> seg_loss(const Var<T>& foreground_prob, const BinaryMask& query_mask) {
  if (foreground_prob.value().size() != query_mask.size()) {
    throw ArgumentError("seg_loss: prediction " + shape_string(foreground_prob.shape()) +
                        " does not match the query mask");
  }
  return bce(foreground_prob, query_mask.as<T>());
}

// Prior (1, Hh, Wh) against the query mask taken down to the prior's grid.
template <typename T>
Var<T> prior_loss(const Var<T>& prior, const BinaryMask& query_mask) {
  const GridMask grid = resize_mask(query_mask, prior.shape()[1], prior.shape()[2]);
  return bce(prior, grid.binary<T>());
}

// Cosine map of the fused support prototype against each branch's support
// features, mapped to [0, 1] by (1 + s) / 2 and scored with BCE against the
// support mask on the feature grid. Sum over the two branches.
template <typename T>
Var<T> ssp_loss(const Var<T>& prototype, const Var<T>& support_rgb, const Var<T>& support_ref,
                const BinaryMask& support_mask) {
  if (support_rgb.shape() != support_ref.shape()) {
    throw ArgumentError("ssp_loss: branch features differ in shape");
  }
  const GridMask grid = resize_mask(support_mask, support_rgb.shape()[1], support_rgb.shape()[2]);
  const Tensor<T> target = grid.binary<T>();
  auto term = [&](const Var<T>& features) {
    return bce(add_scalar(scale(cosine_map(prototype, features), T{0.5}), T{0.5}), target);
  };
  return add(term(support_rgb), term(support_ref));
}

inline double total_loss(double seg, double prior, double ssp, const LossWeights& w) {
  if (seg < 0 || prior < 0 || ssp < 0) throw ArgumentError("total_loss: loss terms must be >= 0");
  w.validate();
  return w.lambda1 * seg + w.lambda2 * prior + w.lambda3 * ssp;
}

template <typename T>
Var<T> total_loss(const Var<T>& seg, const Var<T>& prior, const Var<T>& ssp, const LossWeights& w) {
  w.validate();
  return add(add(scale(seg, static_cast<T>(w.lambda1)), scale(prior, static_cast<T>(w.lambda2))),
             scale(ssp, static_cast<T>(w.lambda3)));
}

}  // namespace cfss
