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

// Cross-similarity prior mask: dense cosine correlation between query and
// masked support high-level features, averaged over the support crack cells,
// min-max normalised, and fused across the four query/support branch pairs.

#include <array>
#include <random>
#include <vector>

#include "cfss/core.hpp"
#include "cfss/encoder.hpp"
#include "cfss/layers.hpp"

namespace cfss {

inline constexpr double kMinMaxEpsilon = 1e-6;

// Order of the four component maps: (query branch, support branch).
inline constexpr std::array<std::pair<Branch, Branch>, 4> kPriorPairs{{
    {Branch::kRgb, Branch::kRgb},
    {Branch::kRgb, Branch::kRef},
    {Branch::kRef, Branch::kRgb},
    {Branch::kRef, Branch::kRef},
}};

template <typename T>
struct PriorMask {
  Var<T> data;           // (1, Hh, Wh) foreground probability
  Var<T> probabilities;  // (2, Hh, Wh) foreground / background
  std::array<Var<T>, 4> components;  // ordered as kPriorPairs; undefined when not computed
};

template <typename T>
struct MaskedHighFeatures {
  Var<T> features;               // h_s scaled by the resized mask
  std::vector<int> foreground;   // cells where the resized mask exceeds 0.5
};

template <typename T>
MaskedHighFeatures<T> mask_high_features(const FeatureMap<T>& high, const BinaryMask& support_mask) {
  const GridMask grid = resize_mask(support_mask, high.height(), high.width());
  std::vector<int> fg = grid.foreground();
  if (fg.empty()) {
    throw EmptyForeground("support mask has no foreground cell on the " +
                          std::to_string(high.height()) + "x" + std::to_string(high.width()) +
                          " feature grid");
  }
  return {mul_spatial(high.data, Var<T>::constant(grid.as<T>())), std::move(fg)};
}

template <typename T>
Var<T> similarity_map(const Var<T>& query_high, const MaskedHighFeatures<T>& support) {
  return cross_similarity(query_high, support.features, support.foreground);
}

template <typename T>
Var<T> normalize_minmax(const Var<T>& v, T mu = static_cast<T>(kMinMaxEpsilon)) {
  return minmax_normalize(v, mu);
}

// 1x1 convolution from the four component maps to foreground/background
// logits, then a softmax over those two channels.
template <typename T>
class PriorFusion {
 public:
  PriorFusion() = default;

  PriorFusion(ParameterStore<T>& store, std::mt19937_64& rng)
      : conv_(store, "cspmg.fusion", 4, 2, 1, {}, rng) {
    Tensor<T>& w = store.mutable_value(conv_.weight_id());
    w.fill(T{0});
    for (int i = 0; i < 4; ++i) w[i] = static_cast<T>(0.25);  // foreground logit row
  }

  // components: four (1, H, W) maps.
  std::pair<Var<T>, Var<T>> operator()(Binding<T>& params, const std::array<Var<T>, 4>& components) const {
    for (const auto& c : components) {
      if (c.shape() != components[0].shape()) throw ArgumentError("prior components differ in shape");
    }
    Var<T> probs = softmax_channels(
        conv_(params, concat<T>({components[0], components[1], components[2], components[3]})));
    return {select_channel(probs, 0), probs};
  }

  const Conv2d<T>& conv() const { return conv_; }

 private:
  Conv2d<T> conv_;
};

template <typename T>
class PriorMaskGenerator {
 public:
  PriorMaskGenerator() = default;
  PriorMaskGenerator(ParameterStore<T>& store, std::mt19937_64& rng) : fusion_(store, rng) {}

  // Component maps of one support shot.
  std::array<Var<T>, 4> components(const FeatureBundle<T>& support, const FeatureBundle<T>& query,
                                   const BinaryMask& support_mask) const {
    const MaskedHighFeatures<T> masked_rgb = mask_high_features(support.high_rgb, support_mask);
    const MaskedHighFeatures<T> masked_ref = mask_high_features(support.high_ref, support_mask);
    std::array<Var<T>, 4> out;
    for (std::size_t k = 0; k < kPriorPairs.size(); ++k) {
      const auto [query_branch, support_branch] = kPriorPairs[k];
      const auto& masked = support_branch == Branch::kRgb ? masked_rgb : masked_ref;
      out[k] = normalize_minmax(similarity_map(query.high(query_branch).data, masked));
    }
    return out;
  }

  // K-shot: each component map is averaged over the shots before fusion.
  PriorMask<T> generate(Binding<T>& params, const std::vector<const FeatureBundle<T>*>& supports,
                        const FeatureBundle<T>& query, const std::vector<const BinaryMask*>& masks) const {
    if (supports.empty() || supports.size() != masks.size()) {
      throw ArgumentError("prior generation needs one mask per support bundle");
    }
    std::array<std::vector<Var<T>>, 4> per_shot;
    for (std::size_t s = 0; s < supports.size(); ++s) {
      auto comps = components(*supports[s], query, *masks[s]);
      for (int k = 0; k < 4; ++k) per_shot[k].push_back(comps[k]);
    }
    PriorMask<T> prior;
    for (int k = 0; k < 4; ++k) prior.components[k] = mean_of(per_shot[k]);
    std::tie(prior.data, prior.probabilities) = fusion_(params, prior.components);
    return prior;
  }

  const PriorFusion<T>& fusion() const { return fusion_; }

 private:
  PriorFusion<T> fusion_;
};

// Stand-in prior when the module is switched off: 0.5 everywhere.
template <typename T>
PriorMask<T> uniform_prior(int height, int width) {
  PriorMask<T> prior;
  prior.data = Var<T>::constant(Tensor<T>({1, height, width}, static_cast<T>(0.5)));
  prior.probabilities = Var<T>::constant(Tensor<T>({2, height, width}, static_cast<T>(0.5)));
  return prior;
}

}  // namespace cfss
