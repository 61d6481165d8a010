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

// Prototype extraction (masked average pooling), RGB/reflectance prototype
// fusion, self-support refinement, and cosine-metric mask prediction.

#include <random>
#include <vector>

#include "cfss/core.hpp"
#include "cfss/layers.hpp"

namespace cfss {

inline constexpr double kDefaultTemperature = 10.0;

template <typename T>
struct PrototypePair {
  Prototype<T> foreground;
  Prototype<T> background;
};

template <typename T>
Prototype<T> masked_average_pool(const FeatureMap<T>& features, const BinaryMask& mask, Polarity polarity) {
  const GridMask grid = resize_mask(mask, features.height(), features.width());
  const bool fg = polarity == Polarity::kForeground;
  std::vector<int> cells = fg ? grid.foreground() : grid.background();
  if (cells.empty()) {
    const std::string msg = std::string("masked average pooling: no ") +
                            (fg ? "foreground" : "background") + " cell on the " +
                            std::to_string(features.height()) + "x" + std::to_string(features.width()) +
                            " grid";
    if (fg) throw EmptyForeground(msg);
    throw EmptyBackground(msg);
  }
  return {masked_mean(features.data, cells), polarity};
}

// Mean over shots of per-shot prototypes (weighted by shot, not by pixel).
template <typename T>
Prototype<T> average_prototypes(const std::vector<Prototype<T>>& shots) {
  if (shots.empty()) throw ArgumentError("average_prototypes: no shots");
  std::vector<Var<T>> data;
  for (const auto& p : shots) data.push_back(p.data);
  return {mean_of(data), shots.front().polarity};
}

// g * a + (1 - g) * b per channel.
template <typename T>
Var<T> gated_blend(const Var<T>& a, const Var<T>& b, const Var<T>& gate) {
  return add(b, mul(gate, sub(a, b)));
}

// Per-channel convex combination of the RGB and reflectance prototypes with a
// gate predicted from both.
template <typename T>
class PrototypeFusion {
 public:
  PrototypeFusion() = default;

  PrototypeFusion(ParameterStore<T>& store, int channels, std::mt19937_64& rng)
      : channels_(channels), gate_(store, "pfm.gate", 2 * channels, channels, channels, rng) {}

  Var<T> gate(Binding<T>& params, const Prototype<T>& rgb, const Prototype<T>& ref) const {
    return reshape(sigmoid(gate_(params, concat<T>({rgb.data, ref.data}))), {channels_});
  }

  Prototype<T> operator()(Binding<T>& params, const Prototype<T>& rgb, const Prototype<T>& ref) const {
    if (rgb.dims() != ref.dims() || rgb.dims() != channels_) {
      throw ArgumentError("prototype fusion: dimension mismatch");
    }
    return {gated_blend(rgb.data, ref.data, gate(params, rgb, ref)), rgb.polarity};
  }

  const Mlp<T>& gate_mlp() const { return gate_; }

 private:
  int channels_ = 0;
  Mlp<T> gate_;
};

// Softmax over temperature-scaled cosine similarity to the two prototypes.
// Returns (2, H, W): channel 0 foreground, channel 1 background.
template <typename T>
Var<T> predict_mask(const PrototypePair<T>& prototypes, const Var<T>& features,
                    T temperature = static_cast<T>(kDefaultTemperature)) {
  Var<T> logits = concat<T>({cosine_map(prototypes.foreground.data, features),
                             cosine_map(prototypes.background.data, features)});
  return softmax_channels(scale(logits, temperature));
}

struct SspOptions {
  double fg_threshold = 0.7;
  double bg_threshold = 0.7;
  double blend = 0.5;  // weight of the support prototype in the refined one
};

// Refines the prototypes with query cells the current prototypes already
// classify confidently. A polarity with no confident cell keeps its prototype.
template <typename T>
PrototypePair<T> self_support_prototype(const PrototypePair<T>& prototypes, const Var<T>& query_features,
                                        const SspOptions& options = {},
                                        T temperature = static_cast<T>(kDefaultTemperature)) {
  const Tensor<T> probs = predict_mask(prototypes, Var<T>::constant(query_features.value()), temperature).value();
  const std::size_t n = probs.size() / 2;
  std::vector<int> fg, bg;
  for (std::size_t i = 0; i < n; ++i) {
    if (probs[i] >= static_cast<T>(options.fg_threshold)) fg.push_back(static_cast<int>(i));
    if (probs[n + i] >= static_cast<T>(options.bg_threshold)) bg.push_back(static_cast<int>(i));
  }
  auto refine = [&](const Prototype<T>& p, const std::vector<int>& cells) -> Prototype<T> {
    if (cells.empty()) return p;
    Var<T> self = masked_mean(query_features, cells);
    const T keep = static_cast<T>(options.blend);
    return {add(scale(p.data, keep), scale(self, T{1} - keep)), p.polarity};
  };
  return {refine(prototypes.foreground, fg), refine(prototypes.background, bg)};
}

}  // namespace cfss
