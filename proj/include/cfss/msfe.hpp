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

// Multi-scale query enhancement: modality fusion, channel attention from the
// support, recalibration and spatial attention on the query, and an atrous
// pyramid over [query features, prior mask, spatial attention].

#include <array>
#include <random>
#include <string>
#include <vector>

#include "cfss/core.hpp"
#include "cfss/layers.hpp"

namespace cfss {

inline constexpr std::array<int, 4> kAtrousRates{1, 6, 12, 18};
inline constexpr int kChannelReduction = 16;
inline constexpr int kMinAttentionHidden = 4;

template <typename T>
struct MsfeOutput {
  Var<T> features;         // m_fuse, (C, H, W)
  Var<T> channel_weights;  // A_c, (C, 1, 1)
  Var<T> spatial_weights;  // A_s, (1, H, W)
};

template <typename T>
class Msfe {
 public:
  Msfe() = default;

  Msfe(ParameterStore<T>& store, int channels, std::mt19937_64& rng) : channels_(channels) {
    if (channels < 1) throw ArgumentError("msfe: channel count must be positive");
    const int hidden = std::max(kMinAttentionHidden, channels / kChannelReduction);
    const int branch = branch_width(channels);
    fuse_ = Conv2d<T>(store, "msfe.fuse", 2 * channels, channels, 1, {}, rng);
    channel_mlp_ = Mlp<T>(store, "msfe.channel_mlp", channels, hidden, channels, rng);
    spatial_ = Conv2d<T>(store, "msfe.spatial", 2, 1, 3, {1, 1, 1}, rng);
    for (std::size_t i = 0; i < kAtrousRates.size(); ++i) {
      const int r = kAtrousRates[i];
      atrous_[i] = Conv2d<T>(store, "msfe.aspp.rate" + std::to_string(r), channels + 2, branch, 3,
                             {1, r, r}, rng);
    }
    pool_ = Conv2d<T>(store, "msfe.aspp.pool", channels + 2, branch, 1, {}, rng);
    project_ = Conv2d<T>(store, "msfe.aspp.project", 5 * branch, channels, 1, {}, rng);
  }

  static int branch_width(int channels) { return std::max(2, (channels + 3) / 4); }

  int channels() const { return channels_; }
  const Conv2d<T>& fuse_conv() const { return fuse_; }
  const Mlp<T>& channel_mlp() const { return channel_mlp_; }
  const Conv2d<T>& spatial_conv() const { return spatial_; }
  const Conv2d<T>& atrous_conv(int i) const { return atrous_.at(i); }
  const Conv2d<T>& pool_conv() const { return pool_; }
  const Conv2d<T>& projection() const { return project_; }

  // 1x1 convolution over the channel concatenation of both branches.
  Var<T> fuse_modal(Binding<T>& params, const Var<T>& m_rgb, const Var<T>& m_ref) const {
    if (m_rgb.shape() != m_ref.shape()) {
      throw ArgumentError("fuse_modal: rgb " + shape_string(m_rgb.shape()) + " vs ref " +
                          shape_string(m_ref.shape()));
    }
    return fuse_(params, concat<T>({m_rgb, m_ref}));
  }

  // sigmoid(MLP(GAP) + MLP(GMP)), one MLP for both descriptors.
  Var<T> channel_attention(Binding<T>& params, const Var<T>& support_fused) const {
    return sigmoid(add(channel_mlp_(params, global_avg_pool(support_fused)),
                       channel_mlp_(params, global_max_pool(support_fused))));
  }

  // (1 + A_c) * m, broadcast over pixels.
  static Var<T> recalibrate(const Var<T>& query_fused, const Var<T>& channel_weights) {
    return mul_channel(query_fused, add_scalar(channel_weights, T{1}));
  }

  Var<T> spatial_attention(Binding<T>& params, const Var<T>& features) const {
    return sigmoid(spatial_(params, concat<T>({channel_mean(features), channel_max(features)})));
  }

  Var<T> enhance(Binding<T>& params, const Var<T>& features, const Var<T>& prior,
                 const Var<T>& spatial_weights) const {
    const int h = features.shape()[1], w = features.shape()[2];
    Var<T> prior_grid = resize_bilinear(prior, h, w);
    Var<T> x = concat<T>({features, prior_grid, spatial_weights});
    std::vector<Var<T>> branches;
    for (const auto& conv : atrous_) branches.push_back(relu(conv(params, x)));
    branches.push_back(broadcast_spatial(relu(pool_(params, global_avg_pool(x))), h, w));
    return project_(params, concat(branches));
  }

  // Full path. Channel attention is averaged over the support shots.
  MsfeOutput<T> forward(Binding<T>& params, const std::vector<Var<T>>& support_fused,
                        const Var<T>& query_fused, const Var<T>& prior) const {
    if (support_fused.empty()) throw ArgumentError("msfe: no support features");
    std::vector<Var<T>> per_shot;
    for (const auto& s : support_fused) per_shot.push_back(channel_attention(params, s));
    MsfeOutput<T> out;
    out.channel_weights = mean_of(per_shot);
    Var<T> recalibrated = recalibrate(query_fused, out.channel_weights);
    out.spatial_weights = spatial_attention(params, recalibrated);
    out.features = enhance(params, recalibrated, prior, out.spatial_weights);
    return out;
  }

 private:
  int channels_ = 0;
  Conv2d<T> fuse_;
  Mlp<T> channel_mlp_;
  Conv2d<T> spatial_;
  std::array<Conv2d<T>, 4> atrous_;
  Conv2d<T> pool_;
  Conv2d<T> project_;
};

}  // namespace cfss
