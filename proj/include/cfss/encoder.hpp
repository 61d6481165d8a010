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

// Shared-weight feature extractor for the RGB and reflectance branches, and
// assembly of the mid-level (blocks 2+3) and high-level (block 5) features.

#include <array>
#include <random>
#include <string>
#include <vector>

#include "cfss/core.hpp"
#include "cfss/layers.hpp"

namespace cfss {

enum class BackboneKind { kTiny, kResidual50, kResidual101 };

inline const char* backbone_name(BackboneKind k) {
  switch (k) {
    case BackboneKind::kTiny: return "tiny";
    case BackboneKind::kResidual50: return "residual50-like";
    case BackboneKind::kResidual101: return "residual101-like";
  }
  return "?";
}

inline BackboneKind parse_backbone(const std::string& s) {
  if (s == "tiny") return BackboneKind::kTiny;
  if (s == "residual50-like") return BackboneKind::kResidual50;
  if (s == "residual101-like") return BackboneKind::kResidual101;
  throw ArgumentError("unknown backbone '" + s + "' (tiny, residual50-like, residual101-like)");
}

struct BackboneConfig {
  BackboneKind kind = BackboneKind::kTiny;
  std::array<int, 5> block_channels{16, 32, 64, 128, 256};
  // Bottleneck residual units stacked after each block's entry convolution.
  std::array<int, 5> residual_units{0, 0, 0, 0, 0};
  int mid_channels = 64;
  bool dilate_late_blocks = true;

  static BackboneConfig of_kind(BackboneKind kind) {
    BackboneConfig c;
    c.kind = kind;
    if (kind == BackboneKind::kResidual50) {
      c.block_channels = {64, 256, 512, 1024, 2048};
      c.residual_units = {0, 3, 4, 6, 3};
      c.mid_channels = 256;
    } else if (kind == BackboneKind::kResidual101) {
      c.block_channels = {64, 256, 512, 1024, 2048};
      c.residual_units = {0, 3, 4, 23, 3};
      c.mid_channels = 256;
    }
    return c;
  }

  void validate() const {
    for (int ch : block_channels) {
      if (ch < 1) throw ArgumentError("backbone block channels must be positive");
    }
    for (int u : residual_units) {
      if (u < 0) throw ArgumentError("backbone residual unit counts must be >= 0");
    }
    if (mid_channels < 8) throw ArgumentError("backbone mid_channels must be >= 8");
  }

  int high_channels() const { return block_channels[4]; }
};

// Per-branch mid and high features of one image.
template <typename T>
struct FeatureBundle {
  FeatureMap<T> mid_rgb, mid_ref, high_rgb, high_ref;

  const FeatureMap<T>& mid(Branch b) const { return b == Branch::kRgb ? mid_rgb : mid_ref; }
  const FeatureMap<T>& high(Branch b) const { return b == Branch::kRgb ? high_rgb : high_ref; }
};

template <typename T>
using BlockFeatures = std::array<FeatureMap<T>, 5>;

inline constexpr int kMinEncoderSide = 32;

template <typename T>
class Encoder {
 public:
  Encoder() = default;

  Encoder(ParameterStore<T>& store, const BackboneConfig& config, std::mt19937_64& rng)
      : config_(config) {
    config.validate();
    int in = 3;
    for (int b = 0; b < 5; ++b) {
      const int out = config.block_channels[b];
      const std::string prefix = "encoder.block" + std::to_string(b + 1);
      const int dil = dilation_of(b);
      ConvGeometry entry = dil > 1 ? ConvGeometry{1, dil, dil} : ConvGeometry{2, 1, 1};
      Block block;
      block.entry = Conv2d<T>(store, prefix + ".entry", in, out, 3, entry, rng);
      const int width = std::max(1, out / 4);
      for (int u = 0; u < config.residual_units[b]; ++u) {
        const std::string up = prefix + ".unit" + std::to_string(u);
        block.units.push_back({Conv2d<T>(store, up + ".reduce", out, width, 1, {}, rng),
                               Conv2d<T>(store, up + ".conv", width, width, 3, {1, dil, dil}, rng),
                               Conv2d<T>(store, up + ".expand", width, out, 1, {}, rng)});
      }
      blocks_[b] = std::move(block);
      in = out;
    }
    mid_proj_ = Conv2d<T>(store, "encoder.mid_proj",
                          config.block_channels[1] + config.block_channels[2], config.mid_channels, 1,
                          {}, rng);
  }

  const BackboneConfig& config() const { return config_; }
  const Conv2d<T>& mid_projection() const { return mid_proj_; }

  // Spatial size of block `block` (0-based) for an h x w input, without running it.
  std::pair<int, int> grid_size(int h, int w, int block) const {
    for (int b = 0; b <= block; ++b) {
      const int dil = dilation_of(b);
      const ConvGeometry g = dil > 1 ? ConvGeometry{1, dil, dil} : ConvGeometry{2, 1, 1};
      h = conv_output_size(h, 3, g);
      w = conv_output_size(w, 3, g);
    }
    return {h, w};
  }

  // Runs the five blocks. Both branches go through the same parameters.
  BlockFeatures<T> extract_blocks(Binding<T>& params, const Tensor<T>& image, Branch branch) const {
    require_rank(image, 3, "extract_blocks");
    if (image.dim(0) != 3) throw ArgumentError("extract_blocks: expected 3 input channels");
    if (image.dim(1) < kMinEncoderSide || image.dim(2) < kMinEncoderSide) {
      throw ArgumentError("extract_blocks: image must be at least 32x32, got " +
                          shape_string(image.shape()));
    }
    BlockFeatures<T> out;
    Var<T> x = Var<T>::constant(image);
    for (int b = 0; b < 5; ++b) {
      const Block& block = blocks_[b];
      x = relu(block.entry(params, x));
      for (const auto& unit : block.units) {
        Var<T> h = relu(unit.reduce(params, x));
        h = relu(unit.conv(params, h));
        x = relu(add(unit.expand(params, h), x));
      }
      out[b] = FeatureMap<T>{x, static_cast<Level>(b), branch};
    }
    return out;
  }

  // Block-2 output resized onto block-3's grid, concatenated, 1x1 projection.
  FeatureMap<T> mid_features(Binding<T>& params, const BlockFeatures<T>& blocks) const {
    const Var<T>& b3 = blocks[2].data;
    Var<T> b2 = resize_bilinear(blocks[1].data, b3.shape()[1], b3.shape()[2]);
    return {mid_proj_(params, concat<T>({b2, b3})), Level::kMid, blocks[2].branch};
  }

  FeatureBundle<T> build_feature_bundle(Binding<T>& params, const BlockFeatures<T>& rgb,
                                        const BlockFeatures<T>& ref) const {
    for (int b = 0; b < 5; ++b) {
      if (rgb[b].data.shape() != ref[b].data.shape()) {
        throw ArgumentError("feature bundle: rgb/ref block " + std::to_string(b + 1) +
                            " shapes differ");
      }
    }
    FeatureBundle<T> bundle;
    bundle.mid_rgb = mid_features(params, rgb);
    bundle.mid_ref = mid_features(params, ref);
    bundle.high_rgb = {rgb[4].data, Level::kHigh, Branch::kRgb};
    bundle.high_ref = {ref[4].data, Level::kHigh, Branch::kRef};
    return bundle;
  }

  FeatureBundle<T> encode(Binding<T>& params, const Tensor<T>& rgb_image,
                          const Tensor<T>& reflectance) const {
    return build_feature_bundle(params, extract_blocks(params, rgb_image, Branch::kRgb),
                                extract_blocks(params, reflectance, Branch::kRef));
  }

 private:
  struct Unit {
    Conv2d<T> reduce, conv, expand;
  };
  struct Block {
    Conv2d<T> entry;
    std::vector<Unit> units;
  };

  // Blocks 4 and 5 keep stride 8 through dilation 2 and 4 when enabled.
  int dilation_of(int block) const {
    if (!config_.dilate_late_blocks || block < 3) return 1;
    return block == 3 ? 2 : 4;
  }

  BackboneConfig config_;
  std::array<Block, 5> blocks_;
  Conv2d<T> mid_proj_;
};

}  // namespace cfss
