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

// Domain types shared by every stage of the pipeline, plus the plain
// (non-differentiable) numeric primitives: bilinear resampling, cosine
// similarity and the broadcast Hadamard product.

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cfss/autograd.hpp"
#include "cfss/errors.hpp"
#include "cfss/ops.hpp"
#include "cfss/resample.hpp"
#include "cfss/tensor.hpp"

namespace cfss {

inline constexpr int kMinImageSide = 8;

// RGB image, channel-major (3, H, W), values in [0, 1].
class Image {
 public:
  Image() = default;

  explicit Image(Tensor<float> chw) : chw_(std::move(chw)) {
    if (chw_.rank() != 3 || chw_.dim(0) != 3) {
      throw ArgumentError("image must have shape (3, H, W), got " + shape_string(chw_.shape()));
    }
    if (chw_.dim(1) < kMinImageSide || chw_.dim(2) < kMinImageSide) {
      throw ArgumentError("image must be at least 8x8, got " + shape_string(chw_.shape()));
    }
    for (float v : chw_.values()) {
      if (!(v >= 0.0f && v <= 1.0f)) throw ArgumentError("image values must lie in [0, 1]");
    }
  }

  // Constant-colour image.
  static Image filled(int height, int width, float value) {
    return Image(Tensor<float>({3, height, width}, value));
  }

  int height() const { return chw_.dim(1); }
  int width() const { return chw_.dim(2); }
  const Tensor<float>& chw() const { return chw_; }
  float at(int c, int y, int x) const { return chw_.at(c, y, x); }

  template <typename T>
  Tensor<T> as() const {
    return chw_.cast<T>();
  }

 private:
  Tensor<float> chw_;
};

// Per-pixel {0, 1} labels; 1 marks crack pixels.
class BinaryMask {
 public:
  BinaryMask() = default;

  BinaryMask(int height, int width, std::vector<std::uint8_t> data)
      : height_(height), width_(width), data_(std::move(data)) {
    if (height_ < 1 || width_ < 1) throw ArgumentError("mask size must be positive");
    if (data_.size() != static_cast<std::size_t>(height_) * width_) {
      throw ArgumentError("mask data does not match its size");
    }
    for (auto v : data_) {
      if (v > 1) throw ArgumentError("mask values must be 0 or 1");
    }
  }

  static BinaryMask filled(int height, int width, bool value) {
    return BinaryMask(height, width,
                      std::vector<std::uint8_t>(static_cast<std::size_t>(height) * width, value ? 1 : 0));
  }

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return data_.size(); }
  std::uint8_t operator[](std::size_t i) const { return data_[i]; }
  std::uint8_t at(int y, int x) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }
  std::span<const std::uint8_t> values() const { return data_; }

  std::size_t foreground_count() const {
    std::size_t n = 0;
    for (auto v : data_) n += v;
    return n;
  }

  // (1, H, W) tensor of 0/1 values.
  template <typename T>
  Tensor<T> as() const {
    return Tensor<T>({1, height_, width_}, std::vector<T>(data_.begin(), data_.end()));
  }

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> data_;
};

enum class Branch { kRgb, kRef };
enum class Level { kBlock1, kBlock2, kBlock3, kBlock4, kBlock5, kMid, kHigh };
enum class Polarity { kForeground, kBackground };

inline const char* branch_name(Branch b) { return b == Branch::kRgb ? "rgb" : "ref"; }

// Feature tensor (C, H', W') tagged with where it came from.
template <typename T>
struct FeatureMap {
  Var<T> data;
  Level level = Level::kMid;
  Branch branch = Branch::kRgb;

  int channels() const { return data.shape()[0]; }
  int height() const { return data.shape()[1]; }
  int width() const { return data.shape()[2]; }
};

// C-dimensional class embedding.
template <typename T>
struct Prototype {
  Var<T> data;
  Polarity polarity = Polarity::kForeground;

  int dims() const { return static_cast<int>(data.value().size()); }
};

struct LabeledImage {
  Image image;
  BinaryMask mask;
};

// K annotated support pairs and one query pair.
struct Episode {
  std::vector<LabeledImage> support;
  LabeledImage query;

  int shots() const { return static_cast<int>(support.size()); }

  void validate() const {
    if (support.empty()) throw ArgumentError("episode needs at least one support pair");
    const int h = query.image.height(), w = query.image.width();
    auto check = [&](const LabeledImage& item, const char* role) {
      if (item.image.height() != h || item.image.width() != w || item.mask.height() != h ||
          item.mask.width() != w) {
        throw ArgumentError(std::string("episode ") + role + " resolution differs from query");
      }
    };
    check(query, "query");
    for (const auto& s : support) {
      check(s, "support");
      if (s.mask.foreground_count() == 0) {
        throw EmptyForeground("episode support mask has no foreground pixel");
      }
    }
  }
};

// Resizes every channel of a (C, H, W) or (H, W) tensor.
template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& map, int target_h, int target_w) {
  if (target_h < 1 || target_w < 1) {
    throw ArgumentError("bilinear_resize: target size must be positive, got " +
                        std::to_string(target_h) + "x" + std::to_string(target_w));
  }
  if (map.rank() == 2) {
    return bilinear_resize(map.reshaped({1, map.dim(0), map.dim(1)}), target_h, target_w)
        .reshaped({target_h, target_w});
  }
  require_rank(map, 3, "bilinear_resize");
  return resize_bilinear(Var<T>::constant(map), target_h, target_w).value();
}

// a.b / (|a||b|), or 0 when either norm is below 1e-12.
template <typename T>
T cosine(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) {
    throw ArgumentError("cosine: dimension mismatch " + std::to_string(a.size()) + " vs " +
                        std::to_string(b.size()));
  }
  T dot{0}, na{0}, nb{0};
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  na = std::sqrt(na);
  nb = std::sqrt(nb);
  const T floor = static_cast<T>(kCosineNormFloor);
  if (na < floor || nb < floor) return T{0};
  return dot / (na * nb);
}

template <typename T>
T cosine(const std::vector<T>& a, const std::vector<T>& b) {
  return cosine(std::span<const T>(a), std::span<const T>(b));
}

// a: (C, H, W), b: H*W values broadcast over channels.
template <typename T>
Tensor<T> hadamard(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a, 3, "hadamard");
  const bool spatial_match =
      (b.rank() == 2 && b.dim(0) == a.dim(1) && b.dim(1) == a.dim(2)) ||
      (b.rank() == 3 && b.dim(0) == 1 && b.dim(1) == a.dim(1) && b.dim(2) == a.dim(2));
  if (!spatial_match) {
    throw ArgumentError("hadamard: map " + shape_string(b.shape()) + " does not broadcast over " +
                        shape_string(a.shape()));
  }
  return mul_spatial(Var<T>::constant(a), Var<T>::constant(b)).value();
}

// Mask resized to a feature grid: the interpolated values and the cells
// whose value clears 0.5 (or stays below it, for the background).
struct GridMask {
  int height = 0;
  int width = 0;
  std::vector<double> values;

  std::vector<int> foreground() const {
    std::vector<int> idx;
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (values[i] > 0.5) idx.push_back(static_cast<int>(i));
    }
    return idx;
  }
  std::vector<int> background() const {
    std::vector<int> idx;
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (values[i] < 0.5) idx.push_back(static_cast<int>(i));
    }
    return idx;
  }
  template <typename T>
  Tensor<T> as() const {
    return Tensor<T>({1, height, width}, std::vector<T>(values.begin(), values.end()));
  }
  // Thresholded {0, 1} version at grid resolution.
  template <typename T>
  Tensor<T> binary() const {
    Tensor<T> out({1, height, width});
    for (std::size_t i = 0; i < values.size(); ++i) out[i] = values[i] > 0.5 ? T{1} : T{0};
    return out;
  }
};

inline GridMask resize_mask(const BinaryMask& mask, int height, int width) {
  Tensor<double> r = bilinear_resize(mask.as<double>(), height, width);
  return GridMask{height, width, std::vector<double>(r.values().begin(), r.values().end())};
}

}  // namespace cfss
