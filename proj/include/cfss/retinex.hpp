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

// Classical Retinex split of an RGB image into illumination and reflectance.
// Illumination is the blurred per-pixel channel maximum; reflectance is the
// image divided by it. Anything that maps an Image to a Decomposition can
// stand in for it (see Decomposer).

#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <functional>

#include "cfss/core.hpp"

namespace cfss {

inline constexpr float kIlluminationFloor = 1e-3f;

struct Decomposition {
  Image reflectance;
  Tensor<float> illumination;  // (H, W), values in [1e-3, 1]
};

using Decomposer = std::function<Decomposition(const Image&)>;

// Blur scale used when none is given: 2 px at 400x400, proportional otherwise.
inline double default_blur_sigma(int height, int width) {
  return 2.0 * std::max(height, width) / 400.0;
}

inline Decomposition decompose(const Image& image, double blur_sigma) {
  const int h = image.height(), w = image.width();
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  const float* px = image.chw().data();

  cv::Mat brightest(h, w, CV_32F);
  for (int y = 0; y < h; ++y) {
    float* row = brightest.ptr<float>(y);
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      row[x] = std::max({px[i], px[hw + i], px[2 * hw + i]});
    }
  }
  cv::Mat light;
  if (blur_sigma > 0.0) {
    cv::GaussianBlur(brightest, light, cv::Size(0, 0), blur_sigma, blur_sigma, cv::BORDER_REFLECT_101);
  } else {
    light = brightest;
  }

  Tensor<float> illumination({h, w});
  for (int y = 0; y < h; ++y) {
    const float* row = light.ptr<float>(y);
    for (int x = 0; x < w; ++x) {
      illumination[static_cast<std::size_t>(y) * w + x] = std::clamp(row[x], kIlluminationFloor, 1.0f);
    }
  }
  Tensor<float> reflectance({3, h, w});
  for (int c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < hw; ++i) {
      reflectance[c * hw + i] = std::clamp(px[c * hw + i] / illumination[i], 0.0f, 1.0f);
    }
  }
  return {Image(std::move(reflectance)), std::move(illumination)};
}

inline Decomposition decompose(const Image& image) {
  return decompose(image, default_blur_sigma(image.height(), image.width()));
}

}  // namespace cfss
