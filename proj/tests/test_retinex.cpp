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
#include <gtest/gtest.h>

#include <random>

#include "cfss/retinex.hpp"

namespace cfss {
namespace {

Image random_image(std::mt19937_64& rng, int h, int w, float lo, float hi) {
  std::uniform_real_distribution<float> d(lo, hi);
  Tensor<float> t({3, h, w});
  for (auto& v : t.values()) v = d(rng);
  return Image(std::move(t));
}

TEST(Retinex, FlatGrayImage) {
  const Decomposition d = decompose(Image::filled(32, 32, 0.5f), 2.0);
  for (float v : d.illumination.values()) EXPECT_NEAR(v, 0.5f, 1e-6f);
  for (float v : d.reflectance.chw().values()) EXPECT_NEAR(v, 1.0f, 1e-6f);
}

TEST(Retinex, BlackImageHitsFloor) {
  const Decomposition d = decompose(Image::filled(16, 24, 0.0f), 2.0);
  for (float v : d.illumination.values()) EXPECT_EQ(v, kIlluminationFloor);
  for (float v : d.reflectance.chw().values()) EXPECT_EQ(v, 0.0f);
}

TEST(Retinex, ShapesAndRanges) {
  std::mt19937_64 rng(1);
  const Image img = random_image(rng, 40, 56, 0.0f, 1.0f);
  const Decomposition d = decompose(img);
  EXPECT_EQ(d.reflectance.chw().shape(), img.chw().shape());
  EXPECT_EQ(d.illumination.shape(), (Shape{40, 56}));
  EXPECT_GE(d.illumination.min(), kIlluminationFloor);
  EXPECT_LE(d.illumination.max(), 1.0f);
  EXPECT_GE(d.reflectance.chw().min(), 0.0f);
  EXPECT_LE(d.reflectance.chw().max(), 1.0f);
}

TEST(Retinex, ReconstructsWhereUnclamped) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const Image img = random_image(rng, 48, 48, 0.05f, 1.0f);
    const Decomposition d = decompose(img, 2.0);
    const std::size_t hw = 48 * 48;
    int checked = 0;
    for (int c = 0; c < 3; ++c) {
      for (std::size_t i = 0; i < hw; ++i) {
        const float in = img.chw()[c * hw + i];
        if (in / d.illumination[i] >= 1.0f) continue;  // reflectance clamp active
        ++checked;
        EXPECT_LE(std::abs(d.reflectance.chw()[c * hw + i] * d.illumination[i] - in), 1e-3f);
      }
    }
    EXPECT_GT(checked, 0);
  }
}

TEST(Retinex, ReflectanceIsStableUnderBrightnessScaling) {
  std::mt19937_64 rng(3);
  const Image img = random_image(rng, 48, 48, 0.05f, 1.0f);
  const Decomposition base = decompose(img, 2.0);
  const std::size_t hw = 48 * 48;
  for (float k : {0.2f, 0.45f, 0.7f, 1.0f}) {
    Tensor<float> scaled = img.chw();
    for (auto& v : scaled.values()) v *= k;
    const Decomposition d = decompose(Image(scaled), 2.0);
    for (int c = 0; c < 3; ++c) {
      for (std::size_t i = 0; i < hw; ++i) {
        const bool clamped = img.chw()[c * hw + i] >= base.illumination[i] ||
                             d.illumination[i] <= kIlluminationFloor;
        if (clamped) continue;
        EXPECT_LE(std::abs(d.reflectance.chw()[c * hw + i] - base.reflectance.chw()[c * hw + i]), 2e-2f);
      }
    }
  }
}

TEST(Retinex, DefaultSigmaScalesWithSize) {
  EXPECT_DOUBLE_EQ(default_blur_sigma(400, 400), 2.0);
  EXPECT_DOUBLE_EQ(default_blur_sigma(128, 200), 1.0);
}

TEST(Retinex, DecomposerIsPluggable) {
  Decomposer identity = [](const Image& img) {
    return Decomposition{img, Tensor<float>({img.height(), img.width()}, 1.0f)};
  };
  const Image img = Image::filled(16, 16, 0.25f);
  EXPECT_EQ(identity(img).reflectance.chw(), img.chw());
}

}  // namespace
}  // namespace cfss
