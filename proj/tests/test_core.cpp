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

#include "cfss/core.hpp"
#include "oracle.hpp"

namespace cfss {
namespace {

Tensor<double> from_grid(const oracle::Grid& g) {
  return Tensor<double>({g.c, g.h, g.w}, g.v);
}

TEST(Tensor, RejectsZeroDims) { EXPECT_THROW(Tensor<float>({2, 0, 3}), ArgumentError); }

TEST(Tensor, RowMajorChwIndexing) {
  Tensor<int> t({2, 2, 3});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<int>(i);
  EXPECT_EQ(t.at(1, 0, 2), 8);
  EXPECT_EQ(t.at(0, 1, 1), 4);
}

TEST(Image, ValidatesRangeAndSize) {
  EXPECT_THROW(Image::filled(7, 16, 0.5f), ArgumentError);
  EXPECT_THROW(Image::filled(16, 16, 1.5f), ArgumentError);
  EXPECT_NO_THROW(Image::filled(8, 8, 0.0f));
}

TEST(BinaryMask, RejectsNonBinaryValues) {
  EXPECT_THROW(BinaryMask(2, 2, {0, 1, 2, 0}), ArgumentError);
  EXPECT_EQ(BinaryMask(2, 2, {0, 1, 1, 0}).foreground_count(), 2u);
}

TEST(Episode, RejectsEmptySupportMaskAndMixedSizes) {
  LabeledImage a{Image::filled(16, 16, 0.5f), BinaryMask::filled(16, 16, true)};
  LabeledImage empty{Image::filled(16, 16, 0.5f), BinaryMask::filled(16, 16, false)};
  LabeledImage small{Image::filled(8, 8, 0.5f), BinaryMask::filled(8, 8, true)};
  EXPECT_NO_THROW((Episode{{a}, empty}.validate()));
  EXPECT_THROW((Episode{{empty}, a}.validate()), EmptyForeground);
  EXPECT_THROW((Episode{{a}, small}.validate()), ArgumentError);
  EXPECT_THROW((Episode{{}, a}.validate()), ArgumentError);
}

// --- bilinear_resize

TEST(BilinearResize, SameSizeIsIdentity) {
  std::mt19937_64 rng(1);
  const auto g = oracle::random_grid(rng, 1, 7, 7);
  const Tensor<double> in = from_grid(g);
  EXPECT_EQ(bilinear_resize(in, 7, 7), in);
}

TEST(BilinearResize, ConstantStaysConstant) {
  const Tensor<double> out = bilinear_resize(Tensor<double>({4, 4}, 0.3), 9, 9);
  ASSERT_EQ(out.shape(), (Shape{9, 9}));
  for (double v : out.values()) EXPECT_NEAR(v, 0.3, 1e-15);
}

TEST(BilinearResize, TwoByTwoCheckerboardFrozenValues) {
  const Tensor<double> out = bilinear_resize(Tensor<double>({2, 2}, {0, 1, 1, 0}), 4, 4);
  const std::vector<double> expected{0,   0.25, 0.75, 1,    0.25, 0.375, 0.625, 0.75,
                                     0.75, 0.625, 0.375, 0.25, 1,    0.75,  0.25,  0};
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_NEAR(out[i], expected[i], 1e-15) << i;
}

TEST(BilinearResize, MatchesOracleOnRandomShapes) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const int c = 1 + trial % 3, h = 2 + trial % 7, w = 3 + (trial * 5) % 6;
    const int oh = 1 + (trial * 7) % 13, ow = 1 + (trial * 3) % 11;
    const auto g = oracle::random_grid(rng, c, h, w);
    const auto ref = oracle::resize(g, oh, ow);
    const Tensor<double> out = bilinear_resize(from_grid(g), oh, ow);
    for (std::size_t i = 0; i < ref.v.size(); ++i) ASSERT_NEAR(out[i], ref.v[i], 1e-12);
  }
}

TEST(BilinearResize, IsLinear) {
  std::mt19937_64 rng(3);
  const auto x = from_grid(oracle::random_grid(rng, 2, 5, 6));
  const auto y = from_grid(oracle::random_grid(rng, 2, 5, 6));
  const double a = 0.7, b = -1.3;
  Tensor<double> combo = x;
  for (std::size_t i = 0; i < combo.size(); ++i) combo[i] = a * x[i] + b * y[i];
  const auto lhs = bilinear_resize(combo, 11, 4);
  const auto rx = bilinear_resize(x, 11, 4), ry = bilinear_resize(y, 11, 4);
  for (std::size_t i = 0; i < lhs.size(); ++i) EXPECT_NEAR(lhs[i], a * rx[i] + b * ry[i], 1e-9);
}

TEST(BilinearResize, RejectsNonPositiveTarget) {
  EXPECT_THROW(bilinear_resize(Tensor<double>({3, 3}), 0, 3), ArgumentError);
  EXPECT_THROW(bilinear_resize(Tensor<double>({3, 3}), 3, -1), ArgumentError);
}

// --- cosine

TEST(Cosine, Examples) {
  EXPECT_DOUBLE_EQ(cosine<double>({3, 4}, {3, 4}), 1.0);
  EXPECT_DOUBLE_EQ(cosine<double>({1, 0}, {0, 1}), 0.0);
  EXPECT_DOUBLE_EQ(cosine<double>({0, 0}, {1, 2}), 0.0);
  EXPECT_THROW(cosine<double>({1, 2}, {1, 2, 3}), ArgumentError);
}

TEST(Cosine, SelfSimilarityAndBound) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> d(0, 3);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> a(1 + trial % 9), b(a.size());
    for (auto& v : a) v = d(rng);
    for (auto& v : b) v = d(rng);
    EXPECT_NEAR(cosine(a, a), 1.0, 1e-9);
    EXPECT_LE(std::abs(cosine(a, b)), 1.0 + 1e-9);
    EXPECT_NEAR(cosine(a, b), oracle::cosine(a, b), 1e-12);
  }
}

// --- hadamard

TEST(Hadamard, Examples) {
  const Tensor<double> a({1, 2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(hadamard(a, Tensor<double>({2, 2}, {0, 1, 1, 0})), Tensor<double>({1, 2, 2}, {0, 2, 3, 0}));
  EXPECT_EQ(hadamard(a, Tensor<double>({2, 2}, 1.0)), a);
  EXPECT_EQ(hadamard(a, Tensor<double>({1, 2, 2}, 0.0)), Tensor<double>({1, 2, 2}, 0.0));
  EXPECT_THROW(hadamard(a, Tensor<double>({3, 2}, 1.0)), ArgumentError);
}

TEST(Hadamard, BroadcastsOverChannelsAndCommutesWithScaling) {
  std::mt19937_64 rng(5);
  const auto a = from_grid(oracle::random_grid(rng, 3, 4, 5));
  const auto b = from_grid(oracle::random_grid(rng, 1, 4, 5));
  const double k = 2.5;
  Tensor<double> ka = a, kb = b;
  for (auto& v : ka.values()) v *= k;
  for (auto& v : kb.values()) v *= k;
  const auto base = hadamard(a, b), left = hadamard(ka, b), right = hadamard(a, kb);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < 4; ++y) {
      for (int x = 0; x < 5; ++x) EXPECT_DOUBLE_EQ(base.at(c, y, x), a.at(c, y, x) * b.at(0, y, x));
    }
  }
  for (std::size_t i = 0; i < base.size(); ++i) {
    EXPECT_NEAR(left[i], k * base[i], 1e-12);
    EXPECT_NEAR(right[i], k * base[i], 1e-12);
  }
}

// --- grid masks

TEST(ResizeMask, ThresholdsMatchOracle) {
  std::vector<std::uint8_t> bits(16 * 16, 0);
  for (int y = 4; y < 12; ++y) {
    for (int x = 2; x < 10; ++x) bits[y * 16 + x] = 1;
  }
  const GridMask g = resize_mask(BinaryMask(16, 16, bits), 4, 4);
  EXPECT_EQ(g.foreground(), oracle::grid_cells(bits, 16, 16, 4, 4, true));
  EXPECT_EQ(g.background(), oracle::grid_cells(bits, 16, 16, 4, 4, false));
}

}  // namespace
}  // namespace cfss
