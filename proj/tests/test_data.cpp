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

#include <filesystem>
#include <random>
#include <set>

#include <opencv2/imgcodecs.hpp>

#include "cfss/data.hpp"

namespace cfss {
namespace {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = fs::temp_directory_path() / ("cfss_data_" + std::to_string(rd()));
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

TEST(Dataset, WriteThenLoadRoundTripsSorted) {
  TempDir dir;
  write_dataset(dir.path(), synth_dataset(3, 64, 64, 1));
  const CrackDataset ds = load_dataset(dir.path(), 64, 64);
  ASSERT_EQ(ds.size(), 3u);
  EXPECT_EQ(ds.stems, (std::vector<std::string>{"00000", "00001", "00002"}));
  const CrackDataset src = synth_dataset(3, 64, 64, 1);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(ds.items[i].mask, src.items[i].mask);
    for (std::size_t j = 0; j < src.items[i].image.chw().size(); ++j) {
      EXPECT_NEAR(ds.items[i].image.chw()[j], src.items[i].image.chw()[j], 0.5f / 255 + 1e-6f);
    }
  }
}

TEST(Dataset, MissingMaskNamesTheStem) {
  TempDir dir;
  write_dataset(dir.path(), synth_dataset(2, 64, 64, 2));
  fs::remove(dir.path() / "masks" / "00001.png");
  try {
    load_dataset(dir.path(), 64, 64);
    FAIL() << "expected LoadError";
  } catch (const LoadError& e) {
    EXPECT_NE(std::string(e.what()).find("00001"), std::string::npos) << e.what();
  }
}

TEST(Dataset, EmptyOrMissingDirectoriesFail) {
  TempDir dir;
  EXPECT_THROW(load_dataset(dir.path(), 64, 64), LoadError);
  fs::create_directories(dir.path() / "images");
  fs::create_directories(dir.path() / "masks");
  EXPECT_THROW(load_dataset(dir.path(), 64, 64), LoadError);
  EXPECT_THROW(make_dataset({}), ArgumentError);
}

TEST(Dataset, MaskThresholdAndResizeOnLoad) {
  TempDir dir;
  fs::create_directories(dir.path() / "images");
  fs::create_directories(dir.path() / "masks");
  cv::Mat img(800, 800, CV_8UC3, cv::Scalar(10, 120, 250));
  cv::Mat mask(800, 800, CV_8UC1, cv::Scalar(0));
  mask(cv::Rect(0, 0, 400, 800)) = 255;
  cv::imwrite((dir.path() / "images" / "a.png").string(), img);
  cv::imwrite((dir.path() / "masks" / "a.png").string(), mask);
  const CrackDataset ds = load_dataset(dir.path(), 400, 400);
  ASSERT_EQ(ds.size(), 1u);
  const LabeledImage& item = ds.items[0];
  EXPECT_EQ(item.image.height(), 400);
  EXPECT_EQ(item.image.width(), 400);
  EXPECT_EQ(item.mask.height(), 400);
  for (auto v : item.mask.values()) EXPECT_LE(v, 1);
  EXPECT_EQ(item.mask.at(10, 10), 1);
  EXPECT_EQ(item.mask.at(10, 390), 0);
  EXPECT_NEAR(item.image.at(0, 5, 5), 250 / 255.0f, 1e-6f);  // stored BGR, loaded RGB
  EXPECT_NEAR(item.image.at(2, 5, 5), 10 / 255.0f, 1e-6f);
}

TEST(Synth, DeterministicPerSeed) {
  const LabeledImage a = synth_crack(5, 96, 80), b = synth_crack(5, 96, 80), c = synth_crack(6, 96, 80);
  EXPECT_EQ(a.image.chw(), b.image.chw());
  EXPECT_EQ(a.mask, b.mask);
  EXPECT_NE(a.image.chw(), c.image.chw());
  EXPECT_THROW(synth_crack(0, 32, 128), ArgumentError);
}

TEST(Synth, ForegroundFractionAndDarkerStrokes) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const LabeledImage item = synth_crack(seed, 128, 128);
    const double frac = static_cast<double>(item.mask.foreground_count()) / item.mask.size();
    EXPECT_GT(frac, 0.0) << seed;
    EXPECT_LT(frac, 0.15) << seed;
    double fg = 0, bg = 0;
    const std::size_t hw = item.mask.size();
    for (std::size_t i = 0; i < hw; ++i) {
      double lum = 0;
      for (int c = 0; c < 3; ++c) lum += item.image.chw()[c * hw + i];
      (item.mask[i] ? fg : bg) += lum;
    }
    EXPECT_LT(fg / item.mask.foreground_count(), bg / (hw - item.mask.foreground_count())) << seed;
  }
}

TEST(LowLight, ClosedFormAndIdentity) {
  const LabeledImage item = synth_crack(1, 64, 64);
  EXPECT_EQ(lowlight_transform(item.image, {}).chw(), item.image.chw());
  const Image gray = Image::filled(8, 8, 0.8f);
  const Image dark = lowlight_transform(gray, {3.0, 0.5, 0.0, 0});
  for (float v : dark.chw().values()) EXPECT_NEAR(v, 0.256f, 1e-6f);
  EXPECT_THROW(lowlight_transform(gray, {0.5, 1.0, 0.0, 0}), ArgumentError);
  EXPECT_THROW(lowlight_transform(gray, {2.0, 0.0, 0.0, 0}), ArgumentError);
}

TEST(LowLight, DeterministicDarkeningMonotoneInGamma) {
  const LabeledImage item = synth_crack(2, 64, 64);
  const LowLightParams noisy{2.5, 0.4, 0.02, 9};
  EXPECT_EQ(lowlight_transform(item.image, noisy).chw(), lowlight_transform(item.image, noisy).chw());
  Image prev = item.image;
  for (double g = 1.0; g <= 6.0; g += 0.5) {
    const Image cur = lowlight_transform(item.image, {g, 0.6, 0.0, 0});
    for (std::size_t i = 0; i < cur.chw().size(); ++i) {
      EXPECT_LE(cur.chw()[i], item.image.chw()[i]);
      ASSERT_LE(cur.chw()[i], prev.chw()[i]);
    }
    prev = cur;
  }
}

TEST(Flip, InvolutionAndIndexOracle) {
  Tensor<float> t({3, 8, 10});
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < 8; ++y) {
      for (int x = 0; x < 10; ++x) t.at(c, y, x) = (c * 80 + y * 10 + x) / 240.0f;
    }
  }
  const Image img(t);
  const Image f = flip_horizontal(img);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < 8; ++y) {
      for (int x = 0; x < 10; ++x) EXPECT_EQ(f.at(c, y, x), img.at(c, y, 9 - x));
    }
  }
  EXPECT_EQ(flip_horizontal(f).chw(), img.chw());
  std::vector<std::uint8_t> bits(80, 0);
  bits[3 * 10 + 1] = 1;
  const BinaryMask m(8, 10, bits);
  EXPECT_EQ(flip_horizontal(m).at(3, 8), 1);
  EXPECT_EQ(flip_horizontal(flip_horizontal(m)), m);
}

TEST(Flip, ImageAndMaskFlipTogether) {
  const LabeledImage item = synth_crack(3, 64, 64);
  int flipped = 0;
  for (std::uint64_t s = 0; s < 200; ++s) {
    const LabeledImage out = augment_flip(item, s);
    const bool did = flip_decision(s);
    flipped += did;
    EXPECT_EQ(out.mask, did ? flip_horizontal(item.mask) : item.mask);
    EXPECT_EQ(out.image.chw(), did ? flip_horizontal(item.image).chw() : item.image.chw());
  }
  EXPECT_GT(flipped, 60);
  EXPECT_LT(flipped, 140);
}

TEST(Episodes, DeterministicAndWellFormed) {
  const CrackDataset two = synth_dataset(2, 64, 64, 4);
  EXPECT_EQ(episode_indices(two, 1, 17), episode_indices(two, 1, 17));
  const Episode e = sample_episode(two, 1, 17);
  EXPECT_EQ(e.shots(), 1);
  EXPECT_NO_THROW(e.validate());

  const CrackDataset ds = synth_dataset(10, 64, 64, 5);
  const Episode five = sample_episode(ds, 5, 3);
  EXPECT_EQ(five.shots(), 5);
  EXPECT_NO_THROW(five.validate());
  EXPECT_THROW(sample_episode(two, 2, 0), ArgumentError);
  EXPECT_THROW(sample_episode(two, 0, 0), ArgumentError);
}

TEST(Episodes, SupportAndQueryAreDisjoint) {
  const CrackDataset ds = synth_dataset(8, 64, 64, 6);
  std::set<int> queries;
  for (std::uint64_t s = 0; s < 1000; ++s) {
    const auto idx = episode_indices(ds, 5, s);
    ASSERT_EQ(idx.size(), 6u);
    EXPECT_EQ(std::set<int>(idx.begin(), idx.end()).size(), 6u);
    queries.insert(idx.back());
  }
  EXPECT_EQ(queries.size(), 8u);
}

TEST(Episodes, EmptyMaskItemsAreNeverDrawn) {
  CrackDataset ds = synth_dataset(4, 64, 64, 7);
  ds.items[2].mask = BinaryMask::filled(64, 64, false);
  for (std::uint64_t s = 0; s < 200; ++s) {
    for (int i : episode_indices(ds, 1, s)) EXPECT_NE(i, 2);
  }
  ds.items[1].mask = ds.items[2].mask;
  ds.items[0].mask = ds.items[2].mask;
  EXPECT_THROW(episode_indices(ds, 1, 0), ArgumentError);
}

}  // namespace
}  // namespace cfss
