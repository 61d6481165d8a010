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

// Datasets and episodes: directory loading, the procedural crack generator,
// parametric low-light degradation, flip augmentation, episode sampling.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "cfss/core.hpp"
#include "cfss/image_io.hpp"
#include "cfss/params.hpp"

namespace cfss {

enum class Split { kTrain, kTest };

struct CrackDataset {
  std::vector<std::string> stems;
  std::vector<LabeledImage> items;
  Split split = Split::kTrain;
  int height = 0;
  int width = 0;

  std::size_t size() const { return items.size(); }
};

inline CrackDataset make_dataset(std::vector<LabeledImage> items, Split split = Split::kTrain) {
  if (items.empty()) throw ArgumentError("dataset must not be empty");
  CrackDataset ds;
  ds.split = split;
  ds.height = items.front().image.height();
  ds.width = items.front().image.width();
  for (std::size_t i = 0; i < items.size(); ++i) {
    char stem[32];
    std::snprintf(stem, sizeof(stem), "%05zu", i);
    ds.stems.emplace_back(stem);
  }
  ds.items = std::move(items);
  return ds;
}

// <root>/images/<stem>.<ext> paired with <root>/masks/<stem>.png, sorted by stem.
inline CrackDataset load_dataset(const fs::path& root, int height, int width, Split split = Split::kTest) {
  const fs::path images = root / "images";
  const fs::path masks = root / "masks";
  if (!fs::is_directory(images) || !fs::is_directory(masks)) {
    throw LoadError("dataset " + root.string() + " needs images/ and masks/ subdirectories");
  }
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(images)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp") files.push_back(entry.path());
  }
  if (files.empty()) throw LoadError("dataset " + root.string() + " has no images");
  std::sort(files.begin(), files.end(),
            [](const fs::path& a, const fs::path& b) { return a.stem().string() < b.stem().string(); });

  CrackDataset ds;
  ds.split = split;
  ds.height = height;
  ds.width = width;
  for (const auto& file : files) {
    const std::string stem = file.stem().string();
    const fs::path mask_path = masks / (stem + ".png");
    if (!fs::exists(mask_path)) throw LoadError("missing mask for image '" + stem + "'");
    ds.stems.push_back(stem);
    ds.items.push_back({read_image(file, height, width), read_mask(mask_path, height, width)});
  }
  return ds;
}

inline void write_dataset(const fs::path& root, const CrackDataset& ds) {
  for (std::size_t i = 0; i < ds.size(); ++i) {
    write_image(root / "images" / (ds.stems[i] + ".png"), ds.items[i].image);
    write_mask(root / "masks" / (ds.stems[i] + ".png"), ds.items[i].mask);
  }
}

inline constexpr int kMinSynthSide = 64;

// Procedural crack image: smooth blotchy texture with 1-3 dark random-walk
// strokes 1-5 px wide. The mask is the stroke support.
inline LabeledImage synth_crack(std::uint64_t seed, int height, int width, double texture_level = 1.0) {
  if (height < kMinSynthSide || width < kMinSynthSide) {
    throw ArgumentError("synth_crack: image must be at least 64x64");
  }
  std::mt19937_64 rng(mix_seed(seed, 0x51));
  auto value_noise = [&](int cell) {
    const int gh = height / cell + 2, gw = width / cell + 2;
    Tensor<double> grid({gh, gw});
    for (auto& v : grid.values()) v = std::clamp(normal(rng), -2.5, 2.5) / 2.5;
    return bilinear_resize(grid, height, width);
  };
  const Tensor<double> coarse = value_noise(24);
  const Tensor<double> fine = value_noise(8);
  const double base = uniform(rng, 0.45, 0.75);
  const double tint[3] = {uniform(rng, 0.88, 1.12), uniform(rng, 0.88, 1.12), uniform(rng, 0.88, 1.12)};

  const std::size_t hw = static_cast<std::size_t>(height) * width;
  std::vector<double> lum(hw);
  for (std::size_t i = 0; i < hw; ++i) {
    const double texture = 0.18 * coarse[i] + 0.08 * fine[i];
    lum[i] = std::clamp(base * (1.0 + texture_level * texture) + texture_level * 0.015 * normal(rng), 0.05, 0.95);
  }

  std::vector<std::uint8_t> mask(hw, 0);
  std::vector<double> shade(hw, 1.0);
  const double step_scale = std::min(height, width) / 128.0;
  const int strokes = 1 + uniform_index(rng, 3);
  for (int s = 0; s < strokes; ++s) {
    const double half_width = (1 + uniform_index(rng, 5)) / 2.0;
    const double darkness = uniform(rng, 0.25, 0.45);
    double x = uniform(rng, 0.15 * width, 0.85 * width);
    double y = uniform(rng, 0.15 * height, 0.85 * height);
    double theta = uniform(rng, 0.0, 2.0 * 3.14159265358979323846);
    const int steps = 8 + uniform_index(rng, 7);
    for (int k = 0; k < steps; ++k) {
      theta += 0.35 * normal(rng);
      const double len = uniform(rng, 4.0, 9.0) * step_scale;
      const double nx = x + len * std::cos(theta), ny = y + len * std::sin(theta);
      // Paint pixels whose centre lies within half_width of segment (x,y)-(nx,ny).
      const int x0 = std::max(0, static_cast<int>(std::floor(std::min(x, nx) - half_width - 1)));
      const int x1 = std::min(width - 1, static_cast<int>(std::ceil(std::max(x, nx) + half_width + 1)));
      const int y0 = std::max(0, static_cast<int>(std::floor(std::min(y, ny) - half_width - 1)));
      const int y1 = std::min(height - 1, static_cast<int>(std::ceil(std::max(y, ny) + half_width + 1)));
      const double dx = nx - x, dy = ny - y, len2 = dx * dx + dy * dy;
      for (int py = y0; py <= y1; ++py) {
        for (int px = x0; px <= x1; ++px) {
          const double cx = px + 0.5, cy = py + 0.5;
          const double t = len2 > 0 ? std::clamp(((cx - x) * dx + (cy - y) * dy) / len2, 0.0, 1.0) : 0.0;
          const double ex = cx - (x + t * dx), ey = cy - (y + t * dy);
          if (ex * ex + ey * ey <= half_width * half_width) {
            const std::size_t i = static_cast<std::size_t>(py) * width + px;
            mask[i] = 1;
            shade[i] = std::min(shade[i], darkness);
          }
        }
      }
      x = nx;
      y = ny;
      if (x < 0 || x >= width || y < 0 || y >= height) break;
    }
  }

  Tensor<float> chw({3, height, width});
  for (int c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < hw; ++i) {
      chw[c * hw + i] = static_cast<float>(std::clamp(lum[i] * tint[c], 0.0, 1.0) * shade[i]);
    }
  }
  return {Image(std::move(chw)), BinaryMask(height, width, std::move(mask))};
}

struct LowLightParams {
  double gamma = 1.0;
  double scale = 1.0;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(gamma >= 1.0 && gamma <= 6.0)) throw ArgumentError("low-light gamma must lie in [1, 6]");
    if (!(scale > 0.0 && scale <= 1.0)) throw ArgumentError("low-light scale must lie in (0, 1]");
    if (!(noise_sigma >= 0.0)) throw ArgumentError("low-light noise sigma must be >= 0");
  }
};

// clamp(scale * image^gamma + N(0, sigma^2), 0, 1), noise drawn from `seed`.
inline Image lowlight_transform(const Image& image, const LowLightParams& p) {
  p.validate();
  std::mt19937_64 rng(mix_seed(p.seed, 0x11));
  Tensor<float> out = image.chw();
  for (auto& v : out.values()) {
    double x = p.scale * std::pow(static_cast<double>(v), p.gamma);
    if (p.noise_sigma > 0.0) x += p.noise_sigma * normal(rng);
    v = static_cast<float>(std::clamp(x, 0.0, 1.0));
  }
  return Image(std::move(out));
}

inline Image flip_horizontal(const Image& image) {
  Tensor<float> out(image.chw().shape());
  const int w = image.width();
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < image.height(); ++y) {
      for (int x = 0; x < w; ++x) out.at(c, y, x) = image.at(c, y, w - 1 - x);
    }
  }
  return Image(std::move(out));
}

inline BinaryMask flip_horizontal(const BinaryMask& mask) {
  std::vector<std::uint8_t> out(mask.size());
  const int w = mask.width();
  for (int y = 0; y < mask.height(); ++y) {
    for (int x = 0; x < w; ++x) out[static_cast<std::size_t>(y) * w + x] = mask.at(y, w - 1 - x);
  }
  return BinaryMask(mask.height(), w, std::move(out));
}

inline bool flip_decision(std::uint64_t seed) {
  std::mt19937_64 rng(mix_seed(seed, 0xf1));
  return uniform01(rng) < 0.5;
}

// Flips image and mask together with probability 0.5 (decided by `seed`).
inline LabeledImage augment_flip(const LabeledImage& item, std::uint64_t seed) {
  if (!flip_decision(seed)) return item;
  return {flip_horizontal(item.image), flip_horizontal(item.mask)};
}

// Indices of the K support items and the query (last), all distinct and
// with non-empty masks, drawn uniformly from `seed`.
inline std::vector<int> episode_indices(const CrackDataset& ds, int shots, std::uint64_t seed) {
  if (shots < 1) throw ArgumentError("sample_episode: shots must be >= 1");
  if (ds.size() < static_cast<std::size_t>(shots) + 1) {
    throw ArgumentError("sample_episode: dataset of " + std::to_string(ds.size()) +
                        " items is too small for " + std::to_string(shots) + " shots");
  }
  std::vector<int> pool;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.items[i].mask.foreground_count() > 0) pool.push_back(static_cast<int>(i));
  }
  if (pool.size() < static_cast<std::size_t>(shots) + 1) {
    throw ArgumentError("sample_episode: not enough items with a non-empty mask");
  }
  std::mt19937_64 rng(mix_seed(seed, 0xe9));
  const int n = static_cast<int>(pool.size());
  for (int i = 0; i <= shots; ++i) std::swap(pool[i], pool[i + uniform_index(rng, n - i)]);
  pool.resize(static_cast<std::size_t>(shots) + 1);
  return pool;
}

inline Episode sample_episode(const CrackDataset& ds, int shots, std::uint64_t seed) {
  const std::vector<int> idx = episode_indices(ds, shots, seed);
  Episode ep;
  for (int i = 0; i < shots; ++i) ep.support.push_back(ds.items[idx[i]]);
  ep.query = ds.items[idx[shots]];
  return ep;
}

// Synthetic dataset of `count` items, optionally degraded to low light.
inline CrackDataset synth_dataset(int count, int height, int width, std::uint64_t seed,
                                  const LowLightParams* lowlight = nullptr, double texture_level = 1.0) {
  if (count < 1) throw ArgumentError("synth_dataset: count must be >= 1");
  std::vector<LabeledImage> items;
  for (int i = 0; i < count; ++i) {
    LabeledImage item = synth_crack(mix_seed(seed, i), height, width, texture_level);
    if (lowlight) {
      LowLightParams p = *lowlight;
      p.seed = mix_seed(lowlight->seed + seed, i);
      item.image = lowlight_transform(item.image, p);
    }
    items.push_back(std::move(item));
  }
  return make_dataset(std::move(items));
}

}  // namespace cfss
