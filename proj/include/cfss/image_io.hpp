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

// PNG reading/writing through OpenCV. Writes go to a temporary file that is
// renamed into place, so readers never see a partial image.

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cfss/core.hpp"

namespace cfss {

namespace fs = std::filesystem;

// Writes `bytes` to `path` via a sibling temp file and rename.
inline void write_file_atomic(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("failed writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline void write_png(const fs::path& path, const cv::Mat& mat) {
  std::vector<uchar> buf;
  if (!cv::imencode(".png", mat, buf)) throw Error("PNG encoding failed for " + path.string());
  write_file_atomic(path, std::string(buf.begin(), buf.end()));
}

inline cv::Mat to_mat(const Image& image) {
  const int h = image.height(), w = image.width();
  cv::Mat out(h, w, CV_8UC3);
  for (int y = 0; y < h; ++y) {
    auto* row = out.ptr<cv::Vec3b>(y);
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        // OpenCV stores BGR.
        row[x][2 - c] = cv::saturate_cast<uchar>(image.at(c, y, x) * 255.0f);
      }
    }
  }
  return out;
}

inline cv::Mat to_mat(const BinaryMask& mask) {
  cv::Mat out(mask.height(), mask.width(), CV_8UC1);
  for (int y = 0; y < mask.height(); ++y) {
    for (int x = 0; x < mask.width(); ++x) out.at<uchar>(y, x) = mask.at(y, x) ? 255 : 0;
  }
  return out;
}

// Single-channel map with values in [0, 1]; shape (H, W) or (1, H, W).
template <typename T>
cv::Mat gray_to_mat(const Tensor<T>& map) {
  const int h = map.dim(map.rank() - 2), w = map.dim(map.rank() - 1);
  cv::Mat out(h, w, CV_8UC1);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double v = static_cast<double>(map[static_cast<std::size_t>(y) * w + x]);
      out.at<uchar>(y, x) = cv::saturate_cast<uchar>(std::clamp(v, 0.0, 1.0) * 255.0);
    }
  }
  return out;
}

inline void write_image(const fs::path& path, const Image& image) { write_png(path, to_mat(image)); }
inline void write_mask(const fs::path& path, const BinaryMask& mask) { write_png(path, to_mat(mask)); }

// Reads an RGB image; resizes bilinearly when a target size is given.
inline Image read_image(const fs::path& path, int height = 0, int width = 0) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw LoadError("cannot read image " + path.string());
  if (height > 0 && width > 0 && (bgr.rows != height || bgr.cols != width)) {
    cv::resize(bgr, bgr, cv::Size(width, height), 0, 0, cv::INTER_LINEAR);
  }
  Tensor<float> chw({3, bgr.rows, bgr.cols});
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x) {
      for (int c = 0; c < 3; ++c) chw.at(c, y, x) = row[x][2 - c] / 255.0f;
    }
  }
  return Image(std::move(chw));
}

// Reads a single-channel mask; resized bilinearly, then values above 127 are foreground.
inline BinaryMask read_mask(const fs::path& path, int height = 0, int width = 0) {
  cv::Mat gray = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (gray.empty()) throw LoadError("cannot read mask " + path.string());
  if (height > 0 && width > 0 && (gray.rows != height || gray.cols != width)) {
    cv::resize(gray, gray, cv::Size(width, height), 0, 0, cv::INTER_LINEAR);
  }
  std::vector<std::uint8_t> data(static_cast<std::size_t>(gray.rows) * gray.cols);
  for (int y = 0; y < gray.rows; ++y) {
    for (int x = 0; x < gray.cols; ++x) {
      data[static_cast<std::size_t>(y) * gray.cols + x] = gray.at<uchar>(y, x) > 127 ? 1 : 0;
    }
  }
  return BinaryMask(gray.rows, gray.cols, std::move(data));
}

// Query image with the predicted crack pixels tinted red.
inline cv::Mat overlay(const Image& image, const BinaryMask& mask) {
  cv::Mat out = to_mat(image);
  for (int y = 0; y < out.rows; ++y) {
    auto* row = out.ptr<cv::Vec3b>(y);
    for (int x = 0; x < out.cols; ++x) {
      if (mask.at(y, x)) row[x] = cv::Vec3b(row[x][0] / 3, row[x][1] / 3, 255);
    }
  }
  return out;
}

}  // namespace cfss
