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

#include <algorithm>
#include <vector>

#include "cfss/errors.hpp"

namespace cfss {

// One output coordinate of a 1-D linear interpolation: value = (1-w)*in[lo] + w*in[hi].
struct LerpTap {
  int lo = 0;
  int hi = 0;
  double w = 0.0;
};

// Half-pixel centers (align-corners off), source coordinates clamped to the
// input range. Same size in and out gives exact identity taps.
inline std::vector<LerpTap> bilinear_taps(int in_size, int out_size) {
  if (in_size < 1 || out_size < 1) {
    throw ArgumentError("bilinear resize needs positive sizes");
  }
  std::vector<LerpTap> taps(static_cast<std::size_t>(out_size));
  const double scale = static_cast<double>(in_size) / out_size;
  for (int o = 0; o < out_size; ++o) {
    double src = (o + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in_size - 1));
    const int lo = static_cast<int>(src);
    const int hi = std::min(lo + 1, in_size - 1);
    taps[o] = {lo, hi, src - lo};
  }
  return taps;
}

}  // namespace cfss
