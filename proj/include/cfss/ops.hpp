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

// Differentiable tensor operations used by the network. Feature maps are
// rank-3 (C, H, W); single-channel spatial maps are (1, H, W); prototypes and
// other vectors are rank-1.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "cfss/autograd.hpp"
#include "cfss/resample.hpp"
#include "cfss/tensor.hpp"

namespace cfss {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

// Norms below this are treated as zero vectors; cosine against them is 0.
inline constexpr double kCosineNormFloor = 1e-12;

struct ConvGeometry {
  int stride = 1;
  int pad = 0;
  int dilation = 1;
};

inline int conv_output_size(int in, int kernel, const ConvGeometry& g) {
  const int span = in + 2 * g.pad - g.dilation * (kernel - 1) - 1;
  if (span < 0) return 0;
  return span / g.stride + 1;
}

namespace detail {

inline void check_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (a != b) {
    throw ArgumentError(std::string(what) + ": shape mismatch " + shape_string(a) +
                        " vs " + shape_string(b));
  }
}

struct ConvDims {
  int channels, height, width, kh, kw, out_h, out_w;
  ConvGeometry g;
};

template <typename T>
void im2col(const T* x, const ConvDims& d, T* cols) {
  const std::size_t n = static_cast<std::size_t>(d.out_h) * d.out_w;
  for (int c = 0; c < d.channels; ++c) {
    for (int ky = 0; ky < d.kh; ++ky) {
      for (int kx = 0; kx < d.kw; ++kx) {
        T* row = cols + ((static_cast<std::size_t>(c) * d.kh + ky) * d.kw + kx) * n;
        for (int oy = 0; oy < d.out_h; ++oy) {
          const int iy = oy * d.g.stride - d.g.pad + ky * d.g.dilation;
          T* dst = row + static_cast<std::size_t>(oy) * d.out_w;
          if (iy < 0 || iy >= d.height) {
            std::fill(dst, dst + d.out_w, T{0});
            continue;
          }
          const T* src = x + (static_cast<std::size_t>(c) * d.height + iy) * d.width;
          for (int ox = 0; ox < d.out_w; ++ox) {
            const int ix = ox * d.g.stride - d.g.pad + kx * d.g.dilation;
            dst[ox] = (ix >= 0 && ix < d.width) ? src[ix] : T{0};
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, const ConvDims& d, T* dx) {
  const std::size_t n = static_cast<std::size_t>(d.out_h) * d.out_w;
  for (int c = 0; c < d.channels; ++c) {
    for (int ky = 0; ky < d.kh; ++ky) {
      for (int kx = 0; kx < d.kw; ++kx) {
        const T* row = cols + ((static_cast<std::size_t>(c) * d.kh + ky) * d.kw + kx) * n;
        for (int oy = 0; oy < d.out_h; ++oy) {
          const int iy = oy * d.g.stride - d.g.pad + ky * d.g.dilation;
          if (iy < 0 || iy >= d.height) continue;
          const T* src = row + static_cast<std::size_t>(oy) * d.out_w;
          T* dst = dx + (static_cast<std::size_t>(c) * d.height + iy) * d.width;
          for (int ox = 0; ox < d.out_w; ++ox) {
            const int ix = ox * d.g.stride - d.g.pad + kx * d.g.dilation;
            if (ix >= 0 && ix < d.width) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

// 2-D cross-correlation. x: (Ci, H, W), weight: (Co, Ci, kh, kw), bias: (Co)
// or undefined.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias,
              ConvGeometry g = {}) {
  require_rank(x.value(), 3, "conv2d input");
  require_rank(weight.value(), 4, "conv2d weight");
  const Shape& ws = weight.shape();
  detail::ConvDims d{x.shape()[0], x.shape()[1], x.shape()[2], ws[2], ws[3], 0, 0, g};
  if (ws[1] != d.channels) {
    throw ArgumentError("conv2d: weight expects " + std::to_string(ws[1]) +
                        " input channels, input has " + std::to_string(d.channels));
  }
  if (g.stride < 1 || g.dilation < 1 || g.pad < 0) {
    throw ArgumentError("conv2d: invalid stride/dilation/padding");
  }
  const int out_c = ws[0];
  if (bias.defined()) require_shape(bias.value(), {out_c}, "conv2d bias");
  d.out_h = conv_output_size(d.height, d.kh, g);
  d.out_w = conv_output_size(d.width, d.kw, g);
  if (d.out_h < 1 || d.out_w < 1) {
    throw ArgumentError("conv2d: input " + shape_string(x.shape()) +
                        " too small for kernel/geometry");
  }
  const int k = d.channels * d.kh * d.kw;
  const int n = d.out_h * d.out_w;
  const bool direct = d.kh == 1 && d.kw == 1 && g.stride == 1 && g.pad == 0;

  auto cols = std::make_shared<std::vector<T>>();
  if (!direct) {
    cols->resize(static_cast<std::size_t>(k) * n);
    detail::im2col(x.value().data(), d, cols->data());
  }
  const T* col_ptr = direct ? x.value().data() : cols->data();

  Tensor<T> out({out_c, d.out_h, d.out_w});
  MatrixMap<T> out_m(out.data(), out_c, n);
  out_m.noalias() = ConstMatrixMap<T>(weight.value().data(), out_c, k) *
                    ConstMatrixMap<T>(col_ptr, k, n);
  if (bias.defined()) {
    for (int o = 0; o < out_c; ++o) out_m.row(o).array() += bias.value()[o];
  }

  return make_var<T>(
      std::move(out), {x, weight, bias},
      [x, weight, bias, cols, d, direct, out_c, k, n](const Tensor<T>& grad) {
        ConstMatrixMap<T> gm(grad.data(), out_c, n);
        const T* col_ptr = direct ? x.value().data() : cols->data();
        if (auto* gw = grad_slot(weight)) {
          MatrixMap<T>(gw->data(), out_c, k).noalias() +=
              gm * ConstMatrixMap<T>(col_ptr, k, n).transpose();
        }
        if (bias.defined()) {
          if (auto* gb = grad_slot(bias)) {
            for (int o = 0; o < out_c; ++o) (*gb)[o] += gm.row(o).sum();
          }
        }
        if (auto* gx = grad_slot(x)) {
          ConstMatrixMap<T> wm(weight.value().data(), out_c, k);
          if (direct) {
            MatrixMap<T>(gx->data(), k, n).noalias() += wm.transpose() * gm;
          } else {
            std::vector<T> dcols(static_cast<std::size_t>(k) * n);
            MatrixMap<T>(dcols.data(), k, n).noalias() = wm.transpose() * gm;
            detail::col2im_add(dcols.data(), d, gx->data());
          }
        }
      });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  Tensor<T> out = x.value();
  // NaN passes through so a bad upstream value stays visible.
  for (auto& v : out.values()) v = v < T{0} ? T{0} : v;
  return make_var<T>(std::move(out), {x}, [x](const Tensor<T>& grad) {
    auto* gx = grad_slot(x);
    const auto& xv = x.value();
    for (std::size_t i = 0; i < grad.size(); ++i) {
      if (xv[i] > T{0}) (*gx)[i] += grad[i];
    }
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  Tensor<T> out = x.value();
  for (auto& v : out.values()) v = T{1} / (T{1} + std::exp(-v));
  Tensor<T> saved = out;
  return make_var<T>(std::move(out), {x}, [x, saved](const Tensor<T>& grad) {
    auto* gx = grad_slot(x);
    for (std::size_t i = 0; i < grad.size(); ++i) {
      (*gx)[i] += grad[i] * saved[i] * (T{1} - saved[i]);
    }
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::check_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return make_var<T>(std::move(out), {a, b}, [a, b](const Tensor<T>& grad) {
    for (const Var<T>* v : {&a, &b}) {
      if (auto* g = grad_slot(*v)) {
        for (std::size_t i = 0; i < grad.size(); ++i) (*g)[i] += grad[i];
      }
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::check_same_shape(a.shape(), b.shape(), "sub");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return make_var<T>(std::move(out), {a, b}, [a, b](const Tensor<T>& grad) {
    if (auto* g = grad_slot(a)) {
      for (std::size_t i = 0; i < grad.size(); ++i) (*g)[i] += grad[i];
    }
    if (auto* g = grad_slot(b)) {
      for (std::size_t i = 0; i < grad.size(); ++i) (*g)[i] -= grad[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::check_same_shape(a.shape(), b.shape(), "mul");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return make_var<T>(std::move(out), {a, b}, [a, b](const Tensor<T>& grad) {
    if (auto* g = grad_slot(a)) {
      for (std::size_t i = 0; i < grad.size(); ++i) (*g)[i] += grad[i] * b.value()[i];
    }
    if (auto* g = grad_slot(b)) {
      for (std::size_t i = 0; i < grad.size(); ++i) (*g)[i] += grad[i] * a.value()[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& x, T factor) {
  Tensor<T> out = x.value();
  for (auto& v : out.values()) v *= factor;
  return make_var<T>(std::move(out), {x}, [x, factor](const Tensor<T>& grad) {
    auto* g = grad_slot(x);
    for (std::size_t i = 0; i < grad.size(); ++i) (*g)[i] += grad[i] * factor;
  });
}

template <typename T>
Var<T> add_scalar(const Var<T>& x, T offset) {
  Tensor<T> out = x.value();
  for (auto& v : out.values()) v += offset;
  return make_var<T>(std::move(out), {x}, [x](const Tensor<T>& grad) {
    auto* g = grad_slot(x);
    for (std::size_t i = 0; i < grad.size(); ++i) (*g)[i] += grad[i];
  });
}

// Arithmetic mean of equally shaped values.
template <typename T>
Var<T> mean_of(const std::vector<Var<T>>& xs) {
  if (xs.empty()) throw ArgumentError("mean_of: empty input");
  if (xs.size() == 1) return xs.front();
  Var<T> acc = xs.front();
  for (std::size_t i = 1; i < xs.size(); ++i) acc = add(acc, xs[i]);
  return scale(acc, T{1} / static_cast<T>(xs.size()));
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  Tensor<T> out = x.value().reshaped(std::move(shape));
  return make_var<T>(std::move(out), {x}, [x](const Tensor<T>& grad) {
    auto* g = grad_slot(x);
    for (std::size_t i = 0; i < grad.size(); ++i) (*g)[i] += grad[i];
  });
}

// x: (C, H, W) scaled per channel by s (C values, any shape).
template <typename T>
Var<T> mul_channel(const Var<T>& x, const Var<T>& s) {
  require_rank(x.value(), 3, "mul_channel input");
  const int c = x.shape()[0];
  const std::size_t hw = x.value().size() / c;
  if (s.value().size() != static_cast<std::size_t>(c)) {
    throw ArgumentError("mul_channel: scale has " + std::to_string(s.value().size()) +
                        " values for " + std::to_string(c) + " channels");
  }
  Tensor<T> out = x.value();
  for (int ch = 0; ch < c; ++ch) {
    T* p = out.data() + ch * hw;
    for (std::size_t i = 0; i < hw; ++i) p[i] *= s.value()[ch];
  }
  return make_var<T>(std::move(out), {x, s}, [x, s, c, hw](const Tensor<T>& grad) {
    auto* gx = grad_slot(x);
    auto* gs = grad_slot(s);
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t base = ch * hw;
      T acc{0};
      for (std::size_t i = 0; i < hw; ++i) {
        if (gx) (*gx)[base + i] += grad[base + i] * s.value()[ch];
        acc += grad[base + i] * x.value()[base + i];
      }
      if (gs) (*gs)[ch] += acc;
    }
  });
}

// x: (C, H, W) multiplied by a spatial map m with H*W values, broadcast over C.
template <typename T>
Var<T> mul_spatial(const Var<T>& x, const Var<T>& m) {
  require_rank(x.value(), 3, "mul_spatial input");
  const int c = x.shape()[0];
  const std::size_t hw = x.value().size() / c;
  if (m.value().size() != hw) {
    throw ArgumentError("mul_spatial: map " + shape_string(m.shape()) +
                        " does not match features " + shape_string(x.shape()));
  }
  Tensor<T> out = x.value();
  for (int ch = 0; ch < c; ++ch) {
    T* p = out.data() + ch * hw;
    for (std::size_t i = 0; i < hw; ++i) p[i] *= m.value()[i];
  }
  return make_var<T>(std::move(out), {x, m}, [x, m, c, hw](const Tensor<T>& grad) {
    auto* gx = grad_slot(x);
    auto* gm = grad_slot(m);
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t base = ch * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        if (gx) (*gx)[base + i] += grad[base + i] * m.value()[i];
        if (gm) (*gm)[i] += grad[base + i] * x.value()[base + i];
      }
    }
  });
}

// Concatenation along the leading dimension.
template <typename T>
Var<T> concat(const std::vector<Var<T>>& xs) {
  if (xs.empty()) throw ArgumentError("concat: empty input");
  Shape trailing(xs[0].shape().begin() + 1, xs[0].shape().end());
  int lead = 0;
  for (const auto& x : xs) {
    Shape t(x.shape().begin() + 1, x.shape().end());
    if (t != trailing) {
      throw ArgumentError("concat: incompatible shapes " + shape_string(xs[0].shape()) +
                          " and " + shape_string(x.shape()));
    }
    lead += x.shape()[0];
  }
  Shape shape = xs[0].shape();
  shape[0] = lead;
  Tensor<T> out(shape);
  std::size_t offset = 0;
  for (const auto& x : xs) {
    std::copy(x.value().values().begin(), x.value().values().end(), out.data() + offset);
    offset += x.value().size();
  }
  return make_var<T>(std::move(out), xs, [xs](const Tensor<T>& grad) {
    std::size_t offset = 0;
    for (const auto& x : xs) {
      if (auto* g = grad_slot(x)) {
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += grad[offset + i];
      }
      offset += x.value().size();
    }
  });
}

// Bilinear resampling of every channel of (C, H, W) to (C, out_h, out_w).
template <typename T>
Var<T> resize_bilinear(const Var<T>& x, int out_h, int out_w) {
  require_rank(x.value(), 3, "resize_bilinear input");
  if (out_h < 1 || out_w < 1) {
    throw ArgumentError("resize_bilinear: target size must be positive");
  }
  const int c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  if (h == out_h && w == out_w) return x;
  auto ty = std::make_shared<std::vector<LerpTap>>(bilinear_taps(h, out_h));
  auto tx = std::make_shared<std::vector<LerpTap>>(bilinear_taps(w, out_w));
  Tensor<T> out({c, out_h, out_w});
  const auto& xv = x.value();
  for (int ch = 0; ch < c; ++ch) {
    for (int oy = 0; oy < out_h; ++oy) {
      const LerpTap& a = (*ty)[oy];
      const T wy = static_cast<T>(a.w);
      for (int ox = 0; ox < out_w; ++ox) {
        const LerpTap& b = (*tx)[ox];
        const T wx = static_cast<T>(b.w);
        out.at(ch, oy, ox) = (T{1} - wy) * ((T{1} - wx) * xv.at(ch, a.lo, b.lo) + wx * xv.at(ch, a.lo, b.hi)) +
                             wy * ((T{1} - wx) * xv.at(ch, a.hi, b.lo) + wx * xv.at(ch, a.hi, b.hi));
      }
    }
  }
  return make_var<T>(std::move(out), {x}, [x, ty, tx, c, out_h, out_w](const Tensor<T>& grad) {
    auto* g = grad_slot(x);
    for (int ch = 0; ch < c; ++ch) {
      for (int oy = 0; oy < out_h; ++oy) {
        const LerpTap& a = (*ty)[oy];
        const T wy = static_cast<T>(a.w);
        for (int ox = 0; ox < out_w; ++ox) {
          const LerpTap& b = (*tx)[ox];
          const T wx = static_cast<T>(b.w);
          const T go = grad.at(ch, oy, ox);
          g->at(ch, a.lo, b.lo) += go * (T{1} - wy) * (T{1} - wx);
          g->at(ch, a.lo, b.hi) += go * (T{1} - wy) * wx;
          g->at(ch, a.hi, b.lo) += go * wy * (T{1} - wx);
          g->at(ch, a.hi, b.hi) += go * wy * wx;
        }
      }
    }
  });
}

// (C, H, W) -> (C, 1, 1)
template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  require_rank(x.value(), 3, "global_avg_pool input");
  const int c = x.shape()[0];
  const std::size_t hw = x.value().size() / c;
  Tensor<T> out({c, 1, 1});
  for (int ch = 0; ch < c; ++ch) {
    T acc{0};
    for (std::size_t i = 0; i < hw; ++i) acc += x.value()[ch * hw + i];
    out[ch] = acc / static_cast<T>(hw);
  }
  return make_var<T>(std::move(out), {x}, [x, c, hw](const Tensor<T>& grad) {
    auto* g = grad_slot(x);
    for (int ch = 0; ch < c; ++ch) {
      const T share = grad[ch] / static_cast<T>(hw);
      for (std::size_t i = 0; i < hw; ++i) (*g)[ch * hw + i] += share;
    }
  });
}

// (C, H, W) -> (C, 1, 1); the gradient goes to the first maximal position. NaN counts as maximal.
template <typename T>
Var<T> global_max_pool(const Var<T>& x) {
  require_rank(x.value(), 3, "global_max_pool input");
  const int c = x.shape()[0];
  const std::size_t hw = x.value().size() / c;
  Tensor<T> out({c, 1, 1});
  std::vector<std::size_t> arg(c);
  for (int ch = 0; ch < c; ++ch) {
    const T* p = x.value().data() + ch * hw;
    std::size_t best = 0;
    for (std::size_t i = 1; i < hw && !std::isnan(p[best]); ++i) {
      if (p[i] > p[best] || std::isnan(p[i])) best = i;
    }
    arg[ch] = best;
    out[ch] = p[best];
  }
  return make_var<T>(std::move(out), {x}, [x, arg, hw](const Tensor<T>& grad) {
    auto* g = grad_slot(x);
    for (std::size_t ch = 0; ch < arg.size(); ++ch) (*g)[ch * hw + arg[ch]] += grad[ch];
  });
}

// (C, H, W) -> (1, H, W), mean over channels.
template <typename T>
Var<T> channel_mean(const Var<T>& x) {
  require_rank(x.value(), 3, "channel_mean input");
  const int c = x.shape()[0];
  const std::size_t hw = x.value().size() / c;
  Tensor<T> out({1, x.shape()[1], x.shape()[2]});
  for (int ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < hw; ++i) out[i] += x.value()[ch * hw + i];
  }
  for (auto& v : out.values()) v /= static_cast<T>(c);
  return make_var<T>(std::move(out), {x}, [x, c, hw](const Tensor<T>& grad) {
    auto* g = grad_slot(x);
    for (int ch = 0; ch < c; ++ch) {
      for (std::size_t i = 0; i < hw; ++i) (*g)[ch * hw + i] += grad[i] / static_cast<T>(c);
    }
  });
}

// (C, H, W) -> (1, H, W), max over channels.
template <typename T>
Var<T> channel_max(const Var<T>& x) {
  require_rank(x.value(), 3, "channel_max input");
  const int c = x.shape()[0];
  const std::size_t hw = x.value().size() / c;
  Tensor<T> out({1, x.shape()[1], x.shape()[2]});
  std::vector<int> arg(hw, 0);
  for (std::size_t i = 0; i < hw; ++i) out[i] = x.value()[i];
  for (int ch = 1; ch < c; ++ch) {
    for (std::size_t i = 0; i < hw; ++i) {
      const T v = x.value()[ch * hw + i];
      if ((v > out[i] || std::isnan(v)) && !std::isnan(out[i])) {
        out[i] = v;
        arg[i] = ch;
      }
    }
  }
  return make_var<T>(std::move(out), {x}, [x, arg, hw](const Tensor<T>& grad) {
    auto* g = grad_slot(x);
    for (std::size_t i = 0; i < hw; ++i) (*g)[arg[i] * hw + i] += grad[i];
  });
}

// (C, 1, 1) or (C) -> (C, H, W) by repetition.
template <typename T>
Var<T> broadcast_spatial(const Var<T>& x, int h, int w) {
  const int c = static_cast<int>(x.value().size());
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  Tensor<T> out({c, h, w});
  for (int ch = 0; ch < c; ++ch) {
    std::fill(out.data() + ch * hw, out.data() + (ch + 1) * hw, x.value()[ch]);
  }
  return make_var<T>(std::move(out), {x}, [x, c, hw](const Tensor<T>& grad) {
    auto* g = grad_slot(x);
    for (int ch = 0; ch < c; ++ch) {
      T acc{0};
      for (std::size_t i = 0; i < hw; ++i) acc += grad[ch * hw + i];
      (*g)[ch] += acc;
    }
  });
}

// (C, H, W) -> (1, H, W)
template <typename T>
Var<T> select_channel(const Var<T>& x, int channel) {
  require_rank(x.value(), 3, "select_channel input");
  if (channel < 0 || channel >= x.shape()[0]) {
    throw ArgumentError("select_channel: channel out of range");
  }
  const std::size_t hw = x.value().size() / x.shape()[0];
  std::vector<T> data(x.value().data() + channel * hw, x.value().data() + (channel + 1) * hw);
  Tensor<T> out({1, x.shape()[1], x.shape()[2]}, std::move(data));
  return make_var<T>(std::move(out), {x}, [x, channel, hw](const Tensor<T>& grad) {
    auto* g = grad_slot(x);
    for (std::size_t i = 0; i < hw; ++i) (*g)[channel * hw + i] += grad[i];
  });
}

// Softmax across channels at every pixel of (C, H, W).
template <typename T>
Var<T> softmax_channels(const Var<T>& x) {
  require_rank(x.value(), 3, "softmax_channels input");
  const int c = x.shape()[0];
  const std::size_t hw = x.value().size() / c;
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < hw; ++i) {
    T top = x.value()[i];
    for (int ch = 1; ch < c; ++ch) top = std::max(top, x.value()[ch * hw + i]);
    T total{0};
    for (int ch = 0; ch < c; ++ch) {
      const T e = std::exp(x.value()[ch * hw + i] - top);
      out[ch * hw + i] = e;
      total += e;
    }
    for (int ch = 0; ch < c; ++ch) out[ch * hw + i] /= total;
  }
  Tensor<T> saved = out;
  return make_var<T>(std::move(out), {x}, [x, saved, c, hw](const Tensor<T>& grad) {
    auto* g = grad_slot(x);
    for (std::size_t i = 0; i < hw; ++i) {
      T dot{0};
      for (int ch = 0; ch < c; ++ch) dot += grad[ch * hw + i] * saved[ch * hw + i];
      for (int ch = 0; ch < c; ++ch) {
        (*g)[ch * hw + i] += saved[ch * hw + i] * (grad[ch * hw + i] - dot);
      }
    }
  });
}

// Mean of the feature vectors of (C, H, W) at the given flat spatial indices.
template <typename T>
Var<T> masked_mean(const Var<T>& x, const std::vector<int>& indices) {
  require_rank(x.value(), 3, "masked_mean input");
  if (indices.empty()) throw ArgumentError("masked_mean: empty selection");
  const int c = x.shape()[0];
  const int hw = x.shape()[1] * x.shape()[2];
  for (int j : indices) {
    if (j < 0 || j >= hw) throw ArgumentError("masked_mean: index out of range");
  }
  Tensor<T> out({c});
  const T inv = T{1} / static_cast<T>(indices.size());
  for (int ch = 0; ch < c; ++ch) {
    const T* p = x.value().data() + static_cast<std::size_t>(ch) * hw;
    T acc{0};
    for (int j : indices) acc += p[j];
    out[ch] = acc * inv;
  }
  return make_var<T>(std::move(out), {x}, [x, indices, c, hw, inv](const Tensor<T>& grad) {
    auto* g = grad_slot(x);
    for (int ch = 0; ch < c; ++ch) {
      T* p = g->data() + static_cast<std::size_t>(ch) * hw;
      for (int j : indices) p[j] += grad[ch] * inv;
    }
  });
}

namespace detail {

// Column norms of a (C, N) block, stored per column.
template <typename T>
std::vector<T> column_norms(const T* x, int c, int n) {
  std::vector<T> norms(n, T{0});
  for (int ch = 0; ch < c; ++ch) {
    const T* row = x + static_cast<std::size_t>(ch) * n;
    for (int i = 0; i < n; ++i) norms[i] += row[i] * row[i];
  }
  for (auto& v : norms) v = std::sqrt(v);
  return norms;
}

}  // namespace detail

// cosine(prototype, feature vector) at every pixel: (C) x (C, H, W) -> (1, H, W).
template <typename T>
Var<T> cosine_map(const Var<T>& proto, const Var<T>& x) {
  require_rank(x.value(), 3, "cosine_map features");
  const int c = x.shape()[0];
  const int n = x.shape()[1] * x.shape()[2];
  if (proto.value().size() != static_cast<std::size_t>(c)) {
    throw ArgumentError("cosine_map: prototype has " + std::to_string(proto.value().size()) +
                        " dims, features have " + std::to_string(c) + " channels");
  }
  const T floor = static_cast<T>(kCosineNormFloor);
  const auto& p = proto.value();
  T pn{0};
  for (std::size_t i = 0; i < p.size(); ++i) pn += p[i] * p[i];
  pn = std::sqrt(pn);
  auto xn = std::make_shared<std::vector<T>>(detail::column_norms(x.value().data(), c, n));
  Tensor<T> out({1, x.shape()[1], x.shape()[2]});
  if (!(pn < floor)) {
    for (int ch = 0; ch < c; ++ch) {
      const T* row = x.value().data() + static_cast<std::size_t>(ch) * n;
      for (int i = 0; i < n; ++i) out[i] += p[ch] * row[i];
    }
    for (int i = 0; i < n; ++i) out[i] = (*xn)[i] < floor ? T{0} : out[i] / (pn * (*xn)[i]);
  }
  Tensor<T> cos = out;
  return make_var<T>(std::move(out), {proto, x}, [proto, x, xn, pn, cos, c, n, floor](const Tensor<T>& grad) {
    if (pn < floor) return;
    const auto& p = proto.value();
    auto* gp = grad_slot(proto);
    auto* gx = grad_slot(x);
    for (int i = 0; i < n; ++i) {
      const T nb = (*xn)[i];
      if (nb < floor || grad[i] == T{0}) continue;
      const T gi = grad[i];
      const T ci = cos[i];
      for (int ch = 0; ch < c; ++ch) {
        const T b = x.value()[static_cast<std::size_t>(ch) * n + i];
        if (gp) (*gp)[ch] += gi * (b / (pn * nb) - ci * p[ch] / (pn * pn));
        if (gx) (*gx)[static_cast<std::size_t>(ch) * n + i] += gi * (p[ch] / (pn * nb) - ci * b / (nb * nb));
      }
    }
  });
}

// v_i = mean over j in `support_indices` of cosine(query_i, support_j).
// query, support: (C, H, W); result (1, H, W) on the query grid.
template <typename T>
Var<T> cross_similarity(const Var<T>& query, const Var<T>& support,
                        const std::vector<int>& support_indices) {
  require_rank(query.value(), 3, "cross_similarity query");
  detail::check_same_shape(query.shape(), support.shape(), "cross_similarity");
  if (support_indices.empty()) throw ArgumentError("cross_similarity: empty support selection");
  const int c = query.shape()[0];
  const int n = query.shape()[1] * query.shape()[2];
  for (int j : support_indices) {
    if (j < 0 || j >= n) throw ArgumentError("cross_similarity: index out of range");
  }
  const T floor = static_cast<T>(kCosineNormFloor);
  auto qn = std::make_shared<std::vector<T>>(detail::column_norms(query.value().data(), c, n));
  auto sn = std::make_shared<std::vector<T>>(detail::column_norms(support.value().data(), c, n));
  const T inv_m = T{1} / static_cast<T>(support_indices.size());

  // Mean of the unit support vectors; zero vectors contribute nothing.
  auto mean_dir = std::make_shared<std::vector<T>>(c, T{0});
  for (int ch = 0; ch < c; ++ch) {
    const T* row = support.value().data() + static_cast<std::size_t>(ch) * n;
    T acc{0};
    for (int j : support_indices) {
      if (!((*sn)[j] < floor)) acc += row[j] / (*sn)[j];
    }
    (*mean_dir)[ch] = acc * inv_m;
  }
  Tensor<T> out({1, query.shape()[1], query.shape()[2]});
  for (int ch = 0; ch < c; ++ch) {
    const T* row = query.value().data() + static_cast<std::size_t>(ch) * n;
    for (int i = 0; i < n; ++i) out[i] += row[i] * (*mean_dir)[ch];
  }
  for (int i = 0; i < n; ++i) out[i] = (*qn)[i] < floor ? T{0} : out[i] / (*qn)[i];

  return make_var<T>(
      std::move(out), {query, support},
      [query, support, support_indices, qn, sn, mean_dir, c, n, inv_m, floor](const Tensor<T>& grad) {
        const auto& q = query.value();
        const auto& s = support.value();
        if (auto* gq = grad_slot(query)) {
          for (int i = 0; i < n; ++i) {
            const T norm = (*qn)[i];
            if (norm < floor || grad[i] == T{0}) continue;
            // d/dq of (q/|q|).m = (m - u (u.m)) / |q| with u = q/|q|.
            T um{0};
            for (int ch = 0; ch < c; ++ch) um += q[static_cast<std::size_t>(ch) * n + i] * (*mean_dir)[ch];
            um /= norm;
            for (int ch = 0; ch < c; ++ch) {
              const T u = q[static_cast<std::size_t>(ch) * n + i] / norm;
              (*gq)[static_cast<std::size_t>(ch) * n + i] += grad[i] * ((*mean_dir)[ch] - u * um) / norm;
            }
          }
        }
        if (auto* gs = grad_slot(support)) {
          // Gradient w.r.t. the mean direction, then through each normalisation.
          std::vector<T> dmean(c, T{0});
          for (int ch = 0; ch < c; ++ch) {
            const T* row = q.data() + static_cast<std::size_t>(ch) * n;
            T acc{0};
            for (int i = 0; i < n; ++i) {
              if ((*qn)[i] >= floor) acc += grad[i] * row[i] / (*qn)[i];
            }
            dmean[ch] = acc * inv_m;
          }
          for (int j : support_indices) {
            const T norm = (*sn)[j];
            if (norm < floor) continue;
            T ud{0};
            for (int ch = 0; ch < c; ++ch) ud += s[static_cast<std::size_t>(ch) * n + j] * dmean[ch];
            ud /= norm;
            for (int ch = 0; ch < c; ++ch) {
              const T u = s[static_cast<std::size_t>(ch) * n + j] / norm;
              (*gs)[static_cast<std::size_t>(ch) * n + j] += (dmean[ch] - u * ud) / norm;
            }
          }
        }
      });
}

// (v - min v) / (max v - min v + mu), elementwise over any shape.
template <typename T>
Var<T> minmax_normalize(const Var<T>& v, T mu) {
  const auto& vals = v.value();
  const auto [lo_it, hi_it] = std::minmax_element(vals.values().begin(), vals.values().end());
  const std::size_t arg_lo = static_cast<std::size_t>(lo_it - vals.values().begin());
  const std::size_t arg_hi = static_cast<std::size_t>(hi_it - vals.values().begin());
  const T lo = *lo_it;
  const T denom = *hi_it - lo + mu;
  Tensor<T> out = vals;
  for (auto& x : out.values()) x = (x - lo) / denom;
  return make_var<T>(std::move(out), {v}, [v, arg_lo, arg_hi, lo, denom](const Tensor<T>& grad) {
    auto* g = grad_slot(v);
    const auto& vals = v.value();
    T d_lo{0}, d_hi{0};
    for (std::size_t i = 0; i < grad.size(); ++i) {
      const T centered = vals[i] - lo;
      (*g)[i] += grad[i] / denom;
      d_lo += grad[i] * (centered / (denom * denom) - T{1} / denom);
      d_hi -= grad[i] * centered / (denom * denom);
    }
    (*g)[arg_lo] += d_lo;
    (*g)[arg_hi] += d_hi;
  });
}

inline constexpr double kBceClamp = 1e-7;

// Mean binary cross-entropy of probabilities against a fixed {0,1} target.
template <typename T>
Var<T> bce(const Var<T>& pred, const Tensor<T>& target) {
  if (pred.value().size() != target.size()) {
    throw ArgumentError("bce: prediction " + shape_string(pred.shape()) +
                        " and target " + shape_string(target.shape()) + " differ in size");
  }
  const T eps = static_cast<T>(kBceClamp);
  const std::size_t n = target.size();
  // Accumulate in double so the float path stays close to the 64-bit reference.
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = std::clamp(static_cast<double>(pred.value()[i]), kBceClamp, 1.0 - kBceClamp);
    const double t = static_cast<double>(target[i]);
    total -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
  }
  Tensor<T> out({1}, static_cast<T>(total / static_cast<double>(n)));
  return make_var<T>(std::move(out), {pred}, [pred, target, eps, n](const Tensor<T>& grad) {
    auto* g = grad_slot(pred);
    const T scale = grad[0] / static_cast<T>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const T p = pred.value()[i];
      if (p <= eps || p >= T{1} - eps) continue;
      const T t = target[i];
      (*g)[i] += scale * (-t / p + (T{1} - t) / (T{1} - p));
    }
  });
}

}  // namespace cfss
