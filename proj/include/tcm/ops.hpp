// Copyright 2026 The TCM Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Differentiable primitives. Activations are laid out C,T,H,W.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "tcm/tape.hpp"

namespace tcm {

namespace detail {

inline void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " +
                         to_string(b));
  }
}

template <Real T>
void add_into(Tensor<T>& dst, const Tensor<T>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

template <Real T>
T sigmoid_scalar(T x) {
  // Split on sign so exp never overflows.
  if (x >= 0) return T{1} / (T{1} + std::exp(-x));
  const T e = std::exp(x);
  return e / (T{1} + e);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Pointwise (1x1) convolution. Axis 0 is the channel axis; all remaining axes
// are treated as independent positions.

template <Real T>
Tensor<T> conv_pointwise(const Tensor<T>& x, const Tensor<T>& weights, const Tensor<T>* bias) {
  require_rank(weights, 2, "conv_pointwise weights");
  if (x.rank() < 1 || weights.dim(1) != x.dim(0)) {
    throw DimensionError("conv_pointwise: weights " + to_string(weights.shape()) +
                         " incompatible with input " + to_string(x.shape()));
  }
  const std::size_t cin = x.dim(0), cout = weights.dim(0), n = x.size() / cin;
  if (bias && (bias->rank() != 1 || bias->dim(0) != cout)) {
    throw DimensionError("conv_pointwise: bias " + to_string(bias->shape()) +
                         " incompatible with weights " + to_string(weights.shape()));
  }
  Shape shape = x.shape();
  shape[0] = cout;
  Tensor<T> out(shape);
  for (std::size_t o = 0; o < cout; ++o) {
    T* row = out.data() + o * n;
    if (bias) std::fill(row, row + n, (*bias)[o]);
    for (std::size_t c = 0; c < cin; ++c) {
      const T w = weights.at(o, c);
      const T* src = x.data() + c * n;
      for (std::size_t i = 0; i < n; ++i) row[i] += w * src[i];
    }
  }
  return out;
}

template <Real T>
Var<T> conv_pointwise(Var<T> x, Var<T> weights, Var<T> bias) {
  Tape<T>& tape = x.tape();
  Tensor<T> out = conv_pointwise(x.value(), weights.value(), &bias.value());
  return tape.record(std::move(out), {x, weights, bias},
                     [x, weights, bias](Tape<T>& tp, const Tensor<T>& g) {
                       const Tensor<T>& xv = tp.value(x);
                       const Tensor<T>& wv = tp.value(weights);
                       const std::size_t cin = xv.dim(0), cout = wv.dim(0), n = xv.size() / cin;
                       if (Tensor<T>* gx = tp.grad_sink(x)) {
                         for (std::size_t o = 0; o < cout; ++o) {
                           const T* grow = g.data() + o * n;
                           for (std::size_t c = 0; c < cin; ++c) {
                             const T w = wv.at(o, c);
                             T* dst = gx->data() + c * n;
                             for (std::size_t i = 0; i < n; ++i) dst[i] += w * grow[i];
                           }
                         }
                       }
                       if (Tensor<T>* gw = tp.grad_sink(weights)) {
                         for (std::size_t o = 0; o < cout; ++o) {
                           const T* grow = g.data() + o * n;
                           for (std::size_t c = 0; c < cin; ++c) {
                             const T* src = xv.data() + c * n;
                             T acc = 0;
                             for (std::size_t i = 0; i < n; ++i) acc += grow[i] * src[i];
                             gw->at(o, c) += acc;
                           }
                         }
                       }
                       if (Tensor<T>* gb = tp.grad_sink(bias)) {
                         for (std::size_t o = 0; o < cout; ++o) {
                           const T* grow = g.data() + o * n;
                           T acc = 0;
                           for (std::size_t i = 0; i < n; ++i) acc += grow[i];
                           (*gb)[o] += acc;
                         }
                       }
                     });
}

// ---------------------------------------------------------------------------
// Depthwise 1 x kh x kw convolution, zero padded so H and W are preserved.

namespace detail {

struct DepthwiseGeometry {
  std::size_t channels, frames, height, width, kh, kw;
};

template <Real T>
DepthwiseGeometry depthwise_geometry(const Tensor<T>& x, const Tensor<T>& kernels) {
  require_rank(x, 4, "conv_depthwise_2d input");
  require_rank(kernels, 3, "conv_depthwise_2d kernels");
  if (kernels.dim(0) != x.dim(0)) {
    throw DimensionError("conv_depthwise_2d: kernels " + to_string(kernels.shape()) +
                         " incompatible with input " + to_string(x.shape()));
  }
  if (kernels.dim(1) % 2 == 0 || kernels.dim(2) % 2 == 0) {
    throw ConfigError("conv_depthwise_2d: kernel extents must be odd, got " +
                      to_string(kernels.shape()));
  }
  return {x.dim(0), x.dim(1), x.dim(2), x.dim(3), kernels.dim(1), kernels.dim(2)};
}

// Visits every (input offset, output offset, kernel tap) triple of one frame
// whose input position lies inside the frame.
template <typename F>
void for_each_tap(std::size_t height, std::size_t width, std::size_t kh, std::size_t kw, F&& f) {
  const long ph = static_cast<long>(kh / 2), pw = static_cast<long>(kw / 2);
  const long h = static_cast<long>(height), w = static_cast<long>(width);
  for (long i = 0; i < static_cast<long>(kh); ++i) {
    const long dy = i - ph;
    const long y0 = std::max(0L, -dy), y1 = std::min(h, h - dy);
    for (long j = 0; j < static_cast<long>(kw); ++j) {
      const long dx = j - pw;
      const long x0 = std::max(0L, -dx), x1 = std::min(w, w - dx);
      if (x0 >= x1) continue;
      for (long y = y0; y < y1; ++y) {
        f(static_cast<std::size_t>(i * static_cast<long>(kw) + j),
          static_cast<std::size_t>(y * w + x0), static_cast<std::size_t>((y + dy) * w + x0 + dx),
          static_cast<std::size_t>(x1 - x0));
      }
    }
  }
}

}  // namespace detail

template <Real T>
Tensor<T> conv_depthwise_2d(const Tensor<T>& x, const Tensor<T>& kernels) {
  const auto g = detail::depthwise_geometry(x, kernels);
  Tensor<T> out(x.shape());
  const std::size_t plane = g.height * g.width, ksize = g.kh * g.kw;
  for (std::size_t c = 0; c < g.channels; ++c) {
    const T* k = kernels.data() + c * ksize;
    for (std::size_t t = 0; t < g.frames; ++t) {
      const std::size_t base = (c * g.frames + t) * plane;
      const T* src = x.data() + base;
      T* dst = out.data() + base;
      detail::for_each_tap(g.height, g.width, g.kh, g.kw,
                           [&](std::size_t tap, std::size_t o, std::size_t in, std::size_t len) {
                             const T w = k[tap];
                             for (std::size_t i = 0; i < len; ++i) dst[o + i] += w * src[in + i];
                           });
    }
  }
  return out;
}

template <Real T>
Var<T> conv_depthwise_2d(Var<T> x, Var<T> kernels) {
  Tensor<T> out = conv_depthwise_2d(x.value(), kernels.value());
  return x.tape().record(
      std::move(out), {x, kernels}, [x, kernels](Tape<T>& tp, const Tensor<T>& grad) {
        const Tensor<T>& xv = tp.value(x);
        const Tensor<T>& kv = tp.value(kernels);
        const auto g = detail::depthwise_geometry(xv, kv);
        const std::size_t plane = g.height * g.width, ksize = g.kh * g.kw;
        Tensor<T>* gx = tp.grad_sink(x);
        Tensor<T>* gk = tp.grad_sink(kernels);
        for (std::size_t c = 0; c < g.channels; ++c) {
          for (std::size_t t = 0; t < g.frames; ++t) {
            const std::size_t base = (c * g.frames + t) * plane;
            const T* gout = grad.data() + base;
            const T* src = xv.data() + base;
            detail::for_each_tap(
                g.height, g.width, g.kh, g.kw,
                [&](std::size_t tap, std::size_t o, std::size_t in, std::size_t len) {
                  if (gx) {
                    const T w = kv[c * ksize + tap];
                    T* dst = gx->data() + base;
                    for (std::size_t i = 0; i < len; ++i) dst[in + i] += w * gout[o + i];
                  }
                  if (gk) {
                    T acc = 0;
                    for (std::size_t i = 0; i < len; ++i) acc += gout[o + i] * src[in + i];
                    (*gk)[c * ksize + tap] += acc;
                  }
                });
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Depthwise temporal convolution kt x 1 x 1 with zero padding in time.

template <Real T>
Tensor<T> conv_temporal_depthwise(const Tensor<T>& x, const Tensor<T>& kernels) {
  require_rank(x, 4, "conv_temporal_depthwise input");
  require_rank(kernels, 2, "conv_temporal_depthwise kernels");
  if (kernels.dim(0) != x.dim(0)) {
    throw DimensionError("conv_temporal_depthwise: kernels " + to_string(kernels.shape()) +
                         " incompatible with input " + to_string(x.shape()));
  }
  if (kernels.dim(1) % 2 == 0) throw ConfigError("conv_temporal_depthwise: kernel must be odd");
  const std::size_t C = x.dim(0), T_ = x.dim(1), plane = x.dim(2) * x.dim(3), k = kernels.dim(1);
  const long half = static_cast<long>(k / 2);
  Tensor<T> out(x.shape());
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t t = 0; t < T_; ++t) {
      T* dst = out.data() + (c * T_ + t) * plane;
      for (std::size_t j = 0; j < k; ++j) {
        const long s = static_cast<long>(t) + static_cast<long>(j) - half;
        if (s < 0 || s >= static_cast<long>(T_)) continue;
        const T w = kernels.at(c, j);
        const T* src = x.data() + (c * T_ + static_cast<std::size_t>(s)) * plane;
        for (std::size_t i = 0; i < plane; ++i) dst[i] += w * src[i];
      }
    }
  }
  return out;
}

template <Real T>
Var<T> conv_temporal_depthwise(Var<T> x, Var<T> kernels) {
  Tensor<T> out = conv_temporal_depthwise(x.value(), kernels.value());
  return x.tape().record(
      std::move(out), {x, kernels}, [x, kernels](Tape<T>& tp, const Tensor<T>& grad) {
        const Tensor<T>& xv = tp.value(x);
        const Tensor<T>& kv = tp.value(kernels);
        const std::size_t C = xv.dim(0), T_ = xv.dim(1), plane = xv.dim(2) * xv.dim(3);
        const std::size_t k = kv.dim(1);
        const long half = static_cast<long>(k / 2);
        Tensor<T>* gx = tp.grad_sink(x);
        Tensor<T>* gk = tp.grad_sink(kernels);
        for (std::size_t c = 0; c < C; ++c) {
          for (std::size_t t = 0; t < T_; ++t) {
            const T* gout = grad.data() + (c * T_ + t) * plane;
            for (std::size_t j = 0; j < k; ++j) {
              const long s = static_cast<long>(t) + static_cast<long>(j) - half;
              if (s < 0 || s >= static_cast<long>(T_)) continue;
              const std::size_t off = (c * T_ + static_cast<std::size_t>(s)) * plane;
              if (gx) {
                const T w = kv.at(c, j);
                for (std::size_t i = 0; i < plane; ++i) (*gx)[off + i] += w * gout[i];
              }
              if (gk) {
                T acc = 0;
                for (std::size_t i = 0; i < plane; ++i) acc += gout[i] * xv[off + i];
                gk->at(c, j) += acc;
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Elementwise.

template <Real T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = detail::sigmoid_scalar(x[i]);
  return out;
}

template <Real T>
Var<T> sigmoid(Var<T> x) {
  return x.tape().record(sigmoid(x.value()), {x}, [x](Tape<T>& tp, const Tensor<T>& g) {
    const Tensor<T> y = sigmoid(tp.value(x));
    Tensor<T>* gx = tp.grad_sink(x);
    for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * y[i] * (T{1} - y[i]);
  });
}

template <Real T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T{0} ? x[i] : T{0};
  return out;
}

template <Real T>
Var<T> relu(Var<T> x) {
  return x.tape().record(relu(x.value()), {x}, [x](Tape<T>& tp, const Tensor<T>& g) {
    const Tensor<T>& xv = tp.value(x);
    Tensor<T>* gx = tp.grad_sink(x);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xv[i] > T{0}) (*gx)[i] += g[i];
    }
  });
}

template <Real T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

template <Real T>
Var<T> add(Var<T> a, Var<T> b) {
  return a.tape().record(add(a.value(), b.value()), {a, b},
                         [a, b](Tape<T>& tp, const Tensor<T>& g) {
                           if (Tensor<T>* ga = tp.grad_sink(a)) detail::add_into(*ga, g);
                           if (Tensor<T>* gb = tp.grad_sink(b)) detail::add_into(*gb, g);
                         });
}

template <Real T>
Var<T> scale(Var<T> x, T alpha) {
  Tensor<T> out(x.shape());
  const Tensor<T>& xv = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = alpha * xv[i];
  return x.tape().record(std::move(out), {x}, [x, alpha](Tape<T>& tp, const Tensor<T>& g) {
    Tensor<T>* gx = tp.grad_sink(x);
    for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += alpha * g[i];
  });
}

// ---------------------------------------------------------------------------
// Temporal broadcast: out[c,t,h,w] = x[c,t,h,w] * w[t].

template <Real T>
Tensor<T> mul_broadcast_time(const Tensor<T>& x, const Tensor<T>& w) {
  require_rank(x, 4, "mul_broadcast_time input");
  if (w.rank() != 1 || w.dim(0) != x.dim(1)) {
    throw DimensionError("mul_broadcast_time: weights " + to_string(w.shape()) +
                         " do not match temporal extent of " + to_string(x.shape()));
  }
  const std::size_t C = x.dim(0), T_ = x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor<T> out(x.shape());
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t t = 0; t < T_; ++t) {
      const std::size_t off = (c * T_ + t) * plane;
      for (std::size_t i = 0; i < plane; ++i) out[off + i] = x[off + i] * w[t];
    }
  }
  return out;
}

template <Real T>
Var<T> mul_broadcast_time(Var<T> x, Var<T> w) {
  return x.tape().record(
      mul_broadcast_time(x.value(), w.value()), {x, w}, [x, w](Tape<T>& tp, const Tensor<T>& g) {
        const Tensor<T>& xv = tp.value(x);
        const Tensor<T>& wv = tp.value(w);
        const std::size_t C = xv.dim(0), T_ = xv.dim(1), plane = xv.dim(2) * xv.dim(3);
        Tensor<T>* gx = tp.grad_sink(x);
        Tensor<T>* gw = tp.grad_sink(w);
        for (std::size_t c = 0; c < C; ++c) {
          for (std::size_t t = 0; t < T_; ++t) {
            const std::size_t off = (c * T_ + t) * plane;
            T acc = 0;
            for (std::size_t i = 0; i < plane; ++i) {
              if (gx) (*gx)[off + i] += g[off + i] * wv[t];
              acc += g[off + i] * xv[off + i];
            }
            if (gw) (*gw)[t] += acc;
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Pooling.

/// Mean over H and W: [C,T,H,W] -> [C,T].
template <Real T>
Tensor<T> gap_spatial(const Tensor<T>& x) {
  require_rank(x, 4, "gap_spatial input");
  const std::size_t rows = x.dim(0) * x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor<T> out({x.dim(0), x.dim(1)});
  for (std::size_t r = 0; r < rows; ++r) {
    T acc = 0;
    for (std::size_t i = 0; i < plane; ++i) acc += x[r * plane + i];
    out[r] = acc / static_cast<T>(plane);
  }
  return out;
}

template <Real T>
Var<T> gap_spatial(Var<T> x) {
  return x.tape().record(gap_spatial(x.value()), {x}, [x](Tape<T>& tp, const Tensor<T>& g) {
    const Tensor<T>& xv = tp.value(x);
    const std::size_t plane = xv.dim(2) * xv.dim(3);
    const T inv = T{1} / static_cast<T>(plane);
    Tensor<T>* gx = tp.grad_sink(x);
    for (std::size_t r = 0; r < g.size(); ++r) {
      const T v = g[r] * inv;
      for (std::size_t i = 0; i < plane; ++i) (*gx)[r * plane + i] += v;
    }
  });
}

/// Mean over C, H and W: [C,T,H,W] -> [T]. One aggregate per frame.
template <Real T>
Tensor<T> gap_per_frame(const Tensor<T>& x) {
  require_rank(x, 4, "gap_per_frame input");
  const std::size_t C = x.dim(0), T_ = x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor<T> out({T_});
  for (std::size_t t = 0; t < T_; ++t) {
    T acc = 0;
    for (std::size_t c = 0; c < C; ++c) {
      const T* src = x.data() + (c * T_ + t) * plane;
      for (std::size_t i = 0; i < plane; ++i) acc += src[i];
    }
    out[t] = acc / static_cast<T>(C * plane);
  }
  return out;
}

template <Real T>
Var<T> gap_per_frame(Var<T> x) {
  return x.tape().record(gap_per_frame(x.value()), {x}, [x](Tape<T>& tp, const Tensor<T>& g) {
    const Tensor<T>& xv = tp.value(x);
    const std::size_t C = xv.dim(0), T_ = xv.dim(1), plane = xv.dim(2) * xv.dim(3);
    const T inv = T{1} / static_cast<T>(C * plane);
    Tensor<T>* gx = tp.grad_sink(x);
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t t = 0; t < T_; ++t) {
        T* dst = gx->data() + (c * T_ + t) * plane;
        const T v = g[t] * inv;
        for (std::size_t i = 0; i < plane; ++i) dst[i] += v;
      }
    }
  });
}

/// Mean over the time axis of a [C,T] tensor, -> [C]. Each row is summed in
/// ascending value order, so the result is bit-identical under any
/// permutation of the frames.
template <Real T>
Tensor<T> mean_time_unordered(const Tensor<T>& x) {
  require_rank(x, 2, "mean_time_unordered input");
  const std::size_t C = x.dim(0), T_ = x.dim(1);
  Tensor<T> out({C});
  std::vector<T> row(T_);
  for (std::size_t c = 0; c < C; ++c) {
    std::copy_n(x.data() + c * T_, T_, row.begin());
    std::sort(row.begin(), row.end());
    T acc = 0;
    for (T v : row) acc += v;
    out[c] = acc / static_cast<T>(T_);
  }
  return out;
}

template <Real T>
Var<T> mean_time_unordered(Var<T> x) {
  return x.tape().record(mean_time_unordered(x.value()), {x},
                         [x](Tape<T>& tp, const Tensor<T>& g) {
                           const Tensor<T>& xv = tp.value(x);
                           const std::size_t C = xv.dim(0), T_ = xv.dim(1);
                           const T inv = T{1} / static_cast<T>(T_);
                           Tensor<T>* gx = tp.grad_sink(x);
                           for (std::size_t c = 0; c < C; ++c) {
                             for (std::size_t t = 0; t < T_; ++t) gx->at(c, t) += g[c] * inv;
                           }
                         });
}

/// 2x2 average pooling with stride 2 on each frame: [C,T,H,W] -> [C,T,H/2,W/2].
template <Real T>
Tensor<T> avg_pool2(const Tensor<T>& x) {
  require_rank(x, 4, "avg_pool2 input");
  if (x.dim(2) % 2 || x.dim(3) % 2) {
    throw DimensionError("avg_pool2: spatial extents must be even, got " + to_string(x.shape()));
  }
  const std::size_t planes = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor<T> out({x.dim(0), x.dim(1), H / 2, W / 2});
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = x.data() + p * H * W;
    T* dst = out.data() + p * (H / 2) * (W / 2);
    for (std::size_t y = 0; y < H / 2; ++y) {
      for (std::size_t xx = 0; xx < W / 2; ++xx) {
        const T* s = src + 2 * y * W + 2 * xx;
        dst[y * (W / 2) + xx] = (s[0] + s[1] + s[W] + s[W + 1]) * T{0.25};
      }
    }
  }
  return out;
}

template <Real T>
Var<T> avg_pool2(Var<T> x) {
  return x.tape().record(avg_pool2(x.value()), {x}, [x](Tape<T>& tp, const Tensor<T>& g) {
    const Tensor<T>& xv = tp.value(x);
    const std::size_t planes = xv.dim(0) * xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    Tensor<T>* gx = tp.grad_sink(x);
    for (std::size_t p = 0; p < planes; ++p) {
      T* dst = gx->data() + p * H * W;
      const T* src = g.data() + p * (H / 2) * (W / 2);
      for (std::size_t y = 0; y < H / 2; ++y) {
        for (std::size_t xx = 0; xx < W / 2; ++xx) {
          const T v = src[y * (W / 2) + xx] * T{0.25};
          T* d = dst + 2 * y * W + 2 * xx;
          d[0] += v;
          d[1] += v;
          d[W] += v;
          d[W + 1] += v;
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Softmax over the last axis.

template <Real T>
Tensor<T> softmax_last(const Tensor<T>& x) {
  const std::size_t n = x.shape().back(), rows = x.size() / n;
  Tensor<T> out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* src = x.data() + r * n;
    T* dst = out.data() + r * n;
    const T m = *std::max_element(src, src + n);
    T sum = 0;
    for (std::size_t i = 0; i < n; ++i) sum += dst[i] = std::exp(src[i] - m);
    for (std::size_t i = 0; i < n; ++i) dst[i] /= sum;
  }
  return out;
}

template <Real T>
Var<T> softmax_last(Var<T> x) {
  return x.tape().record(softmax_last(x.value()), {x}, [x](Tape<T>& tp, const Tensor<T>& g) {
    const Tensor<T> y = softmax_last(tp.value(x));
    const std::size_t n = y.shape().back(), rows = y.size() / n;
    Tensor<T>* gx = tp.grad_sink(x);
    for (std::size_t r = 0; r < rows; ++r) {
      T dot = 0;
      for (std::size_t i = 0; i < n; ++i) dot += g[r * n + i] * y[r * n + i];
      for (std::size_t i = 0; i < n; ++i) (*gx)[r * n + i] += y[r * n + i] * (g[r * n + i] - dot);
    }
  });
}

// ---------------------------------------------------------------------------
// Temporal 1D operators on a length-T aggregate.

/// Same-length 1D convolution with one shared kernel of odd length k and zero
/// padding (k-1)/2: out[i] = sum_j w[j] * v[i + j - (k-1)/2].
template <Real T>
Tensor<T> conv1d_same(const Tensor<T>& v, const Tensor<T>& w) {
  require_rank(v, 1, "conv1d_same input");
  require_rank(w, 1, "conv1d_same weights");
  if (w.dim(0) % 2 == 0) {
    throw ConfigError("conv1d_same: kernel size must be odd, got " + std::to_string(w.dim(0)));
  }
  const long n = static_cast<long>(v.dim(0)), k = static_cast<long>(w.dim(0)), half = k / 2;
  Tensor<T> out({v.dim(0)});
  for (long i = 0; i < n; ++i) {
    T acc = 0;
    for (long j = 0; j < k; ++j) {
      const long s = i + j - half;
      if (s >= 0 && s < n) acc += w[static_cast<std::size_t>(j)] * v[static_cast<std::size_t>(s)];
    }
    out[static_cast<std::size_t>(i)] = acc;
  }
  return out;
}

template <Real T>
Var<T> conv1d_same(Var<T> v, Var<T> w) {
  return v.tape().record(
      conv1d_same(v.value(), w.value()), {v, w}, [v, w](Tape<T>& tp, const Tensor<T>& g) {
        const Tensor<T>& vv = tp.value(v);
        const Tensor<T>& wv = tp.value(w);
        const long n = static_cast<long>(vv.dim(0)), k = static_cast<long>(wv.dim(0)),
                   half = k / 2;
        Tensor<T>* gv = tp.grad_sink(v);
        Tensor<T>* gw = tp.grad_sink(w);
        for (long i = 0; i < n; ++i) {
          for (long j = 0; j < k; ++j) {
            const long s = i + j - half;
            if (s < 0 || s >= n) continue;
            const auto si = static_cast<std::size_t>(s), ji = static_cast<std::size_t>(j);
            if (gv) (*gv)[si] += wv[ji] * g[static_cast<std::size_t>(i)];
            if (gw) (*gw)[ji] += vv[si] * g[static_cast<std::size_t>(i)];
          }
        }
      });
}

/// Banded per-row weights: out[i] = sum_j W[i,j] * v[i + j - (k-1)/2], W is [T,k].
template <Real T>
Tensor<T> band_matvec(const Tensor<T>& v, const Tensor<T>& w) {
  require_rank(v, 1, "band_matvec input");
  require_rank(w, 2, "band_matvec weights");
  if (w.dim(0) != v.dim(0)) {
    throw DimensionError("band_matvec: weights " + to_string(w.shape()) + " vs input " +
                         to_string(v.shape()));
  }
  if (w.dim(1) % 2 == 0) throw ConfigError("band_matvec: band width must be odd");
  const long n = static_cast<long>(v.dim(0)), k = static_cast<long>(w.dim(1)), half = k / 2;
  Tensor<T> out({v.dim(0)});
  for (long i = 0; i < n; ++i) {
    T acc = 0;
    for (long j = 0; j < k; ++j) {
      const long s = i + j - half;
      if (s >= 0 && s < n) {
        acc += w.at(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) *
               v[static_cast<std::size_t>(s)];
      }
    }
    out[static_cast<std::size_t>(i)] = acc;
  }
  return out;
}

template <Real T>
Var<T> band_matvec(Var<T> v, Var<T> w) {
  return v.tape().record(
      band_matvec(v.value(), w.value()), {v, w}, [v, w](Tape<T>& tp, const Tensor<T>& g) {
        const Tensor<T>& vv = tp.value(v);
        const Tensor<T>& wv = tp.value(w);
        const long n = static_cast<long>(vv.dim(0)), k = static_cast<long>(wv.dim(1)),
                   half = k / 2;
        Tensor<T>* gv = tp.grad_sink(v);
        Tensor<T>* gw = tp.grad_sink(w);
        for (long i = 0; i < n; ++i) {
          for (long j = 0; j < k; ++j) {
            const long s = i + j - half;
            if (s < 0 || s >= n) continue;
            const auto ii = static_cast<std::size_t>(i), ji = static_cast<std::size_t>(j),
                       si = static_cast<std::size_t>(s);
            if (gv) (*gv)[si] += wv.at(ii, ji) * g[ii];
            if (gw) gw->at(ii, ji) += vv[si] * g[ii];
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Dense layer and loss.

/// out = W x + b with x of any shape flattened to length N, W is [O,N].
template <Real T>
Tensor<T> dense(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* b) {
  require_rank(w, 2, "dense weights");
  if (w.dim(1) != x.size()) {
    throw DimensionError("dense: weights " + to_string(w.shape()) + " incompatible with input " +
                         to_string(x.shape()));
  }
  if (b && (b->rank() != 1 || b->dim(0) != w.dim(0))) {
    throw DimensionError("dense: bias " + to_string(b->shape()) + " vs weights " +
                         to_string(w.shape()));
  }
  const std::size_t O = w.dim(0), N = w.dim(1);
  Tensor<T> out({O});
  for (std::size_t o = 0; o < O; ++o) {
    T acc = b ? (*b)[o] : T{0};
    for (std::size_t i = 0; i < N; ++i) acc += w.at(o, i) * x[i];
    out[o] = acc;
  }
  return out;
}

template <Real T>
Var<T> dense(Var<T> x, Var<T> w, Var<T> b) {
  return x.tape().record(
      dense(x.value(), w.value(), &b.value()), {x, w, b}, [x, w, b](Tape<T>& tp, const Tensor<T>& g) {
        const Tensor<T>& xv = tp.value(x);
        const Tensor<T>& wv = tp.value(w);
        const std::size_t O = wv.dim(0), N = wv.dim(1);
        Tensor<T>* gx = tp.grad_sink(x);
        Tensor<T>* gw = tp.grad_sink(w);
        Tensor<T>* gb = tp.grad_sink(b);
        for (std::size_t o = 0; o < O; ++o) {
          for (std::size_t i = 0; i < N; ++i) {
            if (gx) (*gx)[i] += wv.at(o, i) * g[o];
            if (gw) gw->at(o, i) += xv[i] * g[o];
          }
          if (gb) (*gb)[o] += g[o];
        }
      });
}

/// Full matrix-vector product out = W v, W is [M,N].
template <Real T>
Var<T> matvec(Var<T> v, Var<T> w) {
  Tape<T>& tape = v.tape();
  Var<T> zero_bias = tape.constant(Tensor<T>({w.value().dim(0)}));
  return dense(v, w, zero_bias);
}

/// Softmax cross-entropy of a logit vector against a class index; returns a
/// one-element tensor.
template <Real T>
T softmax_cross_entropy(const Tensor<T>& logits, std::size_t label) {
  require_rank(logits, 1, "softmax_cross_entropy logits");
  if (label >= logits.dim(0)) throw DimensionError("softmax_cross_entropy: label out of range");
  const T m = *std::max_element(logits.data(), logits.data() + logits.size());
  T sum = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) sum += std::exp(logits[i] - m);
  return std::log(sum) + m - logits[label];
}

template <Real T>
Var<T> softmax_cross_entropy(Var<T> logits, std::size_t label) {
  Tensor<T> loss({1}, softmax_cross_entropy(logits.value(), label));
  return logits.tape().record(std::move(loss), {logits},
                              [logits, label](Tape<T>& tp, const Tensor<T>& g) {
                                const Tensor<T> p = softmax_last(tp.value(logits));
                                Tensor<T>* gl = tp.grad_sink(logits);
                                for (std::size_t i = 0; i < p.size(); ++i) {
                                  (*gl)[i] += g[0] * (p[i] - (i == label ? T{1} : T{0}));
                                }
                              });
}

// ---------------------------------------------------------------------------
// Structural.

/// Concatenation along axis 0.
template <Real T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != b.rank() || !std::equal(a.shape().begin() + 1, a.shape().end(), b.shape().begin() + 1)) {
    throw DimensionError("concat_channels: shapes " + to_string(a.shape()) + " and " +
                         to_string(b.shape()));
  }
  Shape shape = a.shape();
  shape[0] += b.dim(0);
  std::vector<T> data(a.storage());
  data.insert(data.end(), b.storage().begin(), b.storage().end());
  return Tensor<T>(shape, std::move(data));
}

template <Real T>
Var<T> concat_channels(Var<T> a, Var<T> b) {
  return a.tape().record(concat_channels(a.value(), b.value()), {a, b},
                         [a, b](Tape<T>& tp, const Tensor<T>& g) {
                           const std::size_t na = tp.value(a).size();
                           if (Tensor<T>* ga = tp.grad_sink(a)) {
                             for (std::size_t i = 0; i < na; ++i) (*ga)[i] += g[i];
                           }
                           if (Tensor<T>* gb = tp.grad_sink(b)) {
                             for (std::size_t i = 0; i < gb->size(); ++i) (*gb)[i] += g[na + i];
                           }
                         });
}

}  // namespace tcm
