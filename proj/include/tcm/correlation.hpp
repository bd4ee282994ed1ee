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

#include <cstdint>
#include <limits>
#include <utility>
#include <vector>

#include "tcm/ops.hpp"
#include "tcm/sampling.hpp"

namespace tcm {

/// Correlation settings. The displacement window is (2R+1)^2 offsets
/// p = (dy, dx) in [-R, R]^2, enumerated dy-major (dy outer, dx inner).
struct CorrConfig {
  std::size_t radius = 0;
  std::size_t reduced_channels = 8;

  /// ceil(H/2), optionally capped.
  static std::size_t default_radius(std::size_t height,
                                    std::size_t cap = std::numeric_limits<std::size_t>::max()) {
    return std::min((height + 1) / 2, cap);
  }

  /// max(C/4, 8), never wider than the input.
  static std::size_t default_reduced_channels(std::size_t channels) {
    return std::min(std::max<std::size_t>(channels / 4, 8), channels);
  }

  void validate(std::size_t input_channels) const {
    if (reduced_channels < 1 || reduced_channels > input_channels) {
      throw ConfigError("reduced_channels must lie in [1, " + std::to_string(input_channels) +
                        "], got " + std::to_string(reduced_channels));
    }
  }
};

enum class PairKind { fast, slow };

/// scores: [pairs, (2R+1)^2, H, W]; entries whose target lies outside the frame are 0.
template <Real T>
struct CorrelationVolume {
  Tensor<T> scores;
  std::size_t radius = 0;
  PairKind kind = PairKind::fast;
};

inline std::size_t window_size(std::size_t radius) { return (2 * radius + 1) * (2 * radius + 1); }

inline std::size_t window_index(long dy, long dx, std::size_t radius) {
  const long r = static_cast<long>(radius), side = 2 * r + 1;
  return static_cast<std::size_t>((dy + r) * side + (dx + r));
}

/// (dy, dx) of a window index.
inline std::pair<long, long> window_offset(std::size_t index, std::size_t radius) {
  const long side = 2 * static_cast<long>(radius) + 1, r = static_cast<long>(radius);
  const long i = static_cast<long>(index);
  return {i / side - r, i % side - r};
}

namespace detail {

// One frame pair. Channel c of frame a starts at a + c*stride (same for b).
// The channel sum runs in ascending c from zero for every output element.
template <Real T>
void correlate_frame_pair(const T* a, const T* b, std::size_t channels, std::size_t stride,
                          std::size_t height, std::size_t width, std::size_t radius, T* out) {
  const long H = static_cast<long>(height), W = static_cast<long>(width);
  const long R = static_cast<long>(radius);
  const std::size_t plane = height * width;
  for (long dy = -R; dy <= R; ++dy) {
    const long y0 = std::max(0L, -dy), y1 = std::min(H, H - dy);
    for (long dx = -R; dx <= R; ++dx) {
      const long x0 = std::max(0L, -dx), x1 = std::min(W, W - dx);
      T* dst = out + window_index(dy, dx, radius) * plane;
      if (y0 >= y1 || x0 >= x1) continue;
      for (std::size_t c = 0; c < channels; ++c) {
        const T* ac = a + c * stride;
        const T* bc = b + c * stride;
        for (long y = y0; y < y1; ++y) {
          const T* arow = ac + y * W;
          const T* brow = bc + (y + dy) * W + dx;
          T* orow = dst + y * W;
          for (long x = x0; x < x1; ++x) orow[x] += arow[x] * brow[x];
        }
      }
    }
  }
}

template <Real T>
void correlate_frame_pair_backward(const T* a, const T* b, std::size_t channels,
                                   std::size_t stride, std::size_t height, std::size_t width,
                                   std::size_t radius, const T* grad, T* grad_a, T* grad_b) {
  const long H = static_cast<long>(height), W = static_cast<long>(width);
  const long R = static_cast<long>(radius);
  const std::size_t plane = height * width;
  for (long dy = -R; dy <= R; ++dy) {
    const long y0 = std::max(0L, -dy), y1 = std::min(H, H - dy);
    for (long dx = -R; dx <= R; ++dx) {
      const long x0 = std::max(0L, -dx), x1 = std::min(W, W - dx);
      if (y0 >= y1 || x0 >= x1) continue;
      const T* g = grad + window_index(dy, dx, radius) * plane;
      for (std::size_t c = 0; c < channels; ++c) {
        for (long y = y0; y < y1; ++y) {
          const T* grow = g + y * W;
          const std::size_t arow = c * stride + static_cast<std::size_t>(y * W);
          const std::size_t brow = c * stride + static_cast<std::size_t>((y + dy) * W + dx);
          for (long x = x0; x < x1; ++x) {
            if (grad_a) grad_a[arow + x] += grow[x] * b[brow + x];
            if (grad_b) grad_b[brow + x] += grow[x] * a[arow + x];
          }
        }
      }
    }
  }
}

template <Real T>
void check_frames(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a, 3, "correlate first input");
  require_rank(b, 3, "correlate second input");
  if (a.shape() != b.shape()) {
    throw DimensionError("correlate: shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
}

}  // namespace detail

/// Local correlation of two [C,H,W] feature maps:
///   scores[idx(p), y, x] = sum_c a[c,y,x] * b[c, y+dy, x+dx]
/// with zero contribution where (y+dy, x+dx) leaves the frame.
template <Real T>
Tensor<T> correlate(const Tensor<T>& a, const Tensor<T>& b, std::size_t radius) {
  detail::check_frames(a, b);
  const std::size_t C = a.dim(0), H = a.dim(1), W = a.dim(2);
  Tensor<T> out({window_size(radius), H, W});
  detail::correlate_frame_pair(a.data(), b.data(), C, H * W, H, W, radius, out.data());
  return out;
}

template <Real T>
Var<T> correlate(Var<T> a, Var<T> b, std::size_t radius) {
  return a.tape().record(correlate(a.value(), b.value(), radius), {a, b},
                         [a, b, radius](Tape<T>& tp, const Tensor<T>& g) {
                           const Tensor<T>& av = tp.value(a);
                           const Tensor<T>& bv = tp.value(b);
                           Tensor<T>* ga = tp.grad_sink(a);
                           Tensor<T>* gb = tp.grad_sink(b);
                           const std::size_t H = av.dim(1), W = av.dim(2);
                           detail::correlate_frame_pair_backward(
                               av.data(), bv.data(), av.dim(0), H * W, H, W, radius, g.data(),
                               ga ? ga->data() : nullptr, gb ? gb->data() : nullptr);
                         });
}

/// Literal transcription of the correlation sum, kept free of any
/// optimisation; the reference the fast path is checked against.
template <Real T>
Tensor<T> correlate_oracle(const Tensor<T>& a, const Tensor<T>& b, std::size_t radius) {
  detail::check_frames(a, b);
  const long C = static_cast<long>(a.dim(0)), H = static_cast<long>(a.dim(1)),
             W = static_cast<long>(a.dim(2)), R = static_cast<long>(radius);
  Tensor<T> out({window_size(radius), a.dim(1), a.dim(2)});
  for (long y = 0; y < H; ++y) {
    for (long x = 0; x < W; ++x) {
      for (long dy = -R; dy <= R; ++dy) {
        for (long dx = -R; dx <= R; ++dx) {
          T acc = 0;
          for (long c = 0; c < C; ++c) {
            const long yy = y + dy, xx = x + dx;
            if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
            acc += a.at(c, y, x) * b.at(c, yy, xx);
          }
          out.at(window_index(dy, dx, radius), y, x) = acc;
        }
      }
    }
  }
  return out;
}

/// Correlates frame pairs of a [C,T,H,W] feature stack: -> [pairs, (2R+1)^2, H, W].
template <Real T>
Tensor<T> correlate_frames(const Tensor<T>& feats, const std::vector<FramePair>& pairs,
                           std::size_t radius) {
  require_rank(feats, 4, "correlate_frames input");
  const std::size_t C = feats.dim(0), frames = feats.dim(1), H = feats.dim(2), W = feats.dim(3);
  const std::size_t plane = H * W, stride = frames * plane;
  if (pairs.empty()) throw DimensionError("correlate_frames: no frame pairs");
  Tensor<T> out({pairs.size(), window_size(radius), H, W});
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto [from, to] = pairs[i];
    if (from >= frames || to >= frames) {
      throw DimensionError("correlate_frames: pair (" + std::to_string(from) + "," +
                           std::to_string(to) + ") outside " + std::to_string(frames) + " frames");
    }
    detail::correlate_frame_pair(feats.data() + from * plane, feats.data() + to * plane, C, stride,
                                 H, W, radius, out.data() + i * window_size(radius) * plane);
  }
  return out;
}

template <Real T>
Var<T> correlate_frames(Var<T> feats, std::vector<FramePair> pairs, std::size_t radius) {
  Tensor<T> out = correlate_frames(feats.value(), pairs, radius);
  return feats.tape().record(
      std::move(out), {feats}, [feats, pairs, radius](Tape<T>& tp, const Tensor<T>& g) {
        const Tensor<T>& fv = tp.value(feats);
        Tensor<T>* gf = tp.grad_sink(feats);
        const std::size_t C = fv.dim(0), frames = fv.dim(1), H = fv.dim(2), W = fv.dim(3);
        const std::size_t plane = H * W, stride = frames * plane;
        for (std::size_t i = 0; i < pairs.size(); ++i) {
          const auto [from, to] = pairs[i];
          detail::correlate_frame_pair_backward(
              fv.data() + from * plane, fv.data() + to * plane, C, stride, H, W, radius,
              g.data() + i * window_size(radius) * plane, gf->data() + from * plane,
              gf->data() + to * plane);
        }
      });
}

/// Fast- and slow-tempo correlation volumes of a [C,T,H,W] feature stack.
template <Real T>
std::pair<CorrelationVolume<T>, CorrelationVolume<T>> correlate_pairs(const Tensor<T>& feats,
                                                                      const PairSpec& pairs,
                                                                      std::size_t radius) {
  require_rank(feats, 4, "correlate_pairs input");
  if (pairs.frames != feats.dim(1)) {
    throw DimensionError("correlate_pairs: pair schedule for " + std::to_string(pairs.frames) +
                         " frames applied to " + to_string(feats.shape()));
  }
  return {CorrelationVolume<T>{correlate_frames(feats, pairs.fast, radius), radius, PairKind::fast},
          CorrelationVolume<T>{correlate_frames(feats, pairs.slow, radius), radius, PairKind::slow}};
}

/// 1x1 channel reduction ahead of the correlation.
template <Real T>
Tensor<T> reduce_channels(const Tensor<T>& x, const Tensor<T>& weights, const Tensor<T>& bias) {
  return conv_pointwise(x, weights, &bias);
}

template <Real T>
Var<T> reduce_channels(Var<T> x, Var<T> weights, Var<T> bias) {
  return conv_pointwise(x, weights, bias);
}

/// Multiply-accumulate count of one scale's correlation over a clip:
/// (T-1) * C * H * W * R^2. Throws if the count does not fit in 63 bits.
inline std::int64_t correlation_flops(std::uint64_t frames, std::uint64_t channels,
                                      std::uint64_t height, std::uint64_t width,
                                      std::uint64_t radius) {
  if (frames < 1 || channels < 1 || height < 1 || width < 1) {
    throw ConfigError("correlation_flops: T, C, H and W must be >= 1");
  }
  unsigned __int128 n = frames - 1;
  for (std::uint64_t f : {channels, height, width, radius, radius}) {
    n *= f;
    if (n > static_cast<unsigned __int128>(std::numeric_limits<std::int64_t>::max())) {
      throw ConfigError("correlation_flops: count exceeds 2^63 - 1");
    }
  }
  return static_cast<std::int64_t>(n);
}

}  // namespace tcm
