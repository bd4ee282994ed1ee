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

#include <array>
#include <cmath>

#include "tcm/match.hpp"
#include "tcm/params.hpp"

namespace tcm {

/// How the temporal attention weights are parameterised.
enum class AttentionMode {
  shared,  // one length-k kernel reused by every frame (k parameters)
  band,    // a separate length-k band per frame (k*T parameters)
  full,    // dense T x T matrix (T^2 parameters)
};

inline const char* to_string(AttentionMode m) {
  switch (m) {
    case AttentionMode::shared: return "shared";
    case AttentionMode::band: return "band";
    case AttentionMode::full: return "full";
  }
  return "?";
}

/// Adaptive temporal kernel size: the odd integer nearest to
/// (log2(T) + b) / gamma, rounding exact ties down, clamped to [1, T].
inline std::size_t kernel_size_for(std::size_t frames, double gamma = 1.0, double b = 1.0) {
  if (frames < 1) throw ConfigError("kernel_size_for: T must be >= 1");
  if (!(gamma > 0)) throw ConfigError("kernel_size_for: gamma must be > 0");
  const double v = (std::log2(static_cast<double>(frames)) + b) / gamma;
  // Largest odd integer <= v, and the next odd above it.
  const double lo = 2.0 * std::floor((v - 1.0) / 2.0) + 1.0;
  const double hi = lo + 2.0;
  const double k = (v - lo <= hi - v + 1e-12) ? lo : hi;
  const double clamped = std::clamp(k, 1.0, static_cast<double>(frames));
  auto out = static_cast<std::size_t>(clamped);
  if (out % 2 == 0) --out;  // clamping to an even T
  return out;
}

inline std::size_t attention_param_count(AttentionMode mode, std::size_t frames,
                                         std::size_t kernel) {
  switch (mode) {
    case AttentionMode::shared: return kernel;
    case AttentionMode::band: return kernel * frames;
    case AttentionMode::full: return frames * frames;
  }
  return 0;
}

inline Shape attention_shape(AttentionMode mode, std::size_t frames, std::size_t kernel) {
  switch (mode) {
    case AttentionMode::shared: return {kernel};
    case AttentionMode::band: return {frames, kernel};
    case AttentionMode::full: return {frames, frames};
  }
  return {};
}

struct TamConfig {
  std::size_t mid_channels = 64;
  std::size_t frames = 8;
  std::size_t kernel_size = 3;
  AttentionMode mode = AttentionMode::shared;

  static TamConfig for_frames(std::size_t frames, std::size_t mid_channels = 64) {
    return {mid_channels, frames, kernel_size_for(frames), AttentionMode::shared};
  }

  void validate() const {
    if (mid_channels < 1) throw ConfigError("TamConfig: mid_channels must be >= 1");
    if (kernel_size % 2 == 0 || kernel_size < 1) {
      throw ConfigError("TamConfig: kernel size must be odd, got " + std::to_string(kernel_size));
    }
    if (kernel_size > frames) {
      throw ConfigError("TamConfig: kernel size " + std::to_string(kernel_size) +
                        " exceeds T=" + std::to_string(frames));
    }
  }
};

inline constexpr std::size_t kDisplacementChannels = 6;
inline constexpr std::size_t kTransformLayers = 6;
// Layers 3..6 carry a pointwise stage.
inline constexpr std::size_t kPointwiseLayers = 4;

/// Transformation stack and attention weights.
template <class Slot>
struct TamSlots {
  Slot stem_weight;  // [Cmid, 6]
  Slot stem_bias;    // [Cmid]
  std::array<Slot, kTransformLayers> depthwise;         // [Cmid, 3, 3]
  std::array<Slot, kPointwiseLayers> pointwise_weight;  // [Cmid, Cmid]
  std::array<Slot, kPointwiseLayers> pointwise_bias;    // [Cmid]
  Slot attention;  // see attention_shape()
};

template <class S>
struct is_tam_slots : std::false_type {};
template <class S>
struct is_tam_slots<TamSlots<S>> : std::true_type {};

template <class SA, class SB, class F>
  requires is_tam_slots<std::remove_const_t<SA>>::value && is_tam_slots<std::remove_const_t<SB>>::value
void visit_pair(SA& a, SB& b, const std::string& prefix, F&& f) {
  f(join_name(prefix, "stem.weight"), a.stem_weight, b.stem_weight);
  f(join_name(prefix, "stem.bias"), a.stem_bias, b.stem_bias);
  for (std::size_t i = 0; i < kTransformLayers; ++i) {
    const std::string layer = "layer" + std::to_string(i + 1);
    f(join_name(prefix, layer + ".depthwise"), a.depthwise[i], b.depthwise[i]);
    if (i >= kTransformLayers - kPointwiseLayers) {
      const std::size_t j = i - (kTransformLayers - kPointwiseLayers);
      f(join_name(prefix, layer + ".pointwise.weight"), a.pointwise_weight[j], b.pointwise_weight[j]);
      f(join_name(prefix, layer + ".pointwise.bias"), a.pointwise_bias[j], b.pointwise_bias[j]);
    }
  }
  f(join_name(prefix, "attention.weight"), a.attention, b.attention);
}

template <Real T>
using TamParams = TamSlots<Tensor<T>>;
template <Real T>
using TamVars = TamSlots<Var<T>>;

/// He-uniform (fan-in) weights, zero biases, zero attention weights.
template <Real T>
TamParams<T> init_tam(const TamConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t m = cfg.mid_channels;
  TamParams<T> p;
  p.stem_weight = he_uniform<T>({m, kDisplacementChannels}, kDisplacementChannels, rng);
  p.stem_bias = Tensor<T>({m});
  for (auto& k : p.depthwise) k = he_uniform<T>({m, 3, 3}, 9, rng);
  for (std::size_t j = 0; j < kPointwiseLayers; ++j) {
    p.pointwise_weight[j] = he_uniform<T>({m, m}, m, rng);
    p.pointwise_bias[j] = Tensor<T>({m});
  }
  p.attention = Tensor<T>(attention_shape(cfg.mode, cfg.frames, cfg.kernel_size));
  return p;
}

/// Six 1x3x3 depthwise layers after a 6 -> Cmid pointwise stem; layers 3-6
/// add a pointwise convolution; every layer ends in ReLU.
template <Real T>
Var<T> transform_displacements(Var<T> d, const TamVars<T>& v) {
  if (d.value().rank() != 4 || d.value().dim(0) != kDisplacementChannels) {
    throw DimensionError("transform_displacements: expected 6 input channels, got " +
                         to_string(d.shape()));
  }
  Var<T> h = conv_pointwise(d, v.stem_weight, v.stem_bias);
  for (std::size_t i = 0; i < kTransformLayers; ++i) {
    h = conv_depthwise_2d(h, v.depthwise[i]);
    if (i >= kTransformLayers - kPointwiseLayers) {
      const std::size_t j = i - (kTransformLayers - kPointwiseLayers);
      h = conv_pointwise(h, v.pointwise_weight[j], v.pointwise_bias[j]);
    }
    h = relu(h);
  }
  return h;
}

template <Real T>
Tensor<T> transform_displacements(const Tensor<T>& d, const TamParams<T>& params) {
  Tape<T> tape;
  const auto v = bind<TamSlots>(tape, params, false);
  return transform_displacements(tape.constant(d), v).value();
}

/// Temporal attention weights in (0,1)^T: per-frame average over channels
/// and space, a local temporal mixing, then sigmoid.
template <Real T>
Var<T> temporal_attention(Var<T> features, Var<T> weights, AttentionMode mode) {
  Var<T> aggregate = gap_per_frame(features);
  const std::size_t frames = aggregate.value().dim(0);
  const Shape& ws = weights.value().shape();
  switch (mode) {
    case AttentionMode::shared:
      if (ws.size() != 1 || ws[0] > frames) {
        throw ConfigError("temporal_attention: shared kernel " + to_string(ws) +
                          " invalid for T=" + std::to_string(frames));
      }
      return sigmoid(conv1d_same(aggregate, weights));
    case AttentionMode::band:
      return sigmoid(band_matvec(aggregate, weights));
    case AttentionMode::full:
      return sigmoid(matvec(aggregate, weights));
  }
  throw ConfigError("temporal_attention: unknown mode");
}

template <Real T>
Tensor<T> temporal_attention(const Tensor<T>& features, const Tensor<T>& weights,
                             AttentionMode mode = AttentionMode::shared) {
  Tape<T> tape;
  return temporal_attention(tape.constant(features), tape.constant(weights), mode).value();
}

/// out[c,t,h,w] = f[c,t,h,w] * w[t].
template <Real T>
Var<T> apply_attention(Var<T> features, Var<T> weights) {
  return mul_broadcast_time(features, weights);
}

template <Real T>
Tensor<T> apply_attention(const Tensor<T>& features, const Tensor<T>& weights) {
  return mul_broadcast_time(features, weights);
}

}  // namespace tcm
