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

#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "tcm/correlation.hpp"

namespace tcm {

/// Kernel-soft-argmax settings.
struct MatchConfig {
  double sigma = 5.0;  // Gaussian std-dev, displacement units
  double tau = 0.01;   // softmax temperature
  // Test hook: replace the Gaussian by its constant peak value.
  bool uniform_kernel = false;

  void validate() const {
    if (!(sigma > 0) || !(tau > 0)) throw ConfigError("MatchConfig: sigma and tau must be > 0");
  }
};

template <Real T>
struct Displacement {
  T dx = 0;
  T dy = 0;
};

/// [6, T, H, W]: fast dx, fast dy, fast confidence, slow dx, slow dy, slow confidence.
template <Real T>
struct DisplacementTensor {
  Tensor<T> maps;
  std::size_t radius = 0;
};

/// Radius of a (2R+1)^2 window; throws if `length` is not such a size.
inline std::size_t window_radius(std::size_t length) {
  if (length == 0) throw DimensionError("empty displacement window");
  const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(length))));
  if (side * side != length || side % 2 == 0) {
    throw DimensionError("window length " + std::to_string(length) + " is not (2R+1)^2");
  }
  return side / 2;
}

/// Index of the largest score; the first one wins ties.
template <Real T>
std::size_t hard_argmax(std::span<const T> scores) {
  window_radius(scores.size());
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) best = i;
  }
  return best;
}

template <Real T>
T confidence(std::span<const T> scores) {
  return scores[hard_argmax(scores)];
}

/// g(p) = exp(-|p - center|^2 / sigma^2) / (sqrt(2 pi) sigma) over the window.
template <Real T>
std::vector<T> gaussian_kernel(std::size_t center, std::size_t radius, const MatchConfig& cfg) {
  cfg.validate();
  const double peak = 1.0 / (std::sqrt(2.0 * std::numbers::pi) * cfg.sigma);
  const auto [cy, cx] = window_offset(center, radius);
  std::vector<T> g(window_size(radius));
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (cfg.uniform_kernel) {
      g[i] = static_cast<T>(peak);
      continue;
    }
    const auto [dy, dx] = window_offset(i, radius);
    const double d2 = static_cast<double>((dy - cy) * (dy - cy) + (dx - cx) * (dx - cx));
    g[i] = static_cast<T>(peak * std::exp(-d2 / (cfg.sigma * cfg.sigma)));
  }
  return g;
}

namespace detail {

// Softmax weights of g(p) * S(p) / tau for one window. `kernel` is the
// Gaussian for this window's hard argmax.
template <Real T>
void soft_argmax_weights(std::span<const T> scores, std::span<const T> kernel, T tau,
                         std::span<T> weights) {
  T top = -std::numeric_limits<T>::infinity();
  for (std::size_t i = 0; i < scores.size(); ++i) {
    weights[i] = kernel[i] * scores[i] / tau;
    top = std::max(top, weights[i]);
  }
  T sum = 0;
  for (auto& w : weights) sum += w = std::exp(w - top);
  for (auto& w : weights) w /= sum;
}

// Expected displacement under `weights`. Symmetric offsets are paired so a
// symmetric distribution yields exactly zero.
template <Real T>
Displacement<T> expected_offset(std::span<const T> weights, std::size_t radius) {
  const std::size_t side = 2 * radius + 1;
  std::vector<T> cols(side, T{0}), rows(side, T{0});
  for (std::size_t r = 0; r < side; ++r) {
    for (std::size_t c = 0; c < side; ++c) {
      rows[r] += weights[r * side + c];
    }
  }
  for (std::size_t c = 0; c < side; ++c) {
    for (std::size_t r = 0; r < side; ++r) cols[c] += weights[r * side + c];
  }
  Displacement<T> d;
  for (std::size_t k = 1; k <= radius; ++k) {
    d.dx += static_cast<T>(k) * (cols[radius + k] - cols[radius - k]);
    d.dy += static_cast<T>(k) * (rows[radius + k] - rows[radius - k]);
  }
  return d;
}

}  // namespace detail

/// d = sum_p softmax_p(g(p) S(p) / tau) p, with g centred on the hard argmax.
template <Real T>
Displacement<T> kernel_soft_argmax(std::span<const T> scores, const MatchConfig& cfg) {
  for (T s : scores) {
    if (!std::isfinite(s)) throw EvaluationError("kernel_soft_argmax: non-finite score");
  }
  const std::size_t radius = window_radius(scores.size());
  const std::vector<T> kernel = gaussian_kernel<T>(hard_argmax(scores), radius, cfg);
  std::vector<T> weights(scores.size());
  detail::soft_argmax_weights<T>(scores, kernel, static_cast<T>(cfg.tau), weights);
  return detail::expected_offset<T>(weights, radius);
}

namespace detail {

// Per-position match over a [P, window, H, W] volume into [3, P+1, H, W]
// (dx, dy, confidence); the last pair's maps fill the final frame as well.
template <Real T>
Tensor<T> match_volume_forward(const Tensor<T>& vol, const MatchConfig& cfg) {
  require_rank(vol, 4, "match volume");
  cfg.validate();
  const std::size_t P = vol.dim(0), win = vol.dim(1), H = vol.dim(2), W = vol.dim(3);
  const std::size_t radius = window_radius(win), plane = H * W, frames = P + 1;
  Tensor<T> out({3, frames, H, W});
  std::vector<T> scores(win), weights(win);
  for (std::size_t p = 0; p < P; ++p) {
    const T* base = vol.data() + p * win * plane;
    for (std::size_t pos = 0; pos < plane; ++pos) {
      for (std::size_t i = 0; i < win; ++i) scores[i] = base[i * plane + pos];
      const std::size_t best = hard_argmax<T>(scores);
      const std::vector<T> kernel = gaussian_kernel<T>(best, radius, cfg);
      soft_argmax_weights<T>(scores, kernel, static_cast<T>(cfg.tau), weights);
      const Displacement<T> d = expected_offset<T>(weights, radius);
      out.at(0, p, pos / W, pos % W) = d.dx;
      out.at(1, p, pos / W, pos % W) = d.dy;
      out.at(2, p, pos / W, pos % W) = scores[best];
    }
  }
  for (std::size_t c = 0; c < 3; ++c) {
    std::copy_n(out.data() + (c * frames + P - 1) * plane, plane,
                out.data() + (c * frames + P) * plane);
  }
  return out;
}

}  // namespace detail

/// Differentiable match estimation over one correlation volume. The hard
/// argmax that centres the Gaussian is piecewise constant and contributes no
/// gradient; the confidence gradient flows to the first maximal score.
template <Real T>
Var<T> match_volume(Var<T> vol, const MatchConfig& cfg) {
  Tensor<T> out = detail::match_volume_forward(vol.value(), cfg);
  return vol.tape().record(std::move(out), {vol}, [vol, cfg](Tape<T>& tp, const Tensor<T>& g) {
    const Tensor<T>& vv = tp.value(vol);
    Tensor<T>* gv = tp.grad_sink(vol);
    const std::size_t P = vv.dim(0), win = vv.dim(1), H = vv.dim(2), W = vv.dim(3);
    const std::size_t radius = window_radius(win), plane = H * W, frames = P + 1;
    const T tau = static_cast<T>(cfg.tau);
    std::vector<T> scores(win), weights(win);
    for (std::size_t p = 0; p < P; ++p) {
      const T* base = vv.data() + p * win * plane;
      T* gbase = gv->data() + p * win * plane;
      for (std::size_t pos = 0; pos < plane; ++pos) {
        // The final frame duplicates the last pair, so its gradient folds back.
        auto upstream = [&](std::size_t c) {
          T v = g[(c * frames + p) * plane + pos];
          if (p + 1 == P) v += g[(c * frames + P) * plane + pos];
          return v;
        };
        const T gdx = upstream(0), gdy = upstream(1), gconf = upstream(2);
        for (std::size_t i = 0; i < win; ++i) scores[i] = base[i * plane + pos];
        const std::size_t best = hard_argmax<T>(scores);
        gbase[best * plane + pos] += gconf;
        if (gdx == T{0} && gdy == T{0}) continue;
        const std::vector<T> kernel = gaussian_kernel<T>(best, radius, cfg);
        detail::soft_argmax_weights<T>(scores, kernel, tau, weights);
        const Displacement<T> d = detail::expected_offset<T>(weights, radius);
        for (std::size_t i = 0; i < win; ++i) {
          const auto [oy, ox] = window_offset(i, radius);
          const T dlogit = weights[i] * (gdx * (static_cast<T>(ox) - d.dx) +
                                         gdy * (static_cast<T>(oy) - d.dy));
          gbase[i * plane + pos] += dlogit * kernel[i] / tau;
        }
      }
    }
  });
}

/// Builds the 6-channel displacement tensor from the fast and slow volumes.
template <Real T>
DisplacementTensor<T> estimate_displacements(const CorrelationVolume<T>& fast,
                                             const CorrelationVolume<T>& slow,
                                             const MatchConfig& cfg) {
  if (fast.scores.shape() != slow.scores.shape() || fast.radius != slow.radius) {
    throw DimensionError("estimate_displacements: fast volume " + to_string(fast.scores.shape()) +
                         " and slow volume " + to_string(slow.scores.shape()) + " differ");
  }
  return {concat_channels(detail::match_volume_forward(fast.scores, cfg),
                          detail::match_volume_forward(slow.scores, cfg)),
          fast.radius};
}

template <Real T>
Var<T> estimate_displacements(Var<T> fast, Var<T> slow, const MatchConfig& cfg) {
  if (fast.shape() != slow.shape()) {
    throw DimensionError("estimate_displacements: fast volume " + to_string(fast.shape()) +
                         " and slow volume " + to_string(slow.shape()) + " differ");
  }
  return concat_channels(match_volume(fast, cfg), match_volume(slow, cfg));
}

}  // namespace tcm
