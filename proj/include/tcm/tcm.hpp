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

#include <optional>

#include "tcm/tam.hpp"

namespace tcm {

/// Shape and hyper-parameters of one temporal correlation block.
struct TcmConfig {
  std::size_t channels = 0;  // host channel width C
  std::size_t frames = 0;    // T
  CorrConfig corr;
  MatchConfig match;
  TamConfig tam;

  /// Defaults for a host feature map [C,T,H,W]: R = ceil(H/2) capped at
  /// `radius_cap`, C' = max(C/4, 8) (at most C), shared attention with the
  /// adaptive kernel size.
  static TcmConfig for_input(std::size_t channels, std::size_t frames, std::size_t height,
                             std::size_t mid_channels = 64, std::size_t radius_cap = 7) {
    TcmConfig cfg;
    cfg.channels = channels;
    cfg.frames = frames;
    cfg.corr.radius = CorrConfig::default_radius(height, radius_cap);
    cfg.corr.reduced_channels = CorrConfig::default_reduced_channels(channels);
    cfg.tam = TamConfig::for_frames(frames, mid_channels);
    return cfg;
  }

  void validate() const {
    if (frames < 2) throw ConfigError("need at least two frames to form pairs");
    if (channels < 1) throw ConfigError("TcmConfig: channels must be >= 1");
    if (tam.frames != frames) throw ConfigError("TcmConfig: attention built for a different T");
    corr.validate(channels);
    match.validate();
    tam.validate();
  }
};

template <class Slot>
struct TcmSlots {
  Slot reduce_weight;  // [C', C]
  Slot reduce_bias;    // [C']
  TamSlots<Slot> tam;
  Slot out_weight;     // [C, Cmid], zero at init
  Slot out_bias;       // [C], zero at init
};

template <class S>
struct is_tcm_slots : std::false_type {};
template <class S>
struct is_tcm_slots<TcmSlots<S>> : std::true_type {};

template <class SA, class SB, class F>
  requires is_tcm_slots<std::remove_const_t<SA>>::value && is_tcm_slots<std::remove_const_t<SB>>::value
void visit_pair(SA& a, SB& b, const std::string& prefix, F&& f) {
  f(join_name(prefix, "reduce.weight"), a.reduce_weight, b.reduce_weight);
  f(join_name(prefix, "reduce.bias"), a.reduce_bias, b.reduce_bias);
  visit_pair(a.tam, b.tam, join_name(prefix, "tam"), f);
  f(join_name(prefix, "out.weight"), a.out_weight, b.out_weight);
  f(join_name(prefix, "out.bias"), a.out_bias, b.out_bias);
}

template <Real T>
using TcmParams = TcmSlots<Tensor<T>>;
template <Real T>
using TcmVars = TcmSlots<Var<T>>;

template <Real T>
TcmParams<T> init_tcm(const TcmConfig& cfg, Rng& rng) {
  cfg.validate();
  TcmParams<T> p;
  p.reduce_weight = he_uniform<T>({cfg.corr.reduced_channels, cfg.channels}, cfg.channels, rng);
  p.reduce_bias = Tensor<T>({cfg.corr.reduced_channels});
  p.tam = init_tam<T>(cfg.tam, rng);
  p.out_weight = Tensor<T>({cfg.channels, cfg.tam.mid_channels});
  p.out_bias = Tensor<T>({cfg.channels});
  return p;
}

/// Intermediate values of one forward pass, for inspection and tests.
template <Real T>
struct TcmTrace {
  Var<T> reduced;
  Var<T> fast_volume;
  Var<T> slow_volume;
  Var<T> displacements;  // [6,T,H,W]
  Var<T> tempo;          // transformed features [Cmid,T,H,W]
  Var<T> attention;      // [T]
  Var<T> output;         // [C,T,H,W]
};

/// y = x + out_proj(attention-weighted tempo features).
template <Real T>
TcmTrace<T> tcm_trace(Var<T> x, const TcmVars<T>& v, const TcmConfig& cfg) {
  cfg.validate();
  const Tensor<T>& xv = x.value();
  if (xv.rank() != 4 || xv.dim(0) != cfg.channels || xv.dim(1) != cfg.frames) {
    throw DimensionError("tcm_forward: input " + to_string(xv.shape()) + " does not match C=" +
                         std::to_string(cfg.channels) + ", T=" + std::to_string(cfg.frames));
  }
  const PairSpec pairs = build_pairs(cfg.frames);
  TcmTrace<T> tr;
  tr.reduced = reduce_channels(x, v.reduce_weight, v.reduce_bias);
  tr.fast_volume = correlate_frames(tr.reduced, pairs.fast, cfg.corr.radius);
  tr.slow_volume = correlate_frames(tr.reduced, pairs.slow, cfg.corr.radius);
  tr.displacements = estimate_displacements(tr.fast_volume, tr.slow_volume, cfg.match);
  tr.tempo = transform_displacements(tr.displacements, v.tam);
  tr.attention = temporal_attention(tr.tempo, v.tam.attention, cfg.tam.mode);
  Var<T> excited = apply_attention(tr.tempo, tr.attention);
  tr.output = add(x, conv_pointwise(excited, v.out_weight, v.out_bias));
  return tr;
}

template <Real T>
Var<T> tcm_forward(Var<T> x, const TcmVars<T>& v, const TcmConfig& cfg) {
  return tcm_trace(x, v, cfg).output;
}

template <Real T>
Tensor<T> tcm_forward(const Tensor<T>& x, const TcmParams<T>& params, const TcmConfig& cfg) {
  Tape<T> tape;
  const auto v = bind<TcmSlots>(tape, params, false);
  return tcm_forward(tape.constant(x), v, cfg).value();
}

template <Real T>
struct TcmGradients {
  Tensor<T> input;
  TcmParams<T> params;
};

/// Stateful wrapper owning the tape of its most recent forward pass.
template <Real T>
class TcmBlock {
 public:
  TcmBlock(TcmConfig cfg, TcmParams<T> params) : cfg_(std::move(cfg)), params_(std::move(params)) {
    cfg_.validate();
  }

  const TcmConfig& config() const noexcept { return cfg_; }
  const TcmParams<T>& params() const noexcept { return params_; }
  TcmParams<T>& params() noexcept { return params_; }

  /// Clears the tape and records a fresh forward pass.
  Tensor<T> forward(const Tensor<T>& x) {
    tape_.clear();
    input_ = tape_.parameter(x);
    vars_ = bind<TcmSlots>(tape_, params_, true);
    output_ = tcm_forward(*input_, *vars_, cfg_);
    return output_->value();
  }

  /// Gradients of <upstream, y> w.r.t. the input and every parameter.
  TcmGradients<T> backward(const Tensor<T>& upstream) {
    if (!output_) throw StateError("TcmBlock::backward called without a recorded forward pass");
    tape_.backward(*output_, upstream);
    TcmGradients<T> g{tape_.grad(*input_), gradients<TcmSlots>(tape_, *vars_)};
    output_.reset();
    return g;
  }

 private:
  TcmConfig cfg_;
  TcmParams<T> params_;
  Tape<T> tape_;
  std::optional<Var<T>> input_;
  std::optional<TcmVars<T>> vars_;
  std::optional<Var<T>> output_;
};

}  // namespace tcm
