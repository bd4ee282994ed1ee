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

// Desk-scale visual-tempo experiments: a synthetic dataset whose classes
// differ only in motion speed, a small host network with an optional
// temporal block, and the training / evaluation loop around it.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>

#include "tcm/parallel.hpp"
#include "tcm/tcm.hpp"
#include "tcm/tsr_io.hpp"

namespace tcm {

// ---------------------------------------------------------------------------
// Dataset

struct SampleMeta {
  double velocity = 0;  // pixels per frame, +x direction
  double start_x = 0;
  double start_y = 0;
  std::size_t pattern_id = 0;
  std::uint64_t seed = 0;
};

template <Real T>
struct SynthSample {
  Tensor<T> video;  // [1, T, H, W], values in [0, 1]
  std::size_t label = 0;
  SampleMeta meta;
};

struct SynthConfig {
  std::vector<double> velocities{0.0, 1.0, 2.0};
  std::size_t count = 400;
  std::size_t frames = 8;
  std::size_t height = 32;
  std::size_t width = 32;
  double pattern_size = 6.0;
  double margin = 3.0;
};

namespace detail {

inline double overlap(double a0, double a1, double b0, double b1) {
  return std::max(0.0, std::min(a1, b1) - std::max(a0, b0));
}

}  // namespace detail

/// Renders an axis-aligned bright square with exact area coverage per pixel,
/// i.e. the square's sub-pixel position is splatted bilinearly.
template <Real T>
void render_square(Tensor<T>& video, std::size_t frame, double x0, double y0, double size) {
  const std::size_t H = video.dim(2), W = video.dim(3);
  for (std::size_t y = 0; y < H; ++y) {
    const double cy = detail::overlap(static_cast<double>(y), y + 1.0, y0, y0 + size);
    if (cy == 0) continue;
    for (std::size_t x = 0; x < W; ++x) {
      const double cx = detail::overlap(static_cast<double>(x), x + 1.0, x0, x0 + size);
      video.at(0, frame, y, x) = static_cast<T>(cx * cy);
    }
  }
}

/// Balanced dataset: sample i has class i % classes. The start range is the
/// same for every class so that position statistics do not reveal speed.
template <Real T>
std::vector<SynthSample<T>> gen_dataset(const SynthConfig& cfg, std::uint64_t seed) {
  if (cfg.velocities.empty()) throw ConfigError("gen_dataset: no classes");
  if (cfg.frames < 2) throw ConfigError("gen_dataset: need at least two frames");
  double vmax = 0;
  for (double v : cfg.velocities) {
    if (v < 0) throw ConfigError("gen_dataset: velocities must be non-negative");
    vmax = std::max(vmax, v);
  }
  const double travel = vmax * static_cast<double>(cfg.frames - 1);
  const double extent = static_cast<double>(std::min(cfg.height, cfg.width));
  if (!(travel < extent - cfg.pattern_size)) {
    throw ConfigError("gen_dataset: trajectory overflow, velocity " + std::to_string(vmax) +
                      " over " + std::to_string(cfg.frames) + " frames leaves the frame");
  }
  const double slack_x = static_cast<double>(cfg.width) - cfg.pattern_size - travel;
  const double slack_y = static_cast<double>(cfg.height) - cfg.pattern_size;
  const double mx = std::min(cfg.margin, slack_x / 2), my = std::min(cfg.margin, slack_y / 2);

  std::vector<SynthSample<T>> out(cfg.count);
  for (std::size_t i = 0; i < cfg.count; ++i) {
    SynthSample<T>& s = out[i];
    s.label = i % cfg.velocities.size();
    s.meta.velocity = cfg.velocities[s.label];
    s.meta.seed = derive_seed(seed, i);
    Rng rng(s.meta.seed);
    std::uniform_real_distribution<double> ux(mx, slack_x - mx), uy(my, slack_y - my);
    s.meta.start_x = ux(rng);
    s.meta.start_y = uy(rng);
    s.video = Tensor<T>({1, cfg.frames, cfg.height, cfg.width});
    for (std::size_t t = 0; t < cfg.frames; ++t) {
      render_square(s.video, t, s.meta.start_x + s.meta.velocity * static_cast<double>(t),
                    s.meta.start_y, cfg.pattern_size);
    }
  }
  return out;
}

/// Re-reads a clip every `stride` frames starting at frame 0 and pads the
/// tail with the last selected frame so the clip keeps its length.
template <Real T>
Tensor<T> resample_stride(const Tensor<T>& video, std::size_t stride) {
  require_rank(video, 4, "resample_stride input");
  if (stride < 1) throw ConfigError("resample_stride: stride must be >= 1");
  const std::size_t C = video.dim(0), frames = video.dim(1), plane = video.dim(2) * video.dim(3);
  const std::size_t last_selected = ((frames - 1) / stride) * stride;
  Tensor<T> out(video.shape());
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t t = 0; t < frames; ++t) {
      const std::size_t src = std::min(t * stride, last_selected);
      std::copy_n(video.data() + (c * frames + src) * plane, plane,
                  out.data() + (c * frames + t) * plane);
    }
  }
  return out;
}

/// Writes sample_NNNNN.tsr files and labels.csv (index,label,velocity,seed).
template <Real T>
void save_dataset(const std::filesystem::path& dir, const std::vector<SynthSample<T>>& data) {
  std::filesystem::create_directories(dir);
  std::ofstream csv(dir / "labels.csv", std::ios::binary);
  if (!csv) throw FormatError("cannot write " + (dir / "labels.csv").string());
  csv.imbue(std::locale::classic());
  csv << "index,label,velocity,seed\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "sample_%05zu.tsr", i);
    save_tsr(dir / name, data[i].video);
    csv << i << ',' << data[i].label << ',' << data[i].meta.velocity << ',' << data[i].meta.seed
        << '\n';
  }
}

template <Real T>
std::vector<SynthSample<T>> load_dataset(const std::filesystem::path& dir) {
  std::ifstream csv(dir / "labels.csv");
  if (!csv) throw FormatError("missing labels.csv in " + dir.string());
  csv.imbue(std::locale::classic());
  std::string line;
  std::getline(csv, line);
  if (line != "index,label,velocity,seed") throw FormatError("unexpected labels.csv header");
  std::vector<SynthSample<T>> out;
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    ls.imbue(std::locale::classic());
    std::size_t index = 0;
    char c1, c2, c3;
    SynthSample<T> s;
    if (!(ls >> index >> c1 >> s.label >> c2 >> s.meta.velocity >> c3 >> s.meta.seed)) {
      throw FormatError("malformed labels.csv line: " + line);
    }
    char name[32];
    std::snprintf(name, sizeof(name), "sample_%05zu.tsr", index);
    s.video = load_tsr_as<T>(dir / name);
    require_rank(s.video, 4, "dataset sample");
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Host network

enum class HostVariant {
  baseline,       // per-frame stem, time-averaged head: cannot see tempo
  tcm,            // baseline + temporal correlation block after the stem
  temporal_conv,  // baseline + residual depthwise temporal convolution
};

inline const char* to_string(HostVariant v) {
  switch (v) {
    case HostVariant::baseline: return "off";
    case HostVariant::tcm: return "on";
    case HostVariant::temporal_conv: return "temporal";
  }
  return "?";
}

struct ToyNetConfig {
  HostVariant variant = HostVariant::tcm;
  std::size_t classes = 3;
  std::size_t frames = 8;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t channels = 16;
  std::size_t tcm_mid_channels = 16;
  std::size_t temporal_kernel = 3;

  /// Block settings at the stem output [C, T, H/4, W/4].
  TcmConfig tcm() const {
    return TcmConfig::for_input(channels, frames, height / 4, tcm_mid_channels);
  }

  void validate() const {
    if (classes < 2) throw ConfigError("ToyNet: need at least two classes");
    if (height % 4 || width % 4) throw ConfigError("ToyNet: H and W must be multiples of 4");
    if (frames < 2) throw ConfigError("ToyNet: need at least two frames");
    if (temporal_kernel % 2 == 0) throw ConfigError("ToyNet: temporal kernel must be odd");
  }
};

template <class Slot>
struct ToyNetSlots {
  Slot stem1_pw_weight;  // [C, 1]
  Slot stem1_pw_bias;    // [C]
  Slot stem1_dw;         // [C, 3, 3]
  Slot stem2_pw_weight;  // [C, C]
  Slot stem2_pw_bias;    // [C]
  Slot stem2_dw;         // [C, 3, 3]
  std::optional<TcmSlots<Slot>> tcm;
  std::optional<Slot> tconv_kernel;       // [C, kt]
  std::optional<Slot> tconv_out_weight;   // [C, C]
  std::optional<Slot> tconv_out_bias;     // [C]
  Slot head_weight;  // [classes, C]
  Slot head_bias;    // [classes]
};

template <class S>
struct is_toynet_slots : std::false_type {};
template <class S>
struct is_toynet_slots<ToyNetSlots<S>> : std::true_type {};

template <class SA, class SB, class F>
  requires is_toynet_slots<std::remove_const_t<SA>>::value &&
           is_toynet_slots<std::remove_const_t<SB>>::value
void visit_pair(SA& a, SB& b, const std::string& prefix, F&& f) {
  auto optional = [&](const std::string& name, auto& x, auto& y) {
    if (!x) return;
    if constexpr (!std::is_const_v<SB>) {
      if (!y) y.emplace();
    }
    f(join_name(prefix, name), *x, *y);
  };
  f(join_name(prefix, "stem1.pointwise.weight"), a.stem1_pw_weight, b.stem1_pw_weight);
  f(join_name(prefix, "stem1.pointwise.bias"), a.stem1_pw_bias, b.stem1_pw_bias);
  f(join_name(prefix, "stem1.depthwise"), a.stem1_dw, b.stem1_dw);
  f(join_name(prefix, "stem2.pointwise.weight"), a.stem2_pw_weight, b.stem2_pw_weight);
  f(join_name(prefix, "stem2.pointwise.bias"), a.stem2_pw_bias, b.stem2_pw_bias);
  f(join_name(prefix, "stem2.depthwise"), a.stem2_dw, b.stem2_dw);
  if (a.tcm) {
    if constexpr (!std::is_const_v<SB>) {
      if (!b.tcm) b.tcm.emplace();
    }
    visit_pair(*a.tcm, *b.tcm, join_name(prefix, "tcm"), f);
  }
  optional("tconv.kernel", a.tconv_kernel, b.tconv_kernel);
  optional("tconv.out.weight", a.tconv_out_weight, b.tconv_out_weight);
  optional("tconv.out.bias", a.tconv_out_bias, b.tconv_out_bias);
  f(join_name(prefix, "head.weight"), a.head_weight, b.head_weight);
  f(join_name(prefix, "head.bias"), a.head_bias, b.head_bias);
}

template <Real T>
using ToyNetParams = ToyNetSlots<Tensor<T>>;
template <Real T>
using ToyNetVars = ToyNetSlots<Var<T>>;

template <Real T>
struct ToyNet {
  ToyNetConfig config;
  ToyNetParams<T> params;
};

template <Real T>
ToyNet<T> make_toynet(const ToyNetConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(derive_seed(seed, 0x7059));
  const std::size_t C = cfg.channels;
  ToyNet<T> net{cfg, {}};
  auto& p = net.params;
  p.stem1_pw_weight = he_uniform<T>({C, 1}, 1, rng);
  p.stem1_pw_bias = Tensor<T>({C});
  p.stem1_dw = he_uniform<T>({C, 3, 3}, 9, rng);
  p.stem2_pw_weight = he_uniform<T>({C, C}, C, rng);
  p.stem2_pw_bias = Tensor<T>({C});
  p.stem2_dw = he_uniform<T>({C, 3, 3}, 9, rng);
  if (cfg.variant == HostVariant::tcm) p.tcm = init_tcm<T>(cfg.tcm(), rng);
  if (cfg.variant == HostVariant::temporal_conv) {
    p.tconv_kernel = he_uniform<T>({C, cfg.temporal_kernel}, cfg.temporal_kernel, rng);
    p.tconv_out_weight = Tensor<T>({C, C});
    p.tconv_out_bias = Tensor<T>({C});
  }
  p.head_weight = he_uniform<T>({cfg.classes, C}, C, rng);
  p.head_bias = Tensor<T>({cfg.classes});
  return net;
}

/// Class scores for one [1, T, H, W] clip.
template <Real T>
Var<T> toynet_logits(Var<T> video, const ToyNetVars<T>& v, const ToyNetConfig& cfg) {
  const Tensor<T>& x = video.value();
  if (x.rank() != 4 || x.dim(0) != 1 || x.dim(1) != cfg.frames || x.dim(2) != cfg.height ||
      x.dim(3) != cfg.width) {
    throw DimensionError("ToyNet: clip " + to_string(x.shape()) + " does not match [1," +
                         std::to_string(cfg.frames) + "," + std::to_string(cfg.height) + "," +
                         std::to_string(cfg.width) + "]");
  }
  Var<T> h = conv_pointwise(video, v.stem1_pw_weight, v.stem1_pw_bias);
  h = avg_pool2(relu(conv_depthwise_2d(h, v.stem1_dw)));
  h = conv_pointwise(h, v.stem2_pw_weight, v.stem2_pw_bias);
  h = avg_pool2(relu(conv_depthwise_2d(h, v.stem2_dw)));
  if (v.tcm) h = tcm_forward(h, *v.tcm, cfg.tcm());
  if (v.tconv_kernel) {
    Var<T> motion = relu(conv_temporal_depthwise(h, *v.tconv_kernel));
    h = add(h, conv_pointwise(motion, *v.tconv_out_weight, *v.tconv_out_bias));
  }
  return dense(mean_time_unordered(gap_spatial(h)), v.head_weight, v.head_bias);
}

template <Real T>
Tensor<T> toynet_logits(const ToyNet<T>& net, const Tensor<T>& video) {
  Tape<T> tape;
  const auto v = bind<ToyNetSlots>(tape, net.params, false);
  return toynet_logits(tape.constant(video), v, net.config).value();
}

template <Real T>
std::size_t predict(const ToyNet<T>& net, const Tensor<T>& video) {
  const Tensor<T> logits = toynet_logits(net, video);
  return static_cast<std::size_t>(std::max_element(logits.data(), logits.data() + logits.size()) -
                                  logits.data());
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  std::size_t epochs = 30;
  double lr = 0.01;
  double momentum = 0.9;
  std::size_t batch_size = 10;
  std::uint64_t seed = 42;
  double clip_norm = 0.0;  // global L2 bound on the batch gradient; 0 disables
};

struct TrainResult {
  std::vector<double> loss_curve;  // mean training loss per epoch
};

/// Mini-batch SGD with momentum on softmax cross-entropy. Per-sample
/// gradients may be computed in parallel; they are reduced in sample order.
template <Real T>
TrainResult train(ToyNet<T>& net, const std::vector<SynthSample<T>>& data, const TrainConfig& cfg) {
  if (data.empty()) throw ConfigError("train: empty dataset");
  if (!(cfg.lr >= 0)) throw ConfigError("train: learning rate must be >= 0");
  if (cfg.batch_size < 1) throw ConfigError("train: batch size must be >= 1");
  if (!(cfg.clip_norm >= 0)) throw ConfigError("train: clip norm must be >= 0");
  Rng rng(derive_seed(cfg.seed, 0x5347));
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  ToyNetParams<T> velocity = zeros_like<ToyNetSlots>(net.params);
  const T lr = static_cast<T>(cfg.lr), mu = static_cast<T>(cfg.momentum);
  TrainResult result;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - start);
      std::vector<ToyNetParams<T>> grads(n);
      std::vector<double> losses(n);
      parallel_for(n, [&](std::size_t i) {
        const SynthSample<T>& s = data[order[start + i]];
        Tape<T> tape;
        const auto vars = bind<ToyNetSlots>(tape, net.params, true);
        Var<T> loss = softmax_cross_entropy(toynet_logits(tape.constant(s.video), vars, net.config),
                                            s.label);
        losses[i] = static_cast<double>(loss.value()[0]);
        tape.backward(loss);
        grads[i] = gradients<ToyNetSlots>(tape, vars);
      });
      for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(losses[i])) {
          throw TrainingError("training diverged (non-finite loss) in epoch " +
                              std::to_string(epoch), static_cast<int>(epoch));
        }
        epoch_loss += losses[i];
      }
      const T inv = T{1} / static_cast<T>(n);
      std::vector<Tensor<T>*> p, vel;
      for_each_param(net.params, [&](const std::string&, Tensor<T>& t) { p.push_back(&t); });
      for_each_param(velocity, [&](const std::string&, Tensor<T>& t) { vel.push_back(&t); });
      std::vector<std::vector<Tensor<T>*>> g(n);
      for (std::size_t i = 0; i < n; ++i) {
        for_each_param(grads[i], [&](const std::string&, Tensor<T>& t) { g[i].push_back(&t); });
      }
      std::vector<std::vector<T>> mean(p.size());
      double norm2 = 0;
      for (std::size_t k = 0; k < p.size(); ++k) {
        mean[k].resize(p[k]->size());
        for (std::size_t e = 0; e < p[k]->size(); ++e) {
          T sum = 0;
          for (std::size_t i = 0; i < n; ++i) sum += (*g[i][k])[e];
          mean[k][e] = sum * inv;
          norm2 += static_cast<double>(mean[k][e]) * static_cast<double>(mean[k][e]);
        }
      }
      T clip = 1;
      if (cfg.clip_norm > 0 && std::sqrt(norm2) > cfg.clip_norm) {
        clip = static_cast<T>(cfg.clip_norm / std::sqrt(norm2));
      }
      for (std::size_t k = 0; k < p.size(); ++k) {
        for (std::size_t e = 0; e < p[k]->size(); ++e) {
          T& v = (*vel[k])[e];
          v = mu * v + clip * mean[k][e];
          (*p[k])[e] -= lr * v;
        }
      }
    }
    epoch_loss /= static_cast<double>(data.size());
    if (!std::isfinite(epoch_loss)) {
      throw TrainingError("training diverged in epoch " + std::to_string(epoch),
                          static_cast<int>(epoch));
    }
    result.loss_curve.push_back(epoch_loss);
  }
  return result;
}

/// Top-1 accuracy after re-sampling every clip with `stride`.
template <Real T>
double evaluate(const ToyNet<T>& net, const std::vector<SynthSample<T>>& data,
                std::size_t stride = 1) {
  if (data.empty()) throw ConfigError("evaluate: empty dataset");
  std::vector<unsigned char> correct(data.size());
  parallel_for(data.size(), [&](std::size_t i) {
    const Tensor<T> clip = stride == 1 ? data[i].video : resample_stride(data[i].video, stride);
    correct[i] = predict(net, clip) == data[i].label;
  });
  return static_cast<double>(std::count(correct.begin(), correct.end(), 1)) /
         static_cast<double>(data.size());
}

}  // namespace tcm
