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

// Registry of differentiable operations with small random problems, checked
// against central finite differences in 64-bit.

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "tcm/gradcheck.hpp"
#include "tcm/synth.hpp"

namespace tcm {

/// A scalar test function L(inputs) = <r, op(inputs)> with fixed random r.
struct GradProblem {
  using Build = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

  std::vector<std::string> names;
  std::vector<Tensor<double>> inputs;
  Build build;
  Tensor<double> projection;  // r, shaped like the op output

  Tensor<double> output(const std::vector<Tensor<double>>& xs) const {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (const auto& x : xs) vars.push_back(tape.constant(x));
    return build(tape, vars).value();
  }

  double loss(const std::vector<Tensor<double>>& xs) const {
    const Tensor<double> out = output(xs);
    double acc = 0;
    for (std::size_t i = 0; i < out.size(); ++i) acc += projection[i] * out[i];
    return acc;
  }

  /// Reverse-mode gradients of <seed, op(inputs)> for every input.
  std::vector<Tensor<double>> analytic(const Tensor<double>& seed) const {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (const auto& x : inputs) vars.push_back(tape.parameter(x));
    Var<double> out = build(tape, vars);
    tape.backward(out, seed);
    std::vector<Tensor<double>> grads;
    for (const auto& v : vars) grads.push_back(tape.grad(v));
    return grads;
  }

  std::vector<Tensor<double>> analytic() const { return analytic(projection); }

  Tensor<double> numeric(std::size_t which, double eps) const {
    std::vector<Tensor<double>> xs = inputs;
    return finite_diff_grad<double>(
        [&](const Tensor<double>& x) {
          xs[which] = x;
          return loss(xs);
        },
        inputs[which], eps);
  }
};

struct GradcheckEntry {
  std::string name;
  double max_error = 0;
};

struct GradcheckReport {
  std::string op;
  double tol = 0;
  std::vector<GradcheckEntry> entries;
  bool passed = false;

  double max_error() const {
    double m = 0;
    for (const auto& e : entries) m = std::max(m, e.max_error);
    return m;
  }
};

struct GradcheckOptions {
  double eps = 1e-6;
  // Fault injection: added to every element of the first input's analytic gradient.
  double corrupt = 0.0;
};

namespace detail {

using Inputs = std::vector<std::pair<std::string, Tensor<double>>>;

struct GradCase {
  Shape default_shape;
  std::function<Inputs(const Shape&, Rng&)> inputs;
  GradProblem::Build build;
};

template <template <class> class Slots>
void append_params(Inputs& in, const Slots<Tensor<double>>& params) {
  for_each_param(params, [&](const std::string& name, const Tensor<double>& t) {
    in.emplace_back(name, t);
  });
}

template <template <class> class Slots>
Slots<Var<double>> vars_from(const Slots<Tensor<double>>& layout,
                             const std::vector<Var<double>>& list, std::size_t offset) {
  Slots<Var<double>> vars;
  visit_pair(layout, vars, std::string{},
             [&](const std::string&, const Tensor<double>&, Var<double>& v) { v = list.at(offset++); });
  return vars;
}

// Random parameters with every tensor perturbed so zero-initialised members
// (biases, attention, output projection) also carry signal.
template <template <class> class Slots>
void randomise(Slots<Tensor<double>>& params, Rng& rng, double scale) {
  std::normal_distribution<double> n(0.0, scale);
  for_each_param(params, [&](const std::string&, Tensor<double>& t) {
    for (auto& v : t.values()) v = v + n(rng);
  });
}

inline TamConfig small_tam(std::size_t frames) { return TamConfig::for_frames(frames, 3); }

inline TcmConfig small_tcm(const Shape& x) {
  return TcmConfig::for_input(x.at(0), x.at(1), x.at(2), 4);
}

inline const std::map<std::string, GradCase>& grad_cases() {
  using V = std::vector<Var<double>>;
  using Tp = Tape<double>;
  static const std::map<std::string, GradCase> cases = [] {
    std::map<std::string, GradCase> m;
    auto normal = [](const Shape& s, Rng& r) { return random_normal<double>(s, r); };

    m["conv_pointwise"] = {{2, 2, 3, 3},
                           [=](const Shape& s, Rng& r) {
                             return Inputs{{"x", normal(s, r)},
                                           {"weights", normal({3, s[0]}, r)},
                                           {"bias", normal({3}, r)}};
                           },
                           [](Tp&, const V& v) { return conv_pointwise(v[0], v[1], v[2]); }};
    m["conv_depthwise_2d"] = {{2, 2, 4, 4},
                              [=](const Shape& s, Rng& r) {
                                return Inputs{{"x", normal(s, r)}, {"kernels", normal({s[0], 3, 3}, r)}};
                              },
                              [](Tp&, const V& v) { return conv_depthwise_2d(v[0], v[1]); }};
    m["conv_temporal_depthwise"] = {
        {2, 4, 3, 3},
        [=](const Shape& s, Rng& r) {
          return Inputs{{"x", normal(s, r)}, {"kernels", normal({s[0], 3}, r)}};
        },
        [](Tp&, const V& v) { return conv_temporal_depthwise(v[0], v[1]); }};
    m["sigmoid"] = {{8},
                    [=](const Shape& s, Rng& r) { return Inputs{{"x", normal(s, r)}}; },
                    [](Tp&, const V& v) { return sigmoid(v[0]); }};
    m["relu"] = {{8},
                 [=](const Shape& s, Rng& r) { return Inputs{{"x", normal(s, r)}}; },
                 [](Tp&, const V& v) { return relu(v[0]); }};
    m["add"] = {{2, 3, 2, 2},
                [=](const Shape& s, Rng& r) { return Inputs{{"a", normal(s, r)}, {"b", normal(s, r)}}; },
                [](Tp&, const V& v) { return add(v[0], v[1]); }};
    m["mul_broadcast_time"] = {
        {2, 3, 2, 2},
        [=](const Shape& s, Rng& r) { return Inputs{{"x", normal(s, r)}, {"w", normal({s[1]}, r)}}; },
        [](Tp&, const V& v) { return mul_broadcast_time(v[0], v[1]); }};
    m["gap_spatial"] = {{2, 3, 2, 2},
                        [=](const Shape& s, Rng& r) { return Inputs{{"x", normal(s, r)}}; },
                        [](Tp&, const V& v) { return gap_spatial(v[0]); }};
    m["gap_per_frame"] = {{2, 3, 2, 2},
                          [=](const Shape& s, Rng& r) { return Inputs{{"x", normal(s, r)}}; },
                          [](Tp&, const V& v) { return gap_per_frame(v[0]); }};
    m["mean_time_unordered"] = {{3, 4},
                                [=](const Shape& s, Rng& r) { return Inputs{{"x", normal(s, r)}}; },
                                [](Tp&, const V& v) { return mean_time_unordered(v[0]); }};
    m["avg_pool2"] = {{2, 2, 4, 4},
                      [=](const Shape& s, Rng& r) { return Inputs{{"x", normal(s, r)}}; },
                      [](Tp&, const V& v) { return avg_pool2(v[0]); }};
    m["softmax_last"] = {{2, 5},
                         [=](const Shape& s, Rng& r) { return Inputs{{"x", normal(s, r)}}; },
                         [](Tp&, const V& v) { return softmax_last(v[0]); }};
    m["conv1d_same"] = {{6},
                        [=](const Shape& s, Rng& r) { return Inputs{{"v", normal(s, r)}, {"w", normal({3}, r)}}; },
                        [](Tp&, const V& v) { return conv1d_same(v[0], v[1]); }};
    m["band_matvec"] = {
        {6},
        [=](const Shape& s, Rng& r) { return Inputs{{"v", normal(s, r)}, {"w", normal({s[0], 3}, r)}}; },
        [](Tp&, const V& v) { return band_matvec(v[0], v[1]); }};
    m["matvec"] = {
        {5},
        [=](const Shape& s, Rng& r) { return Inputs{{"v", normal(s, r)}, {"w", normal({s[0], s[0]}, r)}}; },
        [](Tp&, const V& v) { return matvec(v[0], v[1]); }};
    m["dense"] = {{6},
                  [=](const Shape& s, Rng& r) {
                    return Inputs{{"x", normal(s, r)}, {"w", normal({3, s[0]}, r)}, {"b", normal({3}, r)}};
                  },
                  [](Tp&, const V& v) { return dense(v[0], v[1], v[2]); }};
    m["softmax_cross_entropy"] = {{4},
                                  [=](const Shape& s, Rng& r) { return Inputs{{"logits", normal(s, r)}}; },
                                  [](Tp&, const V& v) { return softmax_cross_entropy(v[0], 1); }};
    m["concat_channels"] = {
        {2, 2, 2, 2},
        [=](const Shape& s, Rng& r) {
          Shape sb = s;
          sb[0] = 1;
          return Inputs{{"a", normal(s, r)}, {"b", normal(sb, r)}};
        },
        [](Tp&, const V& v) { return concat_channels(v[0], v[1]); }};
    m["correlate"] = {{3, 4, 4},
                      [=](const Shape& s, Rng& r) { return Inputs{{"a", normal(s, r)}, {"b", normal(s, r)}}; },
                      [](Tp&, const V& v) { return correlate(v[0], v[1], 2); }};
    m["correlate_pairs"] = {{2, 3, 4, 4},
                            [=](const Shape& s, Rng& r) { return Inputs{{"feats", normal(s, r)}}; },
                            [](Tp&, const V& v) {
                              const PairSpec p = build_pairs(v[0].value().dim(1));
                              return concat_channels(correlate_frames(v[0], p.fast, 1),
                                                     correlate_frames(v[0], p.slow, 1));
                            }};
    // Scores scaled so the temperature-0.01 softmax is not saturated.
    m["kernel_soft_argmax"] = {{2, 25, 3, 3},
                               [=](const Shape& s, Rng& r) {
                                 return Inputs{{"volume", random_normal<double>(s, r, 0.1)}};
                               },
                               [](Tp&, const V& v) { return match_volume(v[0], MatchConfig{}); }};
    m["estimate_displacements"] = {
        {2, 9, 3, 3},
        [=](const Shape& s, Rng& r) {
          return Inputs{{"fast", random_normal<double>(s, r, 0.1)},
                        {"slow", random_normal<double>(s, r, 0.1)}};
        },
        [](Tp&, const V& v) { return estimate_displacements(v[0], v[1], MatchConfig{}); }};
    m["transform_displacements"] = {
        {6, 2, 4, 4},
        [=](const Shape& s, Rng& r) {
          auto p = init_tam<double>(small_tam(s[1]), r);
          randomise<TamSlots>(p, r, 0.1);
          Inputs in{{"d", normal(s, r)}};
          append_params<TamSlots>(in, p);
          return in;
        },
        [](Tp&, const V& v) {
          Rng layout_rng(0);
          auto layout = init_tam<double>(small_tam(v[0].value().dim(1)), layout_rng);
          return transform_displacements(v[0], vars_from<TamSlots>(layout, v, 1));
        }};
    m["temporal_attention"] = {
        {3, 4, 2, 2},
        [=](const Shape& s, Rng& r) {
          return Inputs{{"features", normal(s, r)}, {"weights", normal({kernel_size_for(s[1])}, r)}};
        },
        [](Tp&, const V& v) { return temporal_attention(v[0], v[1], AttentionMode::shared); }};
    m["tam"] = {
        {6, 3, 4, 4},
        [=](const Shape& s, Rng& r) {
          auto p = init_tam<double>(small_tam(s[1]), r);
          randomise<TamSlots>(p, r, 0.1);
          Inputs in{{"d", normal(s, r)}};
          append_params<TamSlots>(in, p);
          return in;
        },
        [](Tp&, const V& v) {
          Rng layout_rng(0);
          auto layout = init_tam<double>(small_tam(v[0].value().dim(1)), layout_rng);
          const auto tv = vars_from<TamSlots>(layout, v, 1);
          Var<double> f = transform_displacements(v[0], tv);
          return apply_attention(f, temporal_attention(f, tv.attention, AttentionMode::shared));
        }};
    m["tcm_forward"] = {
        {4, 3, 5, 5},
        [=](const Shape& s, Rng& r) {
          auto p = init_tcm<double>(small_tcm(s), r);
          randomise<TcmSlots>(p, r, 0.1);
          Inputs in{{"x", normal(s, r)}};
          append_params<TcmSlots>(in, p);
          return in;
        },
        [](Tp&, const V& v) {
          const TcmConfig cfg = small_tcm(v[0].shape());
          Rng layout_rng(0);
          auto layout = init_tcm<double>(cfg, layout_rng);
          return tcm_forward(v[0], vars_from<TcmSlots>(layout, v, 1), cfg);
        }};
    return m;
  }();
  return cases;
}

}  // namespace detail

inline std::vector<std::string> gradcheck_op_names() {
  std::vector<std::string> names;
  for (const auto& [name, c] : detail::grad_cases()) names.push_back(name);
  return names;
}

/// Random problem for `op`. `shape` overrides the primary input shape.
inline GradProblem make_grad_problem(const std::string& op, std::uint64_t seed,
                                     const Shape* shape = nullptr) {
  const auto& cases = detail::grad_cases();
  const auto it = cases.find(op);
  if (it == cases.end()) throw LookupError("unknown op '" + op + "'");
  Rng rng(seed);
  const auto inputs = it->second.inputs(shape ? *shape : it->second.default_shape, rng);
  GradProblem p;
  for (const auto& [name, t] : inputs) {
    p.names.push_back(name);
    p.inputs.push_back(t);
  }
  p.build = it->second.build;
  p.projection = random_normal<double>(p.output(p.inputs).shape(), rng);
  return p;
}

/// Compares reverse-mode gradients of every input against finite
/// differences. Passes iff every per-input maximum scaled error is <= tol.
inline GradcheckReport gradcheck(const std::string& op, const std::vector<Shape>& shapes,
                                 std::uint64_t seed, double tol, const GradcheckOptions& opt = {}) {
  const GradProblem p = make_grad_problem(op, seed, shapes.empty() ? nullptr : &shapes.front());
  std::size_t elements = 0;
  for (const auto& x : p.inputs) elements += x.size();
  if (elements > 4096) {
    throw ConfigError("gradcheck: " + std::to_string(elements) + " input elements exceed 4096");
  }
  std::vector<Tensor<double>> analytic = p.analytic();
  if (opt.corrupt != 0.0) {
    for (auto& v : analytic.front().values()) v += opt.corrupt;
  }
  GradcheckReport report{op, tol, {}, true};
  for (std::size_t i = 0; i < p.inputs.size(); ++i) {
    const double err = max_scaled_error(analytic[i], p.numeric(i, opt.eps));
    report.entries.push_back({p.names[i], err});
    report.passed = report.passed && err <= tol;
  }
  return report;
}

}  // namespace tcm
