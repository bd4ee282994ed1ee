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

// Parameter sets are declared once as slot templates (e.g. TamSlots<Slot>)
// and instantiated both with Tensor<T> (values, gradients, momentum) and with
// Var<T> (the same parameters bound to a tape). Every slot template provides
//
//   template <class A, class B, class F>
//   void visit_pair(A& a, B& b, const std::string& prefix, F&& f);
//
// which calls f(name, a.member, b.member) for every member in a fixed order.

#include <string>
#include <utility>
#include <vector>

#include "tcm/tape.hpp"

namespace tcm {

/// Calls f(name, tensor) for every parameter of `p`.
template <class P, class F>
void for_each_param(P& p, F&& f) {
  visit_pair(p, p, std::string{}, [&](const std::string& name, auto& x, auto&) { f(name, x); });
}

/// Binds parameter values to a tape, as trainable leaves or as constants.
template <template <class> class Slots, Real T>
Slots<Var<T>> bind(Tape<T>& tape, const Slots<Tensor<T>>& params, bool trainable) {
  Slots<Var<T>> vars;
  visit_pair(params, vars, std::string{},
             [&](const std::string&, const Tensor<T>& value, Var<T>& var) {
               var = trainable ? tape.parameter(value) : tape.constant(value);
             });
  return vars;
}

/// Gradients of bound parameters after Tape::backward, in parameter layout.
template <template <class> class Slots, Real T>
Slots<Tensor<T>> gradients(const Tape<T>& tape, const Slots<Var<T>>& vars) {
  Slots<Tensor<T>> grads;
  visit_pair(vars, grads, std::string{},
             [&](const std::string&, const Var<T>& var, Tensor<T>& g) { g = tape.grad(var); });
  return grads;
}

/// Zero tensors shaped like `params`.
template <template <class> class Slots, Real T>
Slots<Tensor<T>> zeros_like(const Slots<Tensor<T>>& params) {
  Slots<Tensor<T>> z;
  visit_pair(params, z, std::string{}, [](const std::string&, const Tensor<T>& v, Tensor<T>& out) {
    out = Tensor<T>::zeros_like(v);
  });
  return z;
}

/// Flat list of (name, element count), in visit order.
template <class P>
std::vector<std::pair<std::string, std::size_t>> param_census(const P& params) {
  std::vector<std::pair<std::string, std::size_t>> table;
  for_each_param(params, [&](const std::string& name, const auto& t) {
    table.emplace_back(name, t.size());
  });
  return table;
}

inline std::size_t census_total(const std::vector<std::pair<std::string, std::size_t>>& table) {
  std::size_t total = 0;
  for (const auto& [name, n] : table) total += n;
  return total;
}

inline std::string join_name(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

}  // namespace tcm
