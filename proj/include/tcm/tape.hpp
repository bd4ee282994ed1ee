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

#include <deque>
#include <functional>
#include <initializer_list>
#include <string>

#include "tcm/tensor.hpp"

namespace tcm {

template <Real T>
class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
/// owning tape is alive and has not been cleared.
template <Real T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  bool valid() const noexcept { return tape_ != nullptr; }
  Tape<T>& tape() const {
    if (!tape_) throw StateError("Var is not attached to a tape");
    return *tape_;
  }
  std::size_t id() const noexcept { return id_; }
  const Tensor<T>& value() const { return tape().value(*this); }
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return tape().requires_grad(*this); }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode gradient tape.
///
/// Every primitive records its output value together with a closure that,
/// given the gradient of that output, adds its contribution into the
/// gradients of its parents. backward() replays the closures in exact reverse
/// recording order; gradients from several consumers are summed.
template <Real T>
class Tape {
 public:
  /// Receives the output gradient and pushes contributions to parents via grad_sink().
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value) { return push(std::move(value), false, nullptr); }
  Var<T> parameter(Tensor<T> value) { return push(std::move(value), true, nullptr); }

  /// Records the result of a primitive. The backward closure is kept only if
  /// at least one parent requires a gradient.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> parents, BackwardFn backward) {
    bool needs_grad = false;
#ifndef NDEBUG
    bool inputs_finite = true;
#endif
    for (const auto& p : parents) {
      check_owned(p);
      needs_grad = needs_grad || nodes_[p.id()].requires_grad;
#ifndef NDEBUG
      inputs_finite = inputs_finite && nodes_[p.id()].value.all_finite();
#endif
    }
#ifndef NDEBUG
    if (inputs_finite && !value.all_finite()) {
      throw EvaluationError("non-finite output from finite inputs at tape node " +
                            std::to_string(nodes_.size()));
    }
#endif
    return push(std::move(value), needs_grad, needs_grad ? std::move(backward) : nullptr);
  }

  const Tensor<T>& value(const Var<T>& v) const {
    check_owned(v);
    return nodes_[v.id()].value;
  }

  bool requires_grad(const Var<T>& v) const {
    check_owned(v);
    return nodes_[v.id()].requires_grad;
  }

  /// Gradient accumulator of `v`, zero-initialised on first use; nullptr when
  /// `v` does not require a gradient.
  Tensor<T>* grad_sink(const Var<T>& v) {
    check_owned(v);
    Node& n = nodes_[v.id()];
    if (!n.requires_grad) return nullptr;
    if (n.grad.empty()) n.grad = Tensor<T>::zeros_like(n.value);
    return &n.grad;
  }

  /// Propagates `seed` (the gradient of some scalar w.r.t. `out`) back to every
  /// node that requires a gradient.
  void backward(const Var<T>& out, const Tensor<T>& seed) {
    check_owned(out);
    if (seed.shape() != nodes_[out.id()].value.shape()) {
      throw DimensionError("backward seed shape " + to_string(seed.shape()) +
                           " does not match output shape " +
                           to_string(nodes_[out.id()].value.shape()));
    }
    if (Tensor<T>* g = grad_sink(out)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += seed[i];
    }
    for (std::size_t id = out.id() + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (n.backward && !n.grad.empty()) {
        n.backward(*this, n.grad);
      }
    }
    backward_done_ = true;
  }

  /// backward() with a seed of ones.
  void backward(const Var<T>& out) {
    backward(out, Tensor<T>(value(out).shape(), T{1}));
  }

  /// Gradient of the last backward pass w.r.t. `v` (zeros if nothing reached it).
  Tensor<T> grad(const Var<T>& v) const {
    if (!backward_done_) throw StateError("gradient requested before backward()");
    check_owned(v);
    const Node& n = nodes_[v.id()];
    return n.grad.empty() ? Tensor<T>::zeros_like(n.value) : n.grad;
  }

  bool has_backward() const noexcept { return backward_done_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  void clear() {
    nodes_.clear();
    backward_done_ = false;
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var<T> push(Tensor<T> value, bool requires_grad, BackwardFn backward) {
    nodes_.push_back(Node{std::move(value), {}, requires_grad, std::move(backward)});
    return Var<T>(this, nodes_.size() - 1);
  }

  void check_owned(const Var<T>& v) const {
    if (&v.tape() != this || v.id() >= nodes_.size()) {
      throw StateError("Var does not belong to this tape");
    }
  }

  std::deque<Node> nodes_;
  bool backward_done_ = false;
};

}  // namespace tcm
