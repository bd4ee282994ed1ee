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

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "tcm/errors.hpp"

namespace tcm {

using Shape = std::vector<std::size_t>;

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

inline std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

template <typename T>
concept Real = std::is_same_v<T, float> || std::is_same_v<T, double>;

/// Dense row-major tensor (last index fastest). Activations use the C,T,H,W
/// layout throughout the library.
///
/// A default-constructed tensor is empty: it has rank 0 and no storage. Any
/// tensor built from a shape has every extent >= 1.
template <Real T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{0}) : shape_(std::move(shape)) {
    validate_shape(shape_);
    data_.assign(element_count(shape_), fill);
  }

  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape(shape_);
    if (data_.size() != element_count(shape_)) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + tcm::to_string(shape_));
    }
  }

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  template <typename... I>
  T& at(I... idx) {
    return data_[offset(idx...)];
  }
  template <typename... I>
  const T& at(I... idx) const {
    return data_[offset(idx...)];
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  Tensor reshaped(Shape shape) const {
    Tensor out;
    out.shape_ = std::move(shape);
    validate_shape(out.shape_);
    if (element_count(out.shape_) != data_.size()) {
      throw DimensionError("cannot reshape " + tcm::to_string(shape_) + " to " +
                           tcm::to_string(out.shape_));
    }
    out.data_ = data_;
    return out;
  }

  template <Real U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  static void validate_shape(const Shape& shape) {
    if (shape.empty()) throw DimensionError("tensor shape must have at least one axis");
    for (std::size_t e : shape) {
      if (e == 0) throw DimensionError("tensor extent 0 in shape " + tcm::to_string(shape));
    }
  }

  template <typename... I>
  std::size_t offset(I... idx) const {
    const std::size_t ids[] = {static_cast<std::size_t>(idx)...};
    std::size_t off = 0;
    for (std::size_t i = 0; i < sizeof...(I); ++i) off = off * shape_[i] + ids[i];
    return off;
  }

  Shape shape_;
  std::vector<T> data_;
};

/// Throws DimensionError unless `t` has exactly `rank` axes.
template <Real T>
void require_rank(const Tensor<T>& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(what) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + to_string(t.shape()));
  }
}

template <Real T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("max_abs_diff: shapes " + to_string(a.shape()) + " and " +
                         to_string(b.shape()));
  }
  T m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Seed derivation (splitmix64) so every consumer of a run seed gets an
// independent, reproducible stream.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

using Rng = std::mt19937_64;

template <Real T>
Tensor<T> random_normal(Shape shape, Rng& rng, T stddev = T{1}) {
  Tensor<T> t(std::move(shape));
  std::normal_distribution<double> dist(0.0, static_cast<double>(stddev));
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
  return t;
}

template <Real T>
Tensor<T> random_uniform(Shape shape, Rng& rng, T lo, T hi) {
  Tensor<T> t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
  return t;
}

/// He-uniform initialisation: U(-sqrt(6/fan_in), sqrt(6/fan_in)).
template <Real T>
Tensor<T> he_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  return random_uniform<T>(std::move(shape), rng, static_cast<T>(-bound), static_cast<T>(bound));
}

}  // namespace tcm
