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
#include <functional>
#include <string>

#include "tcm/tensor.hpp"

namespace tcm {

/// Central finite-difference gradient of a scalar function:
///   (f(x + eps*e_i) - f(x - eps*e_i)) / (2*eps)  for every element i.
template <Real T>
Tensor<T> finite_diff_grad(const std::function<T(const Tensor<T>&)>& f, const Tensor<T>& x, T eps) {
  if (!(eps > T{0})) throw ConfigError("finite_diff_grad: eps must be positive");
  Tensor<T> grad(x.shape());
  Tensor<T> probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + eps;
    const T up = f(probe);
    probe[i] = x[i] - eps;
    const T down = f(probe);
    probe[i] = x[i];
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw EvaluationError("finite_diff_grad: non-finite function value at element " +
                            std::to_string(i));
    }
    grad[i] = (up - down) / (T{2} * eps);
  }
  return grad;
}

/// Largest elementwise error |a - n| / max(1, |a|, |n|): absolute below one,
/// relative above.
template <Real T>
double max_scaled_error(const Tensor<T>& analytic, const Tensor<T>& numeric) {
  if (analytic.shape() != numeric.shape()) {
    throw DimensionError("gradient shapes differ: " + to_string(analytic.shape()) + " vs " +
                         to_string(numeric.shape()));
  }
  double worst = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double a = analytic[i], n = numeric[i];
    const double denom = std::max({1.0, std::abs(a), std::abs(n)});
    worst = std::max(worst, std::abs(a - n) / denom);
  }
  return worst;
}

}  // namespace tcm
