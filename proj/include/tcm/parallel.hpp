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
#include <atomic>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

#include "tcm/errors.hpp"

namespace tcm {

namespace detail {
inline std::atomic<std::size_t>& thread_setting() {
  static std::atomic<std::size_t> n{std::max(1u, std::thread::hardware_concurrency())};
  return n;
}
}  // namespace detail

inline std::size_t thread_count() { return detail::thread_setting().load(); }

inline void set_thread_count(std::size_t n) {
  if (n == 0) throw ConfigError("thread count must be positive");
  detail::thread_setting().store(n);
}

/// Runs f(i) for i in [0, n) on up to thread_count() threads. Indices are
/// split into contiguous blocks; callers write results by index, so output
/// does not depend on the thread count. The first exception is rethrown.
template <class F>
void parallel_for(std::size_t n, F&& f) {
  const std::size_t workers = std::min(thread_count(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      const std::size_t lo = n * w / workers, hi = n * (w + 1) / workers;
      try {
        for (std::size_t i = lo; i < hi; ++i) f(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace tcm
