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

#include <cstddef>
#include <string>
#include <vector>

#include "tcm/errors.hpp"

namespace tcm {

/// Ordered frame pair (from < to).
struct FramePair {
  std::size_t from;
  std::size_t to;

  std::size_t span() const noexcept { return to - from; }
  friend bool operator==(const FramePair&, const FramePair&) = default;
};

/// Fast- and slow-tempo pair schedules for a clip of `frames` frames. Both
/// lists hold frames-1 entries, one per source frame 0..frames-2.
struct PairSpec {
  std::size_t frames = 0;
  std::vector<FramePair> fast;  // (t, t+1)
  std::vector<FramePair> slow;  // (t, frames-1)
};

/// Adjacent pairs capture the shortest temporal scale; pairing every frame with
/// the final frame gives each frame its longest forward span.
inline PairSpec build_pairs(std::size_t frames) {
  if (frames < 2) {
    throw ConfigError("need at least two frames to form pairs, got " + std::to_string(frames));
  }
  PairSpec spec;
  spec.frames = frames;
  spec.fast.reserve(frames - 1);
  spec.slow.reserve(frames - 1);
  for (std::size_t t = 0; t + 1 < frames; ++t) {
    spec.fast.push_back({t, t + 1});
    spec.slow.push_back({t, frames - 1});
  }
  return spec;
}

}  // namespace tcm
