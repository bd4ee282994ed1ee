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

#include <stdexcept>
#include <string>

namespace tcm {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible extents or ranks.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid hyper-parameter or configuration value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Non-finite value produced or consumed where a finite one is required.
class EvaluationError : public Error {
 public:
  using Error::Error;
};

// Operation invoked on an object in the wrong state (e.g. backward without a forward).
class StateError : public Error {
 public:
  using Error::Error;
};

class LookupError : public Error {
 public:
  using Error::Error;
};

// Malformed file contents or I/O failure.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Training diverged.
class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, int epoch) : Error(what), epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

}  // namespace tcm
