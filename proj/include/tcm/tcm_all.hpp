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

#include "tcm/bundle.hpp"
#include "tcm/correlation.hpp"
#include "tcm/gradcheck.hpp"
#include "tcm/gradcheck_suite.hpp"
#include "tcm/match.hpp"
#include "tcm/model_io.hpp"
#include "tcm/ops.hpp"
#include "tcm/parallel.hpp"
#include "tcm/sampling.hpp"
#include "tcm/synth.hpp"
#include "tcm/tam.hpp"
#include "tcm/tape.hpp"
#include "tcm/tcm.hpp"
#include "tcm/tensor.hpp"
#include "tcm/tsr_io.hpp"
