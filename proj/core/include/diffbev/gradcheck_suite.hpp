// Copyright 2026 The diffbev Authors
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

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "diffbev/gradcheck.hpp"

namespace diffbev {

struct GradcheckCase {
  std::string name;
  GradcheckReport report;
  double seconds = 0.0;
};

/// Checks every differentiable op, each layer and module, and the full
/// composed training loss of a small model against central differences in
/// 64-bit precision. `on_case` is called as each case finishes.
std::vector<GradcheckCase> run_gradcheck_suite(std::uint64_t seed = 0,
                                               const std::function<void(const GradcheckCase&)>& on_case = {});

}  // namespace diffbev
