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

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "diffbev/tensor.hpp"

namespace diffbev {

struct GradcheckOptions {
  double tolerance = 1e-3;
  /// Fraction of each parameter's entries to probe (at least one per tensor).
  double fraction = 1.0;
  std::uint64_t seed = 0;
  /// Denominator floor of the relative error, so entries whose analytic and
  /// numeric values are both ~0 compare on an absolute scale.
  double floor = 1e-6;
};

struct GradcheckReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t failures = 0;
  /// Entries re-probed with a finer step after a coarse-step mismatch.
  std::size_t retried = 0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  double tolerance = 0.0;

  bool passed() const { return failures == 0; }
};

/// Compares reverse-mode gradients of a scalar computation against central
/// differences (f(x+h) - f(x-h)) / 2h with h = 1e-4 * max(1, |x|).
/// `f` is re-evaluated for every probe and must be deterministic.
GradcheckReport gradcheck(const std::function<Tensor<double>()>& f, const std::vector<Tensor<double>>& params,
                          const GradcheckOptions& opts = {});

double relative_error(double analytic, double numeric, double floor);

}  // namespace diffbev
