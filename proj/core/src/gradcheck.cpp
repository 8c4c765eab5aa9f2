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

#include "diffbev/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "diffbev/error.hpp"
#include "diffbev/rng.hpp"

namespace diffbev {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

namespace {
constexpr double kStep = 1e-4;
constexpr double kFineStep = 1e-6;
}  // namespace

GradcheckReport gradcheck(const std::function<Tensor<double>()>& f, const std::vector<Tensor<double>>& params,
                          const GradcheckOptions& opts) {
  GradcheckReport report;
  report.tolerance = opts.tolerance;

  std::vector<Tensor<double>> probe = params;
  for (auto& p : probe) {
    p.zero_grad();
    p.set_requires_grad(true);
  }
  Tensor<double> loss = f();
  if (loss.numel() != 1) throw ValidationError("gradcheck: f must return a scalar");
  backward(loss);

  Rng rng(opts.seed);
  for (std::size_t pi = 0; pi < probe.size(); ++pi) {
    auto& p = probe[pi];
    const std::size_t n = p.numel();
    std::vector<double> analytic(n, 0.0);
    if (p.has_grad()) std::copy(p.grad().begin(), p.grad().end(), analytic.begin());

    std::vector<std::size_t> entries(n);
    std::iota(entries.begin(), entries.end(), std::size_t{0});
    if (opts.fraction < 1.0) {
      const auto keep = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(opts.fraction * static_cast<double>(n))));
      for (std::size_t i = 0; i < keep; ++i) std::swap(entries[i], entries[i + rng.below(n - i)]);
      entries.resize(keep);
      std::sort(entries.begin(), entries.end());
    }

    auto values = p.mutable_data();
    const auto central = [&](std::size_t idx, double rel_step) {
      const double x = values[idx];
      const double h = rel_step * std::max(1.0, std::abs(x));
      NoGradGuard guard;
      values[idx] = x + h;
      const double plus = f().item();
      values[idx] = x - h;
      const double minus = f().item();
      values[idx] = x;
      return (plus - minus) / (2.0 * h);
    };
    for (std::size_t idx : entries) {
      double numeric = central(idx, kStep);
      double err = relative_error(analytic[idx], numeric, opts.floor);
      // A ReLU kink inside the step window spoils the difference. Shrinking
      // the step moves it out while a wrong gradient still disagrees.
      if (!(err <= opts.tolerance)) {
        ++report.retried;
        numeric = central(idx, kFineStep);
        err = relative_error(analytic[idx], numeric, opts.floor);
      }
      ++report.checked;
      if (!(err <= opts.tolerance)) ++report.failures;
      if (!(err <= report.max_rel_error)) {
        report.max_rel_error = err;
        report.worst_param = pi;
        report.worst_index = idx;
        report.worst_analytic = analytic[idx];
        report.worst_numeric = numeric;
      }
    }
  }
  for (auto& p : probe) p.zero_grad();
  return report;
}

}  // namespace diffbev
