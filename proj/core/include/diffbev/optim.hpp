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
#include <vector>

#include "diffbev/tensor.hpp"

namespace diffbev {

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Adaptive-moment optimizer with decoupled weight decay:
///   p -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p).
/// Parameters without a gradient are treated as having a zero gradient.
template <typename S>
class AdamW {
 public:
  AdamW() = default;
  AdamW(std::vector<Tensor<S>> params, AdamWOptions opts);

  void step(double lr);
  void zero_grad();

  std::size_t steps() const { return steps_; }
  void set_steps(std::size_t n) { steps_ = n; }
  const AdamWOptions& options() const { return opts_; }
  std::vector<Tensor<S>>& first_moments() { return m_; }
  std::vector<Tensor<S>>& second_moments() { return v_; }
  const std::vector<Tensor<S>>& first_moments() const { return m_; }
  const std::vector<Tensor<S>>& second_moments() const { return v_; }
  const std::vector<Tensor<S>>& params() const { return params_; }

 private:
  std::vector<Tensor<S>> params_;
  std::vector<Tensor<S>> m_;
  std::vector<Tensor<S>> v_;
  AdamWOptions opts_;
  std::size_t steps_ = 0;
};

/// Learning rate at 1-based iteration `iter`: linear warmup reaching `peak`
/// at `warmup`, then linear decay reaching 0 at `total`.
double lr_at(std::size_t iter, std::size_t total, std::size_t warmup, double peak);

/// Global L2 norm of all gradients, before clipping. Gradients are scaled so
/// the norm does not exceed `max_norm`.
template <typename S>
double clip_grad_norm(std::vector<Tensor<S>>& params, double max_norm);

}  // namespace diffbev
