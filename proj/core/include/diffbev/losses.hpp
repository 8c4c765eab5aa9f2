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

/// Probabilities are clamped to [kLogClamp, 1] inside every log; the clamped
/// branch carries no gradient.
inline constexpr double kLogClamp = 1e-7;

struct LossWeights {
  double lambda1 = 10.0;  // depth
  double lambda2 = 1.0;   // diffusion
  std::vector<double> class_weights;

  void validate(std::size_t classes) const;
};

/// Inverse positive frequency per class, normalized to mean 1 and clamped to
/// [0.1, 10]. Classes with no positives get the upper clamp.
std::vector<double> class_weights_from_counts(const std::vector<double>& positives, double valid_cells);

/// Class-weighted binary cross entropy on sigmoid(logits). Per class c the
/// summed positive and negative terms are scaled by w_c / N_pos_c; a class
/// with no positives uses its negative term over the valid cell count.
/// logits, labels: [M, H, W]; valid_mask: [H, W] of 0/1.
template <typename S>
Tensor<S> loss_wce(const Tensor<S>& logits, const Tensor<S>& labels, const Tensor<S>& valid_mask,
                   const std::vector<double>& class_weights);

/// Mean bin-wise binary cross entropy between depth probabilities and a
/// one-hot target, over (bin, valid pixel) entries. depth, target:
/// [bins, h, w]; valid_mask: [h, w]. No valid pixels gives 0.
template <typename S>
Tensor<S> loss_depth(const Tensor<S>& depth, const Tensor<S>& target, const Tensor<S>& valid_mask);

/// Mean squared error.
template <typename S>
Tensor<S> loss_diff(const Tensor<S>& eps_true, const Tensor<S>& eps_hat);

template <typename S>
struct LossParts {
  Tensor<S> wce;
  Tensor<S> depth;
  Tensor<S> diff;
  Tensor<S> total;
};

/// wce + lambda1 * depth + lambda2 * diff. Throws NumericalError naming the
/// first non-finite component.
template <typename S>
LossParts<S> loss_total(const Tensor<S>& wce, const Tensor<S>& depth, const Tensor<S>& diff,
                        const LossWeights& weights);

}  // namespace diffbev
