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

#include "diffbev/losses.hpp"

#include <algorithm>
#include <cmath>

#include "diffbev/error.hpp"
#include "diffbev/ops.hpp"

namespace diffbev {

void LossWeights::validate(std::size_t classes) const {
  if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0)) throw ValidationError("loss weights: lambda1 and lambda2 must be >= 0");
  if (class_weights.size() != classes) {
    throw ValidationError("loss weights: " + std::to_string(class_weights.size()) + " class weights for " +
                          std::to_string(classes) + " classes");
  }
  for (double w : class_weights) {
    if (!(w > 0.0) || !std::isfinite(w)) throw ValidationError("loss weights: class weights must be positive");
  }
}

std::vector<double> class_weights_from_counts(const std::vector<double>& positives, double valid_cells) {
  constexpr double kLo = 0.1, kHi = 10.0;
  if (positives.empty() || !(valid_cells > 0.0)) return std::vector<double>(positives.size(), 1.0);
  std::vector<double> w(positives.size(), kHi);
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < positives.size(); ++c) {
    if (positives[c] > 0.0) {
      w[c] = valid_cells / positives[c];
      sum += w[c];
      ++present;
    }
  }
  const double mean = present ? sum / static_cast<double>(present) : 1.0;
  for (std::size_t c = 0; c < positives.size(); ++c) {
    if (positives[c] > 0.0) w[c] = std::clamp(w[c] / mean, kLo, kHi);
  }
  return w;
}

namespace {

template <typename S>
void require_shape(const Tensor<S>& t, const Shape& shape, const char* what) {
  if (t.shape() != shape) {
    throw ValidationError(std::string(what) + ": expected " + to_string(shape) + ", got " + to_string(t.shape()));
  }
}

template <typename S>
std::vector<char> binarize(const Tensor<S>& t) {
  std::vector<char> out(t.numel());
  const auto d = t.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = d[i] > S(0.5);
  return out;
}

double sigmoid_of(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

template <typename S>
Tensor<S> loss_wce(const Tensor<S>& logits, const Tensor<S>& labels, const Tensor<S>& valid_mask,
                   const std::vector<double>& class_weights) {
  if (logits.rank() != 3) throw ValidationError("loss_wce: logits must be [M, H, W], got " + to_string(logits.shape()));
  const std::size_t m = logits.dim(0), plane = logits.dim(1) * logits.dim(2);
  require_shape(labels, logits.shape(), "loss_wce labels");
  require_shape(valid_mask, Shape{logits.dim(1), logits.dim(2)}, "loss_wce valid_mask");
  if (class_weights.size() != m) throw ValidationError("loss_wce: class weight count does not match logits");

  const auto z = logits.data();
  auto y = binarize(labels);
  auto mask = binarize(valid_mask);
  const double valid = static_cast<double>(std::count(mask.begin(), mask.end(), 1));

  std::vector<double> scale(m, 0.0);
  double total = 0.0;
  for (std::size_t c = 0; c < m; ++c) {
    double n_pos = 0.0;
    for (std::size_t i = 0; i < plane; ++i) n_pos += mask[i] && y[c * plane + i];
    const double norm = n_pos > 0.0 ? n_pos : valid;
    if (norm == 0.0) continue;
    scale[c] = class_weights[c] / norm;
    double acc = 0.0;
    for (std::size_t i = 0; i < plane; ++i) {
      if (!mask[i]) continue;
      const double p = sigmoid_of(static_cast<double>(z[c * plane + i]));
      acc -= y[c * plane + i] ? std::log(std::max(p, kLogClamp)) : std::log(std::max(1.0 - p, kLogClamp));
    }
    total += scale[c] * acc;
  }

  return make_result<S>(
      Shape{1}, {static_cast<S>(total)}, {logits},
      [scale = std::move(scale), y = std::move(y), mask = std::move(mask), plane](detail::Node<S>& self) {
        auto& nz = *self.inputs[0];
        if (!nz.requires_grad) return;
        auto g = nz.grad_buffer();
        const double up = static_cast<double>(self.grad[0]);
        for (std::size_t c = 0; c < scale.size(); ++c) {
          if (scale[c] == 0.0) continue;
          for (std::size_t i = 0; i < plane; ++i) {
            const std::size_t k = c * plane + i;
            if (!mask[i]) continue;
            const double p = sigmoid_of(static_cast<double>(nz.data[k]));
            double d = 0.0;
            if (y[k]) {
              if (p > kLogClamp) d = -(1.0 - p);
            } else if (1.0 - p > kLogClamp) {
              d = p;
            }
            g[k] += static_cast<S>(up * scale[c] * d);
          }
        }
      });
}

template <typename S>
Tensor<S> loss_depth(const Tensor<S>& depth, const Tensor<S>& target, const Tensor<S>& valid_mask) {
  if (depth.rank() != 3) throw ValidationError("loss_depth: depth must be [bins, h, w], got " + to_string(depth.shape()));
  const std::size_t bins = depth.dim(0), plane = depth.dim(1) * depth.dim(2);
  require_shape(target, depth.shape(), "loss_depth target");
  require_shape(valid_mask, Shape{depth.dim(1), depth.dim(2)}, "loss_depth valid_mask");
  auto y = binarize(target);
  auto mask = binarize(valid_mask);
  const double entries = static_cast<double>(std::count(mask.begin(), mask.end(), 1)) * static_cast<double>(bins);

  const auto d = depth.data();
  double total = 0.0;
  if (entries > 0.0) {
    for (std::size_t b = 0; b < bins; ++b) {
      for (std::size_t i = 0; i < plane; ++i) {
        if (!mask[i]) continue;
        const double p = static_cast<double>(d[b * plane + i]);
        total -= y[b * plane + i] ? std::log(std::max(p, kLogClamp)) : std::log(std::max(1.0 - p, kLogClamp));
      }
    }
    total /= entries;
  }
  return make_result<S>(
      Shape{1}, {static_cast<S>(total)}, {depth},
      [y = std::move(y), mask = std::move(mask), entries, plane](detail::Node<S>& self) {
        auto& nd = *self.inputs[0];
        if (!nd.requires_grad || entries == 0.0) return;
        auto g = nd.grad_buffer();
        const double up = static_cast<double>(self.grad[0]) / entries;
        for (std::size_t k = 0; k < nd.data.size(); ++k) {
          if (!mask[k % plane]) continue;
          const double p = static_cast<double>(nd.data[k]);
          double dp = 0.0;
          if (y[k]) {
            if (p > kLogClamp) dp = -1.0 / p;
          } else if (1.0 - p > kLogClamp) {
            dp = 1.0 / (1.0 - p);
          }
          g[k] += static_cast<S>(up * dp);
        }
      });
}

template <typename S>
Tensor<S> loss_diff(const Tensor<S>& eps_true, const Tensor<S>& eps_hat) {
  if (eps_true.shape() != eps_hat.shape()) {
    throw ValidationError("loss_diff: " + to_string(eps_true.shape()) + " vs " + to_string(eps_hat.shape()));
  }
  auto r = sub(eps_hat, eps_true);
  return reduce_mean(mul(r, r));
}

template <typename S>
LossParts<S> loss_total(const Tensor<S>& wce, const Tensor<S>& depth, const Tensor<S>& diff,
                        const LossWeights& weights) {
  const std::pair<const char*, const Tensor<S>*> parts[] = {{"l_wce", &wce}, {"l_depth", &depth}, {"l_diff", &diff}};
  for (const auto& [name, t] : parts) {
    if (t->numel() != 1) throw ValidationError(std::string("loss_total: ") + name + " is not a scalar");
    if (!std::isfinite(static_cast<double>(t->item()))) {
      throw NumericalError(std::string("non-finite ") + name + " = " + std::to_string(t->item()));
    }
  }
  LossParts<S> out{wce, depth, diff, {}};
  out.total = add(add(wce, scale(depth, static_cast<S>(weights.lambda1))), scale(diff, static_cast<S>(weights.lambda2)));
  return out;
}

#define DIFFBEV_INSTANTIATE_LOSSES(S)                                                                                \
  template Tensor<S> loss_wce(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, const std::vector<double>&);  \
  template Tensor<S> loss_depth(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);                            \
  template Tensor<S> loss_diff(const Tensor<S>&, const Tensor<S>&);                                               \
  template LossParts<S> loss_total(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, const LossWeights&);

DIFFBEV_INSTANTIATE_LOSSES(float)
DIFFBEV_INSTANTIATE_LOSSES(double)

}  // namespace diffbev
