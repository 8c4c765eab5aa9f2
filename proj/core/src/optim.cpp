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

#include "diffbev/optim.hpp"

#include <cmath>

#include "diffbev/error.hpp"

namespace diffbev {

template <typename S>
AdamW<S>::AdamW(std::vector<Tensor<S>> params, AdamWOptions opts) : params_(std::move(params)), opts_(opts) {
  for (const auto& p : params_) {
    m_.push_back(Tensor<S>::zeros(p.shape()));
    v_.push_back(Tensor<S>::zeros(p.shape()));
  }
}

template <typename S>
void AdamW<S>::step(double lr) {
  ++steps_;
  const double b1 = opts_.beta1, b2 = opts_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto p = params_[i].mutable_data();
    auto m = m_[i].mutable_data();
    auto v = v_[i].mutable_data();
    const bool has_grad = params_[i].has_grad();
    const auto g = params_[i].grad();
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = has_grad ? static_cast<double>(g[j]) : 0.0;
      const double mj = b1 * static_cast<double>(m[j]) + (1.0 - b1) * gj;
      const double vj = b2 * static_cast<double>(v[j]) + (1.0 - b2) * gj * gj;
      m[j] = static_cast<S>(mj);
      v[j] = static_cast<S>(vj);
      const double update = (mj / c1) / (std::sqrt(vj / c2) + opts_.eps) + opts_.weight_decay * static_cast<double>(p[j]);
      p[j] = static_cast<S>(static_cast<double>(p[j]) - lr * update);
    }
  }
}

template <typename S>
void AdamW<S>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

double lr_at(std::size_t iter, std::size_t total, std::size_t warmup, double peak) {
  if (total == 0 || warmup >= total) throw ValidationError("lr schedule needs warmup < total");
  const double i = static_cast<double>(iter);
  if (iter <= warmup) return peak * i / static_cast<double>(warmup == 0 ? 1 : warmup);
  if (iter >= total) return 0.0;
  return peak * static_cast<double>(total - iter) / static_cast<double>(total - warmup);
}

template <typename S>
double clip_grad_norm(std::vector<Tensor<S>>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    for (const S g : p.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(sq);
  if (std::isfinite(norm) && norm > max_norm) {
    const double k = max_norm / norm;
    for (auto& p : params) {
      if (!p.has_grad()) continue;
      for (S& g : p.mutable_grad()) g = static_cast<S>(static_cast<double>(g) * k);
    }
  }
  return norm;
}

template class AdamW<float>;
template class AdamW<double>;
template double clip_grad_norm(std::vector<Tensor<float>>&, double);
template double clip_grad_norm(std::vector<Tensor<double>>&, double);

}  // namespace diffbev
