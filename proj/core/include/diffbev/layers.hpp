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
#include <string>
#include <vector>

#include "diffbev/ops.hpp"
#include "diffbev/rng.hpp"
#include "diffbev/tensor.hpp"

namespace diffbev {

template <typename S>
struct NamedTensor {
  std::string name;
  Tensor<S> tensor;
};

/// Trainable parameters and persistent buffers (running statistics) of a
/// model, in a fixed registration order.
template <typename S>
struct ParamSet {
  std::vector<NamedTensor<S>> params;
  std::vector<NamedTensor<S>> buffers;

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params) n += p.tensor.numel();
    return n;
  }
  std::vector<Tensor<S>> param_tensors() const {
    std::vector<Tensor<S>> out;
    for (const auto& p : params) out.push_back(p.tensor);
    return out;
  }
};

/// Forward-pass switches shared by every layer of a model.
struct Mode {
  bool training = true;
  bool update_running = true;

  NormOptions norm() const {
    NormOptions o;
    o.training = training;
    o.update_running = training && update_running;
    return o;
  }
};

inline constexpr double kReluGain = 1.4142135623730951;

/// Weight init: U(-b, b) with b = gain * sqrt(3 / fan_in). The default ReLU
/// gain gives b = sqrt(6 / fan_in) (Kaiming uniform); gain 1 preserves the
/// variance of linear maps.
template <typename S>
Tensor<S> kaiming_uniform(const Shape& shape, std::size_t fan_in, Rng& rng, double gain = kReluGain);

/// Counts multiply-accumulates of the ops executed during a forward pass.
/// Layers add to it when a counter is installed on the current thread.
class MacCounter {
 public:
  MacCounter();
  ~MacCounter();
  MacCounter(const MacCounter&) = delete;
  MacCounter& operator=(const MacCounter&) = delete;

  std::size_t total() const { return total_; }
  static void add(std::size_t macs);

 private:
  std::size_t total_ = 0;
  MacCounter* previous_;
};

template <typename S>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, Rng& rng, bool with_bias = true);

  Tensor<S> operator()(const Tensor<S>& x) const;
  void collect(ParamSet<S>& set, const std::string& prefix) const;

  std::size_t in_channels() const { return weight.dim(1); }
  std::size_t out_channels() const { return weight.dim(0); }

  Tensor<S> weight;
  Tensor<S> bias;
};

/// y = x W + b on row vectors; x is [n, in].
template <typename S>
class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias = true, double gain = kReluGain);

  Tensor<S> operator()(const Tensor<S>& x) const;
  void collect(ParamSet<S>& set, const std::string& prefix) const;

  Tensor<S> weight;
  Tensor<S> bias;
};

template <typename S>
class ChannelNorm {
 public:
  ChannelNorm() = default;
  explicit ChannelNorm(std::size_t channels);

  Tensor<S> operator()(const Tensor<S>& x, const Mode& mode);
  /// Normalizes same-shaped samples with statistics pooled over the batch.
  std::vector<Tensor<S>> operator()(const std::vector<Tensor<S>>& xs, const Mode& mode);
  void collect(ParamSet<S>& set, const std::string& prefix) const;

  Tensor<S> gamma;
  Tensor<S> beta;
  Tensor<S> running_mean;
  Tensor<S> running_var;
};

/// 3x3 conv -> channel norm -> ReLU.
template <typename S>
class ConvBlock {
 public:
  ConvBlock() = default;
  ConvBlock(std::size_t in_ch, std::size_t out_ch, Rng& rng);

  Tensor<S> operator()(const Tensor<S>& x, const Mode& mode);
  std::vector<Tensor<S>> operator()(const std::vector<Tensor<S>>& xs, const Mode& mode);
  void collect(ParamSet<S>& set, const std::string& prefix) const;

  Conv2d<S> conv;
  ChannelNorm<S> norm;
};

/// softmax(Q K^T / sqrt(d_k)) V over token matrices Q [n,d_k], K [m,d_k],
/// V [m,d_v]. When `weights_out` is non-null it receives the [n,m] weights.
template <typename S>
Tensor<S> scaled_dot_attention(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v,
                               Tensor<S>* weights_out = nullptr);

}  // namespace diffbev
