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

#include "diffbev/layers.hpp"

namespace diffbev {

enum class FusionMode { kCrossAttention, kConcat, kAdd };

std::string to_string(FusionMode mode);
FusionMode parse_fusion_mode(const std::string& text);

/// Token cross-attention: queries from the BEV feature, keys and values from
/// the diffusion output. Each head projects d_model to d_model / heads.
template <typename S>
class CrossAttention {
 public:
  CrossAttention() = default;
  CrossAttention(std::size_t d_model, std::size_t heads, Rng& rng);

  void collect(ParamSet<S>& set, const std::string& prefix) const;
  std::size_t d_model() const { return out.weight.dim(1); }
  std::size_t heads() const { return wq.size(); }

  std::vector<Linear<S>> wq, wk, wv;
  Linear<S> out;
};

/// Attention of bev tokens over diff_out tokens, projected by W^Out, plus the
/// residual bev. `weights_out`, when given, receives the first head's
/// [HW, HW] attention weights.
template <typename S>
Tensor<S> cross_attend(const Tensor<S>& bev, const Tensor<S>& diff_out, const CrossAttention<S>& params,
                       Tensor<S>* weights_out = nullptr);

template <typename S>
class Fusion {
 public:
  Fusion() = default;
  Fusion(FusionMode mode, std::size_t channels, Rng& rng, std::size_t heads = 1);

  Tensor<S> operator()(const Tensor<S>& bev, const Tensor<S>& diff_out) const;
  void collect(ParamSet<S>& set, const std::string& prefix) const;
  FusionMode mode() const { return mode_; }

  CrossAttention<S> attention;
  Conv2d<S> concat_proj;

 private:
  FusionMode mode_ = FusionMode::kCrossAttention;
};

template <typename S>
Tensor<S> fuse(const Tensor<S>& bev, const Tensor<S>& diff_out, const Fusion<S>& fusion) {
  return fusion(bev, diff_out);
}

}  // namespace diffbev
