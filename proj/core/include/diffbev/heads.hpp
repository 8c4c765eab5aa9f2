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

/// Residual segmentation head: 8 conv blocks with a skip around every pair,
/// then a per-cell linear classifier to class logits.
template <typename S>
class SegDecoder {
 public:
  static constexpr std::size_t kBlocks = 8;

  SegDecoder() = default;
  SegDecoder(std::size_t in_ch, std::size_t width, std::size_t classes, Rng& rng);

  Tensor<S> operator()(const Tensor<S>& bev, const Mode& mode);
  /// Same-shaped inputs; normalization statistics are pooled over the batch.
  std::vector<Tensor<S>> operator()(const std::vector<Tensor<S>>& bevs, const Mode& mode);
  void collect(ParamSet<S>& set, const std::string& prefix) const;

  std::size_t in_channels() const { return blocks.front().conv.in_channels(); }
  std::size_t classes() const { return classifier.out_channels(); }

  std::vector<ConvBlock<S>> blocks;
  // 1x1 projection on the first skip when in_ch != width; undefined otherwise.
  Conv2d<S> skip_proj;
  Conv2d<S> classifier;
};

template <typename S>
Tensor<S> seg_forward(const Tensor<S>& bev, SegDecoder<S>& decoder, const Mode& mode) {
  return decoder(bev, mode);
}

}  // namespace diffbev
