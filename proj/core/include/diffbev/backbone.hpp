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

struct BackboneConfig {
  std::size_t in_channels = 3;
  std::vector<std::size_t> widths{32, 64, 64, 64};
  std::size_t feature_channels = 16;
  std::size_t depth_bins = 8;
};

template <typename S>
struct Encoded {
  Tensor<S> features;  // [C, H/8, W/8]
  Tensor<S> depth;     // [bins, H/8, W/8], softmax over bins
};

/// Conv encoder to 1/8 resolution with depth and context heads. Each of the
/// first three blocks is followed by 2x2 average pooling.
template <typename S>
class Backbone {
 public:
  static constexpr std::size_t kStride = 8;

  Backbone() = default;
  Backbone(const BackboneConfig& cfg, Rng& rng);

  Encoded<S> operator()(const Tensor<S>& image, const Mode& mode);
  /// Same-sized images; normalization statistics are pooled over the batch.
  std::vector<Encoded<S>> operator()(const std::vector<Tensor<S>>& images, const Mode& mode);
  void collect(ParamSet<S>& set, const std::string& prefix) const;
  const BackboneConfig& config() const { return cfg_; }

  std::vector<ConvBlock<S>> blocks;
  Conv2d<S> depth_head;
  Conv2d<S> context_head;

 private:
  BackboneConfig cfg_;
};

template <typename S>
Encoded<S> encode(const Tensor<S>& image, Backbone<S>& backbone, const Mode& mode) {
  return backbone(image, mode);
}

}  // namespace diffbev
