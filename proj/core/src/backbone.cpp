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

#include "diffbev/backbone.hpp"

#include "diffbev/error.hpp"

namespace diffbev {

template <typename S>
Backbone<S>::Backbone(const BackboneConfig& cfg, Rng& rng) : cfg_(cfg) {
  if (cfg.widths.size() != 4) throw ValidationError("backbone: expected 4 block widths");
  if (cfg.feature_channels == 0 || cfg.depth_bins == 0) throw ValidationError("backbone: empty head");
  std::size_t in = cfg.in_channels;
  for (std::size_t w : cfg.widths) {
    blocks.emplace_back(in, w, rng);
    in = w;
  }
  depth_head = Conv2d<S>(in, cfg.depth_bins, 1, rng);
  context_head = Conv2d<S>(in, cfg.feature_channels, 1, rng);
}

template <typename S>
Encoded<S> Backbone<S>::operator()(const Tensor<S>& image, const Mode& mode) {
  return (*this)(std::vector<Tensor<S>>{image}, mode).front();
}

template <typename S>
std::vector<Encoded<S>> Backbone<S>::operator()(const std::vector<Tensor<S>>& images, const Mode& mode) {
  if (images.empty()) throw ValidationError("backbone: empty batch");
  for (const auto& image : images) {
    if (image.rank() != 3 || image.dim(0) != cfg_.in_channels) {
      throw ValidationError("backbone: image " + to_string(image.shape()) + " is not [" +
                            std::to_string(cfg_.in_channels) + ", H, W]");
    }
    if (image.dim(1) % kStride != 0 || image.dim(2) % kStride != 0) {
      throw ValidationError("backbone: image size " + std::to_string(image.dim(1)) + "x" +
                            std::to_string(image.dim(2)) + " is not divisible by 8");
    }
    if (image.shape() != images.front().shape()) throw ValidationError("backbone: batch images differ in size");
  }
  std::vector<Tensor<S>> x = images;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    x = blocks[i](x, mode);
    if (i + 1 < blocks.size()) {
      for (auto& t : x) t = avg_pool2d(t, 2);
    }
  }
  std::vector<Encoded<S>> out;
  for (const auto& t : x) out.push_back({context_head(t), softmax(depth_head(t), 0)});
  return out;
}

template <typename S>
void Backbone<S>::collect(ParamSet<S>& set, const std::string& prefix) const {
  for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(set, prefix + ".block" + std::to_string(i));
  depth_head.collect(set, prefix + ".depth_head");
  context_head.collect(set, prefix + ".context_head");
}

template class Backbone<float>;
template class Backbone<double>;

}  // namespace diffbev
