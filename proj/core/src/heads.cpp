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

#include "diffbev/heads.hpp"

#include "diffbev/error.hpp"

namespace diffbev {

template <typename S>
SegDecoder<S>::SegDecoder(std::size_t in_ch, std::size_t width, std::size_t classes, Rng& rng) {
  if (in_ch == 0 || width == 0 || classes == 0) throw ValidationError("seg decoder: sizes must be positive");
  for (std::size_t i = 0; i < kBlocks; ++i) blocks.emplace_back(i == 0 ? in_ch : width, width, rng);
  if (in_ch != width) skip_proj = Conv2d<S>(in_ch, width, 1, rng, false);
  classifier = Conv2d<S>(width, classes, 1, rng, true);
}

template <typename S>
Tensor<S> SegDecoder<S>::operator()(const Tensor<S>& bev, const Mode& mode) {
  return (*this)(std::vector<Tensor<S>>{bev}, mode).front();
}

template <typename S>
std::vector<Tensor<S>> SegDecoder<S>::operator()(const std::vector<Tensor<S>>& bevs, const Mode& mode) {
  if (bevs.empty()) throw ValidationError("seg decoder: empty batch");
  for (const auto& bev : bevs) {
    if (bev.rank() != 3 || bev.dim(0) != in_channels()) {
      throw ValidationError("seg decoder: input " + to_string(bev.shape()) + " does not have " +
                            std::to_string(in_channels()) + " channels");
    }
    if (bev.shape() != bevs.front().shape()) throw ValidationError("seg decoder: batch inputs differ in shape");
  }
  std::vector<Tensor<S>> x = bevs;
  for (std::size_t i = 0; i < kBlocks; i += 2) {
    const std::vector<Tensor<S>> y = blocks[i + 1](blocks[i](x, mode), mode);
    const bool project = i == 0 && skip_proj.weight.defined();
    for (std::size_t b = 0; b < x.size(); ++b) x[b] = add(y[b], project ? skip_proj(x[b]) : x[b]);
  }
  for (auto& t : x) t = classifier(t);
  return x;
}

template <typename S>
void SegDecoder<S>::collect(ParamSet<S>& set, const std::string& prefix) const {
  for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(set, prefix + ".block" + std::to_string(i));
  if (skip_proj.weight.defined()) skip_proj.collect(set, prefix + ".skip");
  classifier.collect(set, prefix + ".classifier");
}

template class SegDecoder<float>;
template class SegDecoder<double>;

}  // namespace diffbev
