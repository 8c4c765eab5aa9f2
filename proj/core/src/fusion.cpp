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

#include "diffbev/fusion.hpp"

#include "diffbev/error.hpp"

namespace diffbev {

std::string to_string(FusionMode mode) {
  switch (mode) {
    case FusionMode::kCrossAttention:
      return "cross_attention";
    case FusionMode::kConcat:
      return "concat";
    case FusionMode::kAdd:
      return "add";
  }
  return "?";
}

FusionMode parse_fusion_mode(const std::string& text) {
  if (text == "cross_attention") return FusionMode::kCrossAttention;
  if (text == "concat") return FusionMode::kConcat;
  if (text == "add") return FusionMode::kAdd;
  throw ValidationError("unknown fusion mode '" + text + "' (expected cross_attention | concat | add)");
}

template <typename S>
CrossAttention<S>::CrossAttention(std::size_t d_model, std::size_t heads, Rng& rng) {
  if (heads == 0 || d_model % heads != 0) {
    throw ValidationError("cross attention: " + std::to_string(heads) + " heads do not divide d_model " +
                          std::to_string(d_model));
  }
  const std::size_t dh = d_model / heads;
  for (std::size_t i = 0; i < heads; ++i) {
    wq.emplace_back(d_model, dh, rng, false, 1.0);
    wk.emplace_back(d_model, dh, rng, false, 1.0);
    wv.emplace_back(d_model, dh, rng, false, 1.0);
  }
  out = Linear<S>(d_model, d_model, rng, false, 1.0);
}

template <typename S>
void CrossAttention<S>::collect(ParamSet<S>& set, const std::string& prefix) const {
  for (std::size_t i = 0; i < wq.size(); ++i) {
    const std::string h = wq.size() == 1 ? "" : std::to_string(i);
    wq[i].collect(set, prefix + ".wq" + h);
    wk[i].collect(set, prefix + ".wk" + h);
    wv[i].collect(set, prefix + ".wv" + h);
  }
  out.collect(set, prefix + ".wout");
}

namespace {

template <typename S>
void require_same(const Tensor<S>& a, const Tensor<S>& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ValidationError(std::string(what) + ": bev " + to_string(a.shape()) + " and diffusion output " +
                          to_string(b.shape()) + " differ");
  }
}

}  // namespace

template <typename S>
Tensor<S> cross_attend(const Tensor<S>& bev, const Tensor<S>& diff_out, const CrossAttention<S>& params,
                       Tensor<S>* weights_out) {
  require_same(bev, diff_out, "cross_attend");
  if (bev.rank() != 3 || bev.dim(0) != params.d_model()) {
    throw ValidationError("cross_attend: input " + to_string(bev.shape()) + " does not have d_model " +
                          std::to_string(params.d_model()) + " channels");
  }
  const auto q_tokens = to_tokens(bev);
  const auto kv_tokens = to_tokens(diff_out);
  std::vector<Tensor<S>> heads;
  for (std::size_t i = 0; i < params.heads(); ++i) {
    heads.push_back(scaled_dot_attention(params.wq[i](q_tokens), params.wk[i](kv_tokens), params.wv[i](kv_tokens),
                                         i == 0 ? weights_out : nullptr));
  }
  auto attended = heads.size() == 1 ? heads[0] : concat(heads, 1);
  return add(bev, from_tokens(params.out(attended), bev.dim(1), bev.dim(2)));
}

template <typename S>
Fusion<S>::Fusion(FusionMode mode, std::size_t channels, Rng& rng, std::size_t heads) : mode_(mode) {
  if (mode == FusionMode::kCrossAttention) attention = CrossAttention<S>(channels, heads, rng);
  if (mode == FusionMode::kConcat) concat_proj = Conv2d<S>(2 * channels, channels, 1, rng);
}

template <typename S>
Tensor<S> Fusion<S>::operator()(const Tensor<S>& bev, const Tensor<S>& diff_out) const {
  require_same(bev, diff_out, "fuse");
  switch (mode_) {
    case FusionMode::kAdd:
      return add(bev, diff_out);
    case FusionMode::kConcat:
      return concat_proj(concat<S>({bev, diff_out}, 0));
    case FusionMode::kCrossAttention:
      break;
  }
  return cross_attend(bev, diff_out, attention);
}

template <typename S>
void Fusion<S>::collect(ParamSet<S>& set, const std::string& prefix) const {
  if (mode_ == FusionMode::kCrossAttention) attention.collect(set, prefix);
  if (mode_ == FusionMode::kConcat) concat_proj.collect(set, prefix + ".proj");
}

template class CrossAttention<float>;
template class CrossAttention<double>;
template class Fusion<float>;
template class Fusion<double>;
template Tensor<float> cross_attend(const Tensor<float>&, const Tensor<float>&, const CrossAttention<float>&,
                                    Tensor<float>*);
template Tensor<double> cross_attend(const Tensor<double>&, const Tensor<double>&, const CrossAttention<double>&,
                                     Tensor<double>*);

}  // namespace diffbev
