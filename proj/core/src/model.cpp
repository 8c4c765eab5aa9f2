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

#include "diffbev/model.hpp"

#include <algorithm>

#include "diffbev/error.hpp"
#include "diffbev/ops.hpp"

namespace diffbev {

namespace {

template <typename S>
Tensor<S> cast(const Tensor<float>& t) {
  std::vector<S> data(t.data().begin(), t.data().end());
  return Tensor<S>(t.shape(), std::move(data));
}

}  // namespace

template <typename S>
ModelInput<S> make_input(const SceneSample& scene, std::size_t depth_stride) {
  ModelInput<S> in;
  in.image = cast<S>(scene.image);
  in.labels = cast<S>(scene.bev_labels);
  in.valid_mask = cast<S>(scene.valid_mask);
  const DepthTarget target = depth_ground_truth(scene.rig.scaled(1.0 / static_cast<double>(depth_stride)), scene.points);
  in.depth_target = cast<S>(target.onehot);
  in.depth_mask = cast<S>(target.mask);
  return in;
}

template <typename S>
DiffBevModel<S>::DiffBevModel(const TrainConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  scene_ = cfg_.scene();
  grid_ = scene_.grid;
  Rng rng(mix_seed(cfg_.seed, kInitStream));

  BackboneConfig bb;
  bb.feature_channels = cfg_.bev_channels;
  bb.depth_bins = cfg_.depth_bins;
  backbone = Backbone<S>(bb, rng);
  semantic = SemanticFromDepth<S>(cfg_.depth_bins, cfg_.bev_channels, rng);

  DenoiserConfig dn;
  dn.channels = cfg_.bev_channels;
  dn.height = grid_.rows;
  dn.width = grid_.cols;
  dn.base = cfg_.unet_base;
  dn.time_dim = cfg_.time_dim;
  dn.encoder = cfg_.encoder_mode;
  denoiser = Denoiser<S>(dn, rng);
  fusion = Fusion<S>(cfg_.fusion, cfg_.bev_channels, rng, cfg_.attention_heads);
  decoder = SegDecoder<S>(cfg_.bev_channels, cfg_.decoder_width, cfg_.classes, rng);

  const std::size_t fh = scene_.rig.height / Backbone<S>::kStride;
  const std::size_t fw = scene_.rig.width / Backbone<S>::kStride;
  plan_ = plan_splat(scene_.rig.scaled(1.0 / static_cast<double>(Backbone<S>::kStride)), grid_, fh, fw);
  sched_ = make_schedule(cfg_.timesteps, cfg_.beta_start, cfg_.beta_end);
}

template <typename S>
std::vector<ForwardResult<S>> DiffBevModel<S>::lift(const std::vector<Tensor<S>>& images, const Mode& mode) {
  std::vector<Encoded<S>> encoded = backbone(images, mode);
  std::vector<ForwardResult<S>> rs(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    ForwardResult<S>& r = rs[i];
    r.encoded = std::move(encoded[i]);
    const DepthDistribution<S> depth{r.encoded.depth};
    r.o_bev = lift_splat(r.encoded.features, depth, plan_);
    r.s_bev = semantic(depth, grid_);
    r.cond = build_condition(r.o_bev, r.s_bev, cfg_.condition);
  }
  return rs;
}

template <typename S>
void DiffBevModel<S>::segment(const Mode& mode, std::vector<Rng>& rngs, std::size_t refine_steps, bool detach,
                              std::vector<ForwardResult<S>>& rs) {
  std::vector<Tensor<S>> fused;
  for (std::size_t i = 0; i < rs.size(); ++i) {
    ForwardResult<S>& r = rs[i];
    if (detach) {
      NoGradGuard guard;
      r.refined = refine(r.cond.detach(), denoiser, sched_, rngs[i], refine_steps);
    } else {
      r.refined = refine(r.cond, denoiser, sched_, rngs[i], refine_steps);
    }
    r.fused = fusion(r.o_bev, r.refined);
    fused.push_back(r.fused);
  }
  std::vector<Tensor<S>> logits = decoder(fused, mode);
  for (std::size_t i = 0; i < rs.size(); ++i) rs[i].logits = std::move(logits[i]);
}

template <typename S>
ForwardResult<S> DiffBevModel<S>::forward(const Tensor<S>& image, const Mode& mode, Rng& rng,
                                          std::size_t refine_steps, bool detach) {
  std::vector<ForwardResult<S>> rs = lift({image}, mode);
  std::vector<Rng> rngs{rng};
  segment(mode, rngs, refine_steps, detach, rs);
  rng = rngs.front();
  return std::move(rs.front());
}

template <typename S>
std::vector<LossParts<S>> DiffBevModel<S>::loss(const std::vector<const ModelInput<S>*>& batch, const Mode& mode,
                                                std::vector<Rng>& rngs, const LossWeights& weights,
                                                std::size_t refine_steps, bool detach,
                                                std::vector<ForwardResult<S>>* out) {
  if (batch.empty() || rngs.size() != batch.size()) throw ValidationError("model loss: need one rng per scene");
  std::vector<Tensor<S>> images;
  for (const auto* in : batch) images.push_back(in->image);
  std::vector<ForwardResult<S>> rs = lift(images, mode);

  std::vector<Tensor<S>> l_diff;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const std::size_t t = 1 + static_cast<std::size_t>(rngs[i].below(sched_.steps()));
    const Tensor<S> eps = gaussian_like<S>(rs[i].o_bev.shape(), rngs[i]);
    const Tensor<S> x_t = forward_sample(rs[i].o_bev, t, sched_, eps);
    l_diff.push_back(loss_diff(eps, denoise(x_t, t, rs[i].cond, denoiser)));
  }

  segment(mode, rngs, refine_steps, detach, rs);
  std::vector<LossParts<S>> parts;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const ModelInput<S>& in = *batch[i];
    const Tensor<S> l_wce = loss_wce(rs[i].logits, in.labels, in.valid_mask, weights.class_weights);
    const Tensor<S> l_depth = loss_depth(rs[i].encoded.depth, in.depth_target, in.depth_mask);
    parts.push_back(loss_total(l_wce, l_depth, l_diff[i], weights));
  }
  if (out) *out = std::move(rs);
  return parts;
}

template <typename S>
LossParts<S> DiffBevModel<S>::loss(const ModelInput<S>& in, const Mode& mode, Rng& rng, const LossWeights& weights,
                                   std::size_t refine_steps, bool detach, ForwardResult<S>* out) {
  std::vector<Rng> rngs{rng};
  std::vector<ForwardResult<S>> rs;
  LossParts<S> parts = loss({&in}, mode, rngs, weights, refine_steps, detach, out ? &rs : nullptr).front();
  rng = rngs.front();
  if (out) *out = std::move(rs.front());
  return parts;
}

template <typename S>
Tensor<S> DiffBevModel<S>::predict(const Tensor<S>& image, Rng& rng, std::size_t sample_steps) {
  NoGradGuard guard;
  Mode mode;
  mode.training = false;
  return sigmoid(forward(image, mode, rng, sample_steps, true).logits);
}

template <typename S>
ParamSet<S> DiffBevModel<S>::parameters() const {
  ParamSet<S> set;
  backbone.collect(set, "backbone");
  semantic.collect(set, "semantic");
  denoiser.collect(set, "denoiser");
  fusion.collect(set, "fusion");
  decoder.collect(set, "decoder");
  return set;
}

template ModelInput<float> make_input(const SceneSample&, std::size_t);
template ModelInput<double> make_input(const SceneSample&, std::size_t);
template class DiffBevModel<float>;
template class DiffBevModel<double>;

}  // namespace diffbev
