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
#include <cstdint>
#include <vector>

#include "diffbev/backbone.hpp"
#include "diffbev/config.hpp"
#include "diffbev/data.hpp"
#include "diffbev/diffusion.hpp"
#include "diffbev/fusion.hpp"
#include "diffbev/geometry.hpp"
#include "diffbev/heads.hpp"
#include "diffbev/losses.hpp"

namespace diffbev {

/// One scene in model precision, with its depth target at feature resolution.
template <typename S>
struct ModelInput {
  Tensor<S> image;         // [3, H, W]
  Tensor<S> labels;        // [M, rows, cols]
  Tensor<S> valid_mask;    // [rows, cols]
  Tensor<S> depth_target;  // [bins, H/8, W/8]
  Tensor<S> depth_mask;    // [H/8, W/8]
};

template <typename S>
ModelInput<S> make_input(const SceneSample& scene, std::size_t depth_stride);

/// Intermediate results of one forward pass.
template <typename S>
struct ForwardResult {
  Encoded<S> encoded;
  Tensor<S> o_bev;    // lift-splat output
  Tensor<S> s_bev;    // depth-derived semantic feature
  Tensor<S> cond;     // diffusion condition
  Tensor<S> refined;  // reverse-chain estimate
  Tensor<S> fused;
  Tensor<S> logits;   // [M, rows, cols]
};

/// Full pipeline: backbone, view transformer, conditional diffusion, fusion
/// and segmentation decoder.
template <typename S>
class DiffBevModel {
 public:
  /// Weights are drawn from a stream derived from cfg.seed.
  explicit DiffBevModel(const TrainConfig& cfg);

  /// Runs the pipeline. `detach` cuts the gradient path from the fused
  /// feature back through the reverse chain.
  ForwardResult<S> forward(const Tensor<S>& image, const Mode& mode, Rng& rng, std::size_t refine_steps,
                           bool detach);

  /// Loss terms of every scene in a batch. Normalization statistics are
  /// pooled over the batch. Scene i draws its diffusion timestep and noise,
  /// then its reverse-chain noise, from rngs[i].
  std::vector<LossParts<S>> loss(const std::vector<const ModelInput<S>*>& batch, const Mode& mode,
                                 std::vector<Rng>& rngs, const LossWeights& weights, std::size_t refine_steps,
                                 bool detach, std::vector<ForwardResult<S>>* out = nullptr);

  /// Single-scene form of the batch loss.
  LossParts<S> loss(const ModelInput<S>& in, const Mode& mode, Rng& rng, const LossWeights& weights,
                    std::size_t refine_steps, bool detach, ForwardResult<S>* out = nullptr);

  /// Per-class occupancy probabilities [M, rows, cols] in eval mode without
  /// gradient tracking.
  Tensor<S> predict(const Tensor<S>& image, Rng& rng, std::size_t sample_steps);

  /// Parameters and running-statistic buffers in a fixed order.
  ParamSet<S> parameters() const;

  const TrainConfig& config() const { return cfg_; }
  const NoiseSchedule& schedule() const { return sched_; }
  const BevGrid& grid() const { return grid_; }

  Backbone<S> backbone;
  SemanticFromDepth<S> semantic;
  Denoiser<S> denoiser;
  Fusion<S> fusion;
  SegDecoder<S> decoder;

 private:
  std::vector<ForwardResult<S>> lift(const std::vector<Tensor<S>>& images, const Mode& mode);
  void segment(const Mode& mode, std::vector<Rng>& rngs, std::size_t refine_steps, bool detach,
               std::vector<ForwardResult<S>>& rs);

  TrainConfig cfg_;
  SceneConfig scene_;
  BevGrid grid_;
  SplatPlan plan_;
  NoiseSchedule sched_;
};

/// Seed stream for weight initialization.
inline constexpr std::uint64_t kInitStream = 0x1417;

}  // namespace diffbev
