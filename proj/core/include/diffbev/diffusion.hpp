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
#include "diffbev/rng.hpp"
#include "diffbev/tensor.hpp"

namespace diffbev {

/// Variance schedule for t = 1..T. Arrays are indexed by t - 1.
struct NoiseSchedule {
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;

  std::size_t steps() const { return beta.size(); }
  double beta_at(std::size_t t) const { return beta.at(t - 1); }
  double alpha_at(std::size_t t) const { return alpha.at(t - 1); }
  /// alpha_bar at t, with alpha_bar(0) = 1.
  double alpha_bar_at(std::size_t t) const { return t == 0 ? 1.0 : alpha_bar.at(t - 1); }
  /// beta_t (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t).
  double posterior_variance(std::size_t t) const;
  void check_step(std::size_t t) const;

  /// alpha = 1 - beta, alpha_bar = running product of alpha.
  static NoiseSchedule from_betas(std::vector<double> betas);
  /// Schedule over a subsequence of timesteps (ascending), whose cumulative
  /// products are the original ones at those steps.
  NoiseSchedule respaced(const std::vector<std::size_t>& timesteps) const;
};

/// Linear betas from beta_start to beta_end inclusive.
NoiseSchedule make_schedule(std::size_t steps, double beta_start, double beta_end);

/// Evenly spaced timesteps in descending order, starting at T and ending at 1.
/// A single step visits only T.
std::vector<std::size_t> sampling_timesteps(std::size_t steps, std::size_t n_steps);

/// One forward transition: sqrt(1 - beta_t) x_{t-1} + sqrt(beta_t) noise.
template <typename S>
Tensor<S> q_step(const Tensor<S>& x_prev, std::size_t t, const NoiseSchedule& sched, const Tensor<S>& noise);

/// Closed form sqrt(alpha_bar_t) x_0 + sqrt(1 - alpha_bar_t) eps.
template <typename S>
Tensor<S> forward_sample(const Tensor<S>& x0, std::size_t t, const NoiseSchedule& sched, const Tensor<S>& eps);

/// Ancestral step with fixed posterior variance. `noise` may be undefined
/// (treated as zero) and is ignored at t = 1.
template <typename S>
Tensor<S> reverse_step(const Tensor<S>& x_t, std::size_t t, const Tensor<S>& eps_hat, const NoiseSchedule& sched,
                       const Tensor<S>& noise);

/// Which BEV feature conditions the denoiser: the view-transformer output
/// (O-BEV), the depth-derived semantic feature (S-BEV), or their sum.
enum class ConditionKind { kOBev, kSBev, kSumBev };

std::string to_string(ConditionKind kind);
ConditionKind parse_condition_kind(const std::string& text);

template <typename S>
Tensor<S> build_condition(const Tensor<S>& o_bev, const Tensor<S>& s_bev, ConditionKind kind);

enum class EncoderMode { kSelfAttention, kConv };

std::string to_string(EncoderMode mode);
EncoderMode parse_encoder_mode(const std::string& text);

struct DenoiserConfig {
  std::size_t channels = 16;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t base = 32;
  std::size_t time_dim = 64;
  EncoderMode encoder = EncoderMode::kSelfAttention;
};

/// Sinusoidal embedding of a timestep: [sin(t w_i), cos(t w_i)], w_i = 10000^(-i / (dim / 2)).
template <typename S>
Tensor<S> timestep_embedding(std::size_t t, std::size_t dim);

/// Condition-modulated UNet predicting the noise in x_t.
///
/// x_t is encoded (spatial self-attention with a learned position table, or a
/// 3x3 conv), gated element-wise by a 3x3 conv encoding of the condition, and
/// passed through a two-level UNet whose blocks each add a projection of the
/// timestep embedding.
template <typename S>
class Denoiser {
 public:
  Denoiser() = default;
  Denoiser(const DenoiserConfig& cfg, Rng& rng);

  Tensor<S> operator()(const Tensor<S>& x_t, std::size_t t, const Tensor<S>& x_cond) const;
  void collect(ParamSet<S>& set, const std::string& prefix) const;
  const DenoiserConfig& config() const { return cfg_; }

  // Noisy-sample encoder.
  Tensor<S> pos_embed;
  Linear<S> wq, wk, wv, wo;
  Conv2d<S> sample_conv;
  // Condition encoder.
  Conv2d<S> cond_conv;
  // Time embedding MLP and per-block projections.
  Linear<S> time_mlp;
  std::vector<Linear<S>> time_proj;
  // UNet.
  Conv2d<S> in_conv, enc0, enc1, mid, dec1, dec0, out_conv;

 private:
  Tensor<S> encode_sample(const Tensor<S>& x) const;

  DenoiserConfig cfg_;
};

/// The model's noise prediction for x_t under condition x_cond.
template <typename S>
Tensor<S> denoise(const Tensor<S>& x_t, std::size_t t, const Tensor<S>& x_cond, const Denoiser<S>& model);

/// Runs the reverse chain from x_T ~ N(0, I) over `n_steps` evenly spaced
/// timesteps and returns the x_0 estimate (same shape as the condition).
template <typename S>
Tensor<S> refine(const Tensor<S>& x_cond, const Denoiser<S>& model, const NoiseSchedule& sched, Rng& rng,
                 std::size_t n_steps);

template <typename S>
Tensor<S> gaussian_like(const Shape& shape, Rng& rng);

}  // namespace diffbev
