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
#include <filesystem>
#include <string>

#include "diffbev/data.hpp"
#include "diffbev/diffusion.hpp"
#include "diffbev/fusion.hpp"

namespace diffbev {

/// Every run setting. Each field is a config key of the same name.
struct TrainConfig {
  // Optimization.
  std::uint64_t seed = 0;
  std::size_t iterations = 500;
  std::size_t batch_size = 4;
  double lr = 2e-4;
  double weight_decay = 0.01;
  std::size_t warmup_iters = 150;
  double grad_clip = 10.0;
  double lambda1 = 10.0;
  double lambda2 = 1.0;

  // Diffusion.
  std::size_t timesteps = 100;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  std::size_t n_sample_steps = 4;
  std::size_t train_refine_steps = 4;
  bool detach_diffusion = false;

  // Architecture.
  ConditionKind condition = ConditionKind::kSBev;
  FusionMode fusion = FusionMode::kCrossAttention;
  EncoderMode encoder_mode = EncoderMode::kSelfAttention;
  std::size_t attention_heads = 1;
  std::size_t bev_channels = 16;
  std::size_t decoder_width = 32;
  std::size_t unet_base = 32;
  std::size_t time_dim = 64;

  // Data.
  std::string dataset = "data";
  std::uint64_t data_seed = 0;
  std::size_t classes = 2;
  std::size_t image_size = 64;
  double fov_deg = 90.0;
  double camera_height = 3.0;
  double camera_pitch = 0.5;
  double depth_min = 1.0;
  double depth_max = 12.0;
  std::size_t depth_bins = 8;
  double grid_extent = 10.0;
  std::size_t grid_size = 32;
  std::size_t min_regions = 1;
  std::size_t max_regions = 2;
  std::size_t min_boxes = 1;
  std::size_t max_boxes = 3;
  std::size_t point_stride = 2;

  // Outputs.
  std::string out_dir = "run";
  std::size_t checkpoint_every = 0;  // 0: final checkpoint only

  /// Throws ValidationError naming the offending key.
  void validate() const;
  /// Canonical `key = value` form; parse_config(to_text()) reproduces it.
  std::string to_text() const;

  SceneConfig scene() const;
};

/// Parses `key = value` lines with `#` comments. Unknown keys, repeated keys
/// and malformed values are errors.
TrainConfig parse_config(const std::string& text);
TrainConfig load_config(const std::filesystem::path& path);

}  // namespace diffbev
