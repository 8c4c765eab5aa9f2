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
#include <vector>

#include "diffbev/archive.hpp"
#include "diffbev/geometry.hpp"

namespace diffbev {

inline constexpr std::size_t kMaxClasses = 8;

/// Generator settings. Class 0 is flat drivable ground; classes 1..M-1 are
/// box obstacles ("vehicle" for the default two-class palette).
struct SceneConfig {
  CameraRig rig = CameraRig::forward_looking(64, 64, 1.5707963267948966, 3.0, 0.5, DepthBins{});
  BevGrid grid;
  std::size_t classes = 2;
  std::size_t min_regions = 1;
  std::size_t max_regions = 2;
  std::size_t min_boxes = 1;
  std::size_t max_boxes = 3;
  /// Points are sampled at every `point_stride`-th pixel in both directions.
  std::size_t point_stride = 2;

  void validate() const;
  /// Canonical text form; its hash identifies datasets made with this config.
  std::string to_text() const;
  std::uint64_t hash() const;
};

/// Axis-aligned world rectangle on the ground (class 0).
struct GroundRegion {
  double x0, x1, y0, y1;
};

/// Axis-aligned box standing on the ground.
struct Box {
  std::size_t cls;  // 1..M-1
  double x0, x1, y0, y1, height;
};

struct SceneLayout {
  std::vector<GroundRegion> regions;
  std::vector<Box> boxes;
};

struct SceneSample {
  Tensor<float> image;       // [3, H, W] in [0, 1]
  std::vector<Vec3> points;  // world meters, f32-representable
  Tensor<float> bev_labels;  // [M, rows, cols] of 0/1
  Tensor<float> valid_mask;  // [rows, cols] of 0/1
  CameraRig rig;
};

/// Random layout drawn from `seed`.
SceneLayout random_layout(std::uint64_t seed, const SceneConfig& cfg);

/// Ray-casts the image, samples surface points of layout objects and
/// rasterizes per-class BEV occupancy at cell centers.
SceneSample render_scene(const SceneLayout& layout, const SceneConfig& cfg);

inline SceneSample generate_scene(std::uint64_t seed, const SceneConfig& cfg) {
  return render_scene(random_layout(seed, cfg), cfg);
}

/// First surface hit by the ray through pixel center (u + 0.5, v + 0.5).
/// `index` names the region or box for those kinds.
struct RayHit {
  enum Kind { kSky, kGround, kRegion, kBox };
  Kind kind = kSky;
  std::size_t index = 0;
  double distance = 0.0;
  Vec3 point{};
};
RayHit cast_ray(const SceneLayout& layout, const CameraRig& rig, double u, double v);

TensorArchive scene_to_archive(const SceneSample& s);
SceneSample scene_from_archive(const TensorArchive& a);

/// A directory of scene_<seed>.dbt files plus manifest.txt.
struct Dataset {
  std::vector<std::string> files;
  std::vector<SceneSample> samples;
  std::uint64_t config_hash = 0;
};

/// Writes `n` scenes with seeds seed, seed+1, ... and the manifest.
void generate_dataset(const std::filesystem::path& dir, std::size_t n, std::uint64_t seed, const SceneConfig& cfg);

/// Reads every manifest entry. When `expected_hash` is non-zero it must match
/// the manifest's config hash.
Dataset load_dataset(const std::filesystem::path& dir, std::uint64_t expected_hash = 0);

}  // namespace diffbev
