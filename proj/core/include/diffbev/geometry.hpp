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

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "diffbev/layers.hpp"
#include "diffbev/tensor.hpp"

namespace diffbev {

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<std::array<double, 3>, 3>;

/// Uniform metric depth bins over [d_min, d_max).
struct DepthBins {
  double d_min = 1.0;
  double d_max = 12.0;
  std::size_t count = 8;

  double width() const { return (d_max - d_min) / static_cast<double>(count); }
  double center(std::size_t bin) const { return d_min + (static_cast<double>(bin) + 0.5) * width(); }
  /// Bin holding `depth`, or nullopt outside [d_min, d_max]. d_max itself maps to the last bin.
  std::optional<std::size_t> index(double depth) const;
};

/// Pinhole camera. R and t map world to camera coordinates (x right, y down,
/// z forward); pixel u spans [u, u+1) so pixel centers sit at half-integers.
struct CameraRig {
  Mat3 K{};
  Mat3 R{};
  Vec3 t{};
  std::size_t width = 64;
  std::size_t height = 64;
  DepthBins bins;

  /// Throws ValidationError when an invariant is broken.
  void validate() const;
  Vec3 to_camera(const Vec3& world) const;
  Vec3 to_world(const Vec3& camera) const;
  /// Same camera seen at a resampled image size (intrinsics scaled by `factor`).
  CameraRig scaled(double factor) const;

  /// Camera at `height` meters above the world origin looking along +x,
  /// pitched down by `pitch` radians, with a `fov` radian horizontal field of view.
  static CameraRig forward_looking(std::size_t width, std::size_t height, double fov, double mount_height,
                                   double pitch, DepthBins bins);
};

/// Top-down metric grid. Columns follow world x, rows follow world y; the
/// ego vehicle sits at the grid center for symmetric extents.
struct BevGrid {
  double x_min = -10.0;
  double x_max = 10.0;
  double y_min = -10.0;
  double y_max = 10.0;
  std::size_t rows = 32;
  std::size_t cols = 32;
  std::size_t channels = 16;

  void validate() const;
  double cell_size() const { return (x_max - x_min) / static_cast<double>(cols); }
  std::size_t cells() const { return rows * cols; }
  /// Flat row-major cell index containing (x, y), if inside the grid.
  std::optional<std::size_t> cell_of(double x, double y) const;
  double col_center_x(std::size_t col) const { return x_min + (static_cast<double>(col) + 0.5) * cell_size(); }
  double row_center_y(std::size_t row) const { return y_min + (static_cast<double>(row) + 0.5) * cell_size(); }
};

template <typename S>
struct DepthDistribution {
  /// [n_bins, h, w]; per-pixel simplex over bins.
  Tensor<S> probs;
};

struct ProjectedPoint {
  double u = 0.0;
  double v = 0.0;
  double depth = 0.0;
  std::size_t source = 0;
};

struct Projection {
  std::vector<ProjectedPoint> points;
  std::size_t dropped = 0;
};

/// Pinhole projection K(RP + t). Points outside the image or the depth range
/// are filtered and counted in `dropped`.
Projection project_points(const CameraRig& rig, std::span<const Vec3> points);

struct DepthTarget {
  Tensor<float> onehot;  ///< [n_bins, H, W]
  Tensor<float> mask;    ///< [H, W], 1 where at least one point landed
  std::size_t valid_pixels = 0;
};

/// One-hot depth-bin target per pixel from a point cloud; the nearest point wins.
DepthTarget depth_ground_truth(const CameraRig& rig, std::span<const Vec3> points);

/// Cell assignment of every (bin, y, x) frustum point of a feature map.
struct SplatPlan {
  std::size_t bins = 0;
  std::size_t feat_h = 0;
  std::size_t feat_w = 0;
  std::size_t grid_rows = 0;
  std::size_t grid_cols = 0;
  std::vector<std::int32_t> cell;  ///< -1 when the point falls outside the grid
};

/// Lifts each feature-map pixel center through the inverse intrinsics to the
/// bin-center depths and bins the resulting points into BEV cells.
SplatPlan plan_splat(const CameraRig& rig, const BevGrid& grid, std::size_t feat_h, std::size_t feat_w);

/// Sum-pools features[:, y, x] * probs[b, y, x] into the cell of point
/// (b, y, x). Output is [C, rows, cols]; differentiable in both inputs.
template <typename S>
Tensor<S> lift_splat(const Tensor<S>& features, const DepthDistribution<S>& depth, const SplatPlan& plan);

template <typename S>
Tensor<S> lift_splat(const Tensor<S>& features, const DepthDistribution<S>& depth, const CameraRig& rig,
                     const BevGrid& grid);

/// BEV cells whose ground-plane center projects inside the image and depth
/// range; [rows, cols] of 0/1.
Tensor<float> frustum_mask(const CameraRig& rig, const BevGrid& grid);

/// 1x1 conv from depth bins to C channels, resized to the BEV grid.
template <typename S>
class SemanticFromDepth {
 public:
  SemanticFromDepth() = default;
  SemanticFromDepth(std::size_t bins, std::size_t channels, Rng& rng) : proj(bins, channels, 1, rng) {}

  Tensor<S> operator()(const DepthDistribution<S>& depth, const BevGrid& grid) const;
  void collect(ParamSet<S>& set, const std::string& prefix) const { proj.collect(set, prefix + ".proj"); }

  Conv2d<S> proj;
};

}  // namespace diffbev
