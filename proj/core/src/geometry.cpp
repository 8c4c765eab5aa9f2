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

#include "diffbev/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "diffbev/error.hpp"
#include "diffbev/ops.hpp"

namespace diffbev {

std::optional<std::size_t> DepthBins::index(double depth) const {
  if (!(depth >= d_min && depth <= d_max)) return std::nullopt;
  const auto b = static_cast<std::size_t>(std::floor((depth - d_min) / width()));
  return std::min(b, count - 1);
}

void CameraRig::validate() const {
  if (K[2][0] != 0.0 || K[2][1] != 0.0 || K[2][2] != 1.0) {
    throw ValidationError("camera intrinsics: last row must be [0, 0, 1]");
  }
  if (!(K[0][0] > 0.0) || !(K[1][1] > 0.0)) throw ValidationError("camera intrinsics: focal lengths must be positive");
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      double dot = 0.0;
      for (int k = 0; k < 3; ++k) dot += R[k][i] * R[k][j];
      if (std::abs(dot - (i == j ? 1.0 : 0.0)) > 1e-5) throw ValidationError("camera rotation is not orthonormal");
    }
  }
  if (!(bins.d_min > 0.0) || !(bins.d_max > bins.d_min) || bins.count < 1) {
    throw ValidationError("depth bins need 0 < d_min < d_max and at least one bin");
  }
  if (width == 0 || height == 0) throw ValidationError("camera image size must be positive");
}

Vec3 CameraRig::to_camera(const Vec3& p) const {
  Vec3 c{};
  for (int i = 0; i < 3; ++i) c[i] = R[i][0] * p[0] + R[i][1] * p[1] + R[i][2] * p[2] + t[i];
  return c;
}

Vec3 CameraRig::to_world(const Vec3& c) const {
  const Vec3 d{c[0] - t[0], c[1] - t[1], c[2] - t[2]};
  Vec3 p{};
  for (int i = 0; i < 3; ++i) p[i] = R[0][i] * d[0] + R[1][i] * d[1] + R[2][i] * d[2];
  return p;
}

CameraRig CameraRig::scaled(double factor) const {
  CameraRig out = *this;
  for (int j = 0; j < 3; ++j) {
    out.K[0][j] *= factor;
    out.K[1][j] *= factor;
  }
  out.width = static_cast<std::size_t>(std::lround(static_cast<double>(width) * factor));
  out.height = static_cast<std::size_t>(std::lround(static_cast<double>(height) * factor));
  return out;
}

CameraRig CameraRig::forward_looking(std::size_t width, std::size_t height, double fov, double mount_height,
                                     double pitch, DepthBins bins) {
  CameraRig rig;
  const double f = 0.5 * static_cast<double>(width) / std::tan(0.5 * fov);
  rig.K = {{{f, 0.0, 0.5 * static_cast<double>(width)}, {0.0, f, 0.5 * static_cast<double>(height)}, {0.0, 0.0, 1.0}}};
  const double c = std::cos(pitch), s = std::sin(pitch);
  // Rows: camera right, down, forward expressed in world axes (x fwd, y left, z up).
  rig.R = {{{0.0, -1.0, 0.0}, {-s, 0.0, -c}, {c, 0.0, -s}}};
  const Vec3 center{0.0, 0.0, mount_height};
  for (int i = 0; i < 3; ++i) {
    rig.t[i] = -(rig.R[i][0] * center[0] + rig.R[i][1] * center[1] + rig.R[i][2] * center[2]);
  }
  rig.width = width;
  rig.height = height;
  rig.bins = bins;
  return rig;
}

void BevGrid::validate() const {
  if (!(x_max > x_min) || !(y_max > y_min) || rows == 0 || cols == 0) {
    throw ValidationError("BEV grid needs a positive extent and cell count");
  }
  const double dx = (x_max - x_min) / static_cast<double>(cols);
  const double dy = (y_max - y_min) / static_cast<double>(rows);
  if (std::abs(dx - dy) > 1e-9 * std::max(dx, dy)) throw ValidationError("BEV grid cells must be square");
  if (channels == 0) throw ValidationError("BEV grid needs at least one channel");
}

std::optional<std::size_t> BevGrid::cell_of(double x, double y) const {
  if (!(x >= x_min && x < x_max && y >= y_min && y < y_max)) return std::nullopt;
  const double cs = cell_size();
  const auto col = std::min(static_cast<std::size_t>((x - x_min) / cs), cols - 1);
  const auto row = std::min(static_cast<std::size_t>((y - y_min) / cs), rows - 1);
  return row * cols + col;
}

Projection project_points(const CameraRig& rig, std::span<const Vec3> points) {
  Projection out;
  out.points.reserve(points.size());
  const auto& K = rig.K;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Vec3 c = rig.to_camera(points[i]);
    const double z = c[2];
    if (!(z >= rig.bins.d_min && z <= rig.bins.d_max)) {
      ++out.dropped;
      continue;
    }
    const double u = (K[0][0] * c[0] + K[0][1] * c[1] + K[0][2] * z) / z;
    const double v = (K[1][1] * c[1] + K[1][2] * z) / z;
    if (!(u >= 0.0 && u < static_cast<double>(rig.width) && v >= 0.0 && v < static_cast<double>(rig.height))) {
      ++out.dropped;
      continue;
    }
    out.points.push_back({u, v, z, i});
  }
  return out;
}

DepthTarget depth_ground_truth(const CameraRig& rig, std::span<const Vec3> points) {
  const std::size_t h = rig.height, w = rig.width, nb = rig.bins.count;
  std::vector<double> nearest(h * w, std::numeric_limits<double>::infinity());
  for (const auto& p : project_points(rig, points).points) {
    const auto px = static_cast<std::size_t>(p.u);
    const auto py = static_cast<std::size_t>(p.v);
    auto& slot = nearest[py * w + px];
    slot = std::min(slot, p.depth);
  }
  DepthTarget out;
  std::vector<float> onehot(nb * h * w, 0.0f), mask(h * w, 0.0f);
  for (std::size_t i = 0; i < h * w; ++i) {
    if (!std::isfinite(nearest[i])) continue;
    const auto bin = rig.bins.index(nearest[i]);
    if (!bin) continue;
    onehot[*bin * h * w + i] = 1.0f;
    mask[i] = 1.0f;
    ++out.valid_pixels;
  }
  out.onehot = Tensor<float>(Shape{nb, h, w}, std::move(onehot));
  out.mask = Tensor<float>(Shape{h, w}, std::move(mask));
  return out;
}

SplatPlan plan_splat(const CameraRig& rig, const BevGrid& grid, std::size_t feat_h, std::size_t feat_w) {
  SplatPlan plan;
  plan.bins = rig.bins.count;
  plan.feat_h = feat_h;
  plan.feat_w = feat_w;
  plan.grid_rows = grid.rows;
  plan.grid_cols = grid.cols;
  plan.cell.assign(plan.bins * feat_h * feat_w, -1);
  const auto& K = rig.K;
  const double sx = static_cast<double>(rig.width) / static_cast<double>(feat_w);
  const double sy = static_cast<double>(rig.height) / static_cast<double>(feat_h);
  for (std::size_t y = 0; y < feat_h; ++y) {
    for (std::size_t x = 0; x < feat_w; ++x) {
      const double u = (static_cast<double>(x) + 0.5) * sx;
      const double v = (static_cast<double>(y) + 0.5) * sy;
      const double ry = (v - K[1][2]) / K[1][1];
      const double rx = (u - K[0][2] - K[0][1] * ry) / K[0][0];
      for (std::size_t b = 0; b < plan.bins; ++b) {
        const double d = rig.bins.center(b);
        const Vec3 world = rig.to_world({rx * d, ry * d, d});
        if (auto cell = grid.cell_of(world[0], world[1])) {
          plan.cell[(b * feat_h + y) * feat_w + x] = static_cast<std::int32_t>(*cell);
        }
      }
    }
  }
  return plan;
}

template <typename S>
Tensor<S> lift_splat(const Tensor<S>& features, const DepthDistribution<S>& depth, const SplatPlan& plan) {
  const auto& probs = depth.probs;
  if (features.rank() != 3 || probs.rank() != 3) throw ValidationError("lift_splat: features and depth must be rank 3");
  const std::size_t c = features.dim(0), h = features.dim(1), w = features.dim(2);
  if (probs.dim(1) != h || probs.dim(2) != w) {
    throw ValidationError("lift_splat: depth " + to_string(probs.shape()) + " does not match features " +
                          to_string(features.shape()));
  }
  if (probs.dim(0) != plan.bins || plan.feat_h != h || plan.feat_w != w) {
    throw ValidationError("lift_splat: splat plan was built for a different feature map");
  }
  const std::size_t hw = h * w, cells = plan.grid_rows * plan.grid_cols, nb = plan.bins;
  std::vector<S> out(c * cells, S(0));
  const S* f = features.data().data();
  const S* p = probs.data().data();
  for (std::size_t b = 0; b < nb; ++b) {
    for (std::size_t i = 0; i < hw; ++i) {
      const auto cell = plan.cell[b * hw + i];
      if (cell < 0) continue;
      const S weight = p[b * hw + i];
      for (std::size_t ch = 0; ch < c; ++ch) out[ch * cells + static_cast<std::size_t>(cell)] += f[ch * hw + i] * weight;
    }
  }
  MacCounter::add(nb * hw * c);
  return make_result<S>(Shape{c, plan.grid_rows, plan.grid_cols}, std::move(out), {features, probs},
                        [c, hw, cells, nb, cell_of = plan.cell](detail::Node<S>& self) {
                          auto& nf = *self.inputs[0];
                          auto& np = *self.inputs[1];
                          const S* g = self.grad.data();
                          S* gf = nf.requires_grad ? nf.grad_buffer().data() : nullptr;
                          S* gp = np.requires_grad ? np.grad_buffer().data() : nullptr;
                          for (std::size_t b = 0; b < nb; ++b) {
                            for (std::size_t i = 0; i < hw; ++i) {
                              const auto cell = cell_of[b * hw + i];
                              if (cell < 0) continue;
                              const auto ci = static_cast<std::size_t>(cell);
                              const S weight = np.data[b * hw + i];
                              S acc = 0;
                              for (std::size_t ch = 0; ch < c; ++ch) {
                                const S go = g[ch * cells + ci];
                                if (gf) gf[ch * hw + i] += go * weight;
                                acc += go * nf.data[ch * hw + i];
                              }
                              if (gp) gp[b * hw + i] += acc;
                            }
                          }
                        });
}

template <typename S>
Tensor<S> lift_splat(const Tensor<S>& features, const DepthDistribution<S>& depth, const CameraRig& rig,
                     const BevGrid& grid) {
  return lift_splat(features, depth, plan_splat(rig, grid, features.dim(1), features.dim(2)));
}

Tensor<float> frustum_mask(const CameraRig& rig, const BevGrid& grid) {
  std::vector<Vec3> centers;
  centers.reserve(grid.cells());
  for (std::size_t r = 0; r < grid.rows; ++r)
    for (std::size_t c = 0; c < grid.cols; ++c) centers.push_back({grid.col_center_x(c), grid.row_center_y(r), 0.0});
  std::vector<float> mask(grid.cells(), 0.0f);
  for (const auto& p : project_points(rig, centers).points) mask[p.source] = 1.0f;
  return Tensor<float>(Shape{grid.rows, grid.cols}, std::move(mask));
}

template <typename S>
Tensor<S> SemanticFromDepth<S>::operator()(const DepthDistribution<S>& depth, const BevGrid& grid) const {
  return bilinear_interpolate(proj(depth.probs), grid.rows, grid.cols);
}

template Tensor<float> lift_splat(const Tensor<float>&, const DepthDistribution<float>&, const SplatPlan&);
template Tensor<double> lift_splat(const Tensor<double>&, const DepthDistribution<double>&, const SplatPlan&);
template Tensor<float> lift_splat(const Tensor<float>&, const DepthDistribution<float>&, const CameraRig&, const BevGrid&);
template Tensor<double> lift_splat(const Tensor<double>&, const DepthDistribution<double>&, const CameraRig&,
                                   const BevGrid&);
template class SemanticFromDepth<float>;
template class SemanticFromDepth<double>;

}  // namespace diffbev
