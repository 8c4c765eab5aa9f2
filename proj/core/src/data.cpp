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

#include "diffbev/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "diffbev/error.hpp"
#include "diffbev/rng.hpp"

namespace diffbev {

namespace {

constexpr double kFarPlane = 100.0;

// Rounds to the nearest float; the volatile store keeps the narrowing from being folded away.
double f32(double v) {
  volatile float narrowed = static_cast<float>(v);
  return narrowed;
}

CameraRig rounded(const CameraRig& rig) {
  CameraRig out = rig;
  for (auto& row : out.K) for (auto& v : row) v = f32(v);
  for (auto& row : out.R) for (auto& v : row) v = f32(v);
  for (auto& v : out.t) v = f32(v);
  out.bins.d_min = f32(out.bins.d_min);
  out.bins.d_max = f32(out.bins.d_max);
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Slab intersection of the ray c + s d (s > 0) with the box; returns the entry distance.
std::optional<double> hit_box(const Box& b, const Vec3& c, const Vec3& d) {
  const double lo[3] = {b.x0, b.y0, 0.0};
  const double hi[3] = {b.x1, b.y1, b.height};
  double near = 0.0, far = kFarPlane;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(d[a]) < 1e-12) {
      if (c[a] < lo[a] || c[a] > hi[a]) return std::nullopt;
      continue;
    }
    double s0 = (lo[a] - c[a]) / d[a], s1 = (hi[a] - c[a]) / d[a];
    if (s0 > s1) std::swap(s0, s1);
    near = std::max(near, s0);
    far = std::min(far, s1);
    if (near > far) return std::nullopt;
  }
  return near;
}

bool inside(const GroundRegion& r, double x, double y) { return x >= r.x0 && x < r.x1 && y >= r.y0 && y < r.y1; }
bool inside(const Box& b, double x, double y) { return x >= b.x0 && x < b.x1 && y >= b.y0 && y < b.y1; }

struct Rgb {
  double r, g, b;
};

constexpr Rgb kSky{0.70, 0.80, 0.95};
constexpr Rgb kGround{0.42, 0.55, 0.33};
constexpr Rgb kDrivable{0.30, 0.30, 0.34};
constexpr Rgb kBoxPalette[kMaxClasses] = {{0.0, 0.0, 0.0},    {0.85, 0.20, 0.15}, {0.20, 0.35, 0.85},
                                          {0.90, 0.75, 0.10}, {0.60, 0.20, 0.70}, {0.10, 0.70, 0.70},
                                          {0.95, 0.50, 0.10}, {0.55, 0.35, 0.20}};

}  // namespace

void SceneConfig::validate() const {
  rig.validate();
  grid.validate();
  if (classes < 1 || classes > kMaxClasses) throw ValidationError("scene config: classes must be in [1, 8]");
  if (min_regions > max_regions || min_boxes > max_boxes) throw ValidationError("scene config: min count above max");
  if (max_boxes > 0 && classes < 2) throw ValidationError("scene config: boxes need at least 2 classes");
  if (point_stride == 0) throw ValidationError("scene config: point_stride must be positive");
}

std::string SceneConfig::to_text() const {
  std::ostringstream os;
  os << "image " << rig.width << " " << rig.height << "\nK";
  for (const auto& row : rig.K) for (double v : row) os << " " << fmt(v);
  os << "\nR";
  for (const auto& row : rig.R) for (double v : row) os << " " << fmt(v);
  os << "\nt";
  for (double v : rig.t) os << " " << fmt(v);
  os << "\nbins " << fmt(rig.bins.d_min) << " " << fmt(rig.bins.d_max) << " " << rig.bins.count;
  os << "\ngrid " << fmt(grid.x_min) << " " << fmt(grid.x_max) << " " << fmt(grid.y_min) << " " << fmt(grid.y_max)
     << " " << grid.rows << " " << grid.cols;
  os << "\nclasses " << classes << "\nregions " << min_regions << " " << max_regions << "\nboxes " << min_boxes << " "
     << max_boxes << "\npoint_stride " << point_stride << "\n";
  return os.str();
}

std::uint64_t SceneConfig::hash() const {
  // FNV-1a, 64 bit.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : to_text()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

SceneLayout random_layout(std::uint64_t seed, const SceneConfig& cfg) {
  cfg.validate();
  Rng rng(mix_seed(seed, 0x5ce4e));
  SceneLayout layout;
  const std::size_t n_regions = cfg.min_regions + rng.below(cfg.max_regions - cfg.min_regions + 1);
  for (std::size_t i = 0; i < n_regions; ++i) {
    const double width = rng.uniform(3.0, 7.0);
    if (rng.uniform() < 0.6) {
      // Road running away from the camera.
      const double yc = rng.uniform(-4.0, 4.0), x0 = rng.uniform(0.0, 4.0);
      layout.regions.push_back({x0, x0 + rng.uniform(8.0, 16.0), yc - width / 2, yc + width / 2});
    } else {
      // Crossing road.
      const double xc = rng.uniform(4.0, 10.0), half = rng.uniform(4.0, 10.0), yc = rng.uniform(-2.0, 2.0);
      layout.regions.push_back({xc - width / 2, xc + width / 2, yc - half, yc + half});
    }
  }
  const std::size_t n_boxes = cfg.min_boxes + rng.below(cfg.max_boxes - cfg.min_boxes + 1);
  for (std::size_t i = 0; i < n_boxes; ++i) {
    for (int attempt = 0; attempt < 20; ++attempt) {
      const double xc = rng.uniform(3.5, 10.5);
      const double yc = rng.uniform(-0.7, 0.7) * xc;
      const double len = rng.uniform(3.5, 4.8), wid = rng.uniform(1.6, 2.2);
      const bool along_x = rng.uniform() < 0.7;
      const double ex = along_x ? len : wid, ey = along_x ? wid : len;
      Box b{1 + rng.below(cfg.classes - 1), xc - ex / 2, xc + ex / 2, yc - ey / 2, yc + ey / 2, rng.uniform(1.4, 1.8)};
      const bool overlaps = std::any_of(layout.boxes.begin(), layout.boxes.end(), [&](const Box& o) {
        return b.x0 < o.x1 + 0.5 && o.x0 < b.x1 + 0.5 && b.y0 < o.y1 + 0.5 && o.y0 < b.y1 + 0.5;
      });
      if (!overlaps) {
        layout.boxes.push_back(b);
        break;
      }
    }
  }
  return layout;
}

RayHit cast_ray(const SceneLayout& layout, const CameraRig& rig, double u, double v) {
  const double fy = rig.K[1][1], fx = rig.K[0][0];
  const double yc = (v + 0.5 - rig.K[1][2]) / fy;
  const double xc = (u + 0.5 - rig.K[0][2] - rig.K[0][1] * yc) / fx;
  const Vec3 c = rig.to_world({0.0, 0.0, 0.0});
  const Vec3 p = rig.to_world({xc, yc, 1.0});
  const Vec3 d{p[0] - c[0], p[1] - c[1], p[2] - c[2]};

  RayHit hit;
  hit.distance = std::numeric_limits<double>::infinity();
  if (d[2] < 0.0) {
    const double s = -c[2] / d[2];
    if (s < kFarPlane) {
      hit.distance = s;
      hit.point = {c[0] + s * d[0], c[1] + s * d[1], 0.0};
      hit.kind = RayHit::kGround;
      for (std::size_t i = 0; i < layout.regions.size(); ++i) {
        if (inside(layout.regions[i], hit.point[0], hit.point[1])) {
          hit.kind = RayHit::kRegion;
          hit.index = i;
          break;
        }
      }
    }
  }
  for (std::size_t i = 0; i < layout.boxes.size(); ++i) {
    const auto s = hit_box(layout.boxes[i], c, d);
    if (s && *s < hit.distance) {
      hit.distance = *s;
      hit.point = {c[0] + *s * d[0], c[1] + *s * d[1], c[2] + *s * d[2]};
      hit.kind = RayHit::kBox;
      hit.index = i;
    }
  }
  return hit;
}

SceneSample render_scene(const SceneLayout& layout, const SceneConfig& cfg) {
  cfg.validate();
  for (const auto& b : layout.boxes) {
    if (b.cls < 1 || b.cls >= cfg.classes) throw ValidationError("scene layout: box class out of range");
  }
  SceneSample s;
  s.rig = rounded(cfg.rig);
  const std::size_t w = s.rig.width, h = s.rig.height, plane = w * h;
  s.image = Tensor<float>(Shape{3, h, w});
  auto img = s.image.mutable_data();
  for (std::size_t v = 0; v < h; ++v) {
    for (std::size_t u = 0; u < w; ++u) {
      const RayHit hit = cast_ray(layout, s.rig, static_cast<double>(u), static_cast<double>(v));
      Rgb col = kSky;
      double shade = 1.0;
      switch (hit.kind) {
        case RayHit::kSky:
          break;
        case RayHit::kGround:
        case RayHit::kRegion: {
          col = hit.kind == RayHit::kGround ? kGround : kDrivable;
          const long checker = static_cast<long>(std::floor(hit.point[0])) + static_cast<long>(std::floor(hit.point[1]));
          shade = (checker & 1) ? 1.05 : 0.95;
          break;
        }
        case RayHit::kBox: {
          const Box& b = layout.boxes[hit.index];
          col = kBoxPalette[b.cls];
          const double eps = 1e-6;
          if (std::abs(hit.point[2] - b.height) < eps) shade = 1.0;
          else if (std::abs(hit.point[0] - b.x0) < eps || std::abs(hit.point[0] - b.x1) < eps) shade = 0.8;
          else shade = 0.6;
          break;
        }
      }
      const std::size_t p = v * w + u;
      img[p] = static_cast<float>(std::clamp(col.r * shade, 0.0, 1.0));
      img[plane + p] = static_cast<float>(std::clamp(col.g * shade, 0.0, 1.0));
      img[2 * plane + p] = static_cast<float>(std::clamp(col.b * shade, 0.0, 1.0));
      const bool sampled = u % cfg.point_stride == 0 && v % cfg.point_stride == 0;
      if (sampled && (hit.kind == RayHit::kRegion || hit.kind == RayHit::kBox)) {
        s.points.push_back({f32(hit.point[0]), f32(hit.point[1]), f32(hit.point[2])});
      }
    }
  }

  const BevGrid& g = cfg.grid;
  s.bev_labels = Tensor<float>(Shape{cfg.classes, g.rows, g.cols});
  auto lab = s.bev_labels.mutable_data();
  for (std::size_t r = 0; r < g.rows; ++r) {
    for (std::size_t c = 0; c < g.cols; ++c) {
      const double x = g.col_center_x(c), y = g.row_center_y(r);
      const std::size_t cell = r * g.cols + c;
      for (const auto& reg : layout.regions) {
        if (inside(reg, x, y)) lab[cell] = 1.0f;
      }
      for (const auto& b : layout.boxes) {
        if (inside(b, x, y)) lab[b.cls * g.cells() + cell] = 1.0f;
      }
    }
  }
  s.valid_mask = frustum_mask(s.rig, g);
  return s;
}

TensorArchive scene_to_archive(const SceneSample& s) {
  TensorArchive a;
  a.put("image", s.image);
  std::vector<float> pts;
  pts.reserve(s.points.size() * 3);
  for (const auto& p : s.points) {
    for (double v : p) pts.push_back(static_cast<float>(v));
  }
  a.put("points", Shape{s.points.size(), 3}, pts);
  a.put("bev_labels", s.bev_labels);
  a.put("valid_mask", s.valid_mask);
  std::vector<float> k, r;
  for (const auto& row : s.rig.K) for (double v : row) k.push_back(static_cast<float>(v));
  for (const auto& row : s.rig.R) for (double v : row) r.push_back(static_cast<float>(v));
  a.put("K", Shape{3, 3}, k);
  a.put("R", Shape{3, 3}, r);
  const std::vector<float> t{static_cast<float>(s.rig.t[0]), static_cast<float>(s.rig.t[1]),
                             static_cast<float>(s.rig.t[2])};
  a.put("t", Shape{3}, t);
  const std::vector<float> bins{static_cast<float>(s.rig.bins.d_min), static_cast<float>(s.rig.bins.d_max),
                                static_cast<float>(s.rig.bins.count)};
  a.put("depth_bins", Shape{3}, bins);
  return a;
}

SceneSample scene_from_archive(const TensorArchive& a) {
  SceneSample s;
  s.image = a.tensor("image");
  if (s.image.rank() != 3 || s.image.dim(0) != 3) throw ValidationError("scene: image must be [3, H, W]");
  const auto pts = a.tensor("points");
  if (pts.rank() != 2 || pts.dim(1) != 3) throw ValidationError("scene: points must be [N, 3]");
  for (std::size_t i = 0; i < pts.dim(0); ++i) {
    s.points.push_back({pts.data()[3 * i], pts.data()[3 * i + 1], pts.data()[3 * i + 2]});
  }
  s.bev_labels = a.tensor("bev_labels");
  s.valid_mask = a.tensor("valid_mask");
  if (s.bev_labels.rank() != 3 || s.valid_mask.rank() != 2 || s.bev_labels.dim(1) != s.valid_mask.dim(0) ||
      s.bev_labels.dim(2) != s.valid_mask.dim(1)) {
    throw ValidationError("scene: bev_labels " + to_string(s.bev_labels.shape()) + " and valid_mask " +
                          to_string(s.valid_mask.shape()) + " disagree");
  }
  const auto k = a.tensor("K"), r = a.tensor("R"), t = a.tensor("t"), bins = a.tensor("depth_bins");
  if (k.numel() != 9 || r.numel() != 9 || t.numel() != 3 || bins.numel() != 3) {
    throw ValidationError("scene: malformed camera entries");
  }
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      s.rig.K[i][j] = k.data()[3 * i + j];
      s.rig.R[i][j] = r.data()[3 * i + j];
    }
    s.rig.t[i] = t.data()[i];
  }
  s.rig.width = s.image.dim(2);
  s.rig.height = s.image.dim(1);
  s.rig.bins.d_min = bins.data()[0];
  s.rig.bins.d_max = bins.data()[1];
  s.rig.bins.count = static_cast<std::size_t>(bins.data()[2]);
  s.rig.validate();
  return s;
}

void generate_dataset(const std::filesystem::path& dir, std::size_t n, std::uint64_t seed, const SceneConfig& cfg) {
  cfg.validate();
  std::filesystem::create_directories(dir);
  std::ostringstream manifest;
  char hash[24];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(cfg.hash()));
  manifest << "# diffbev dataset\nconfig_hash " << hash << "\n";
  for (std::size_t i = 0; i < n; ++i) {
    const std::string name = "scene_" + std::to_string(seed + i) + ".dbt";
    scene_to_archive(generate_scene(seed + i, cfg)).save(dir / name);
    manifest << "file " << name << "\n";
  }
  std::ofstream out(dir / "manifest.txt", std::ios::binary);
  out << manifest.str();
  if (!out) throw ValidationError("cannot write " + (dir / "manifest.txt").string());
}

Dataset load_dataset(const std::filesystem::path& dir, std::uint64_t expected_hash) {
  std::ifstream in(dir / "manifest.txt");
  if (!in) throw ValidationError("dataset " + dir.string() + ": missing manifest.txt");
  Dataset ds;
  bool have_hash = false;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string key, value;
    ls >> key >> value;
    if (key == "config_hash") {
      ds.config_hash = std::stoull(value, nullptr, 16);
      have_hash = true;
    } else if (key == "file" && !value.empty()) {
      ds.files.push_back(value);
    } else {
      throw ValidationError("dataset manifest: unrecognized line '" + line + "'");
    }
  }
  if (!have_hash) throw ValidationError("dataset manifest: missing config_hash");
  if (expected_hash != 0 && expected_hash != ds.config_hash) {
    char buf[80];
    std::snprintf(buf, sizeof buf, "%016llx, expected %016llx", static_cast<unsigned long long>(ds.config_hash),
                  static_cast<unsigned long long>(expected_hash));
    throw ValidationError("dataset " + dir.string() + " was generated with config hash " + buf);
  }
  if (ds.files.empty()) throw ValidationError("dataset " + dir.string() + " is empty");
  for (const auto& f : ds.files) ds.samples.push_back(scene_from_archive(TensorArchive::load(dir / f)));
  return ds;
}

}  // namespace diffbev
