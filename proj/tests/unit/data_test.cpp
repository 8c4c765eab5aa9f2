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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "diffbev/data.hpp"
#include "diffbev/error.hpp"
#include "diffbev/metrics.hpp"
#include "diffbev/rng.hpp"

namespace diffbev {
namespace {

namespace fs = std::filesystem;

fs::path scratch_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("diffbev_data_test_" + name);
  fs::remove_all(dir);
  return dir;
}

TEST(GenerateScene, SameSeedIsBitIdentical) {
  SceneConfig cfg;
  EXPECT_EQ(scene_to_archive(generate_scene(11, cfg)).serialize(), scene_to_archive(generate_scene(11, cfg)).serialize());
  EXPECT_NE(scene_to_archive(generate_scene(11, cfg)).serialize(), scene_to_archive(generate_scene(12, cfg)).serialize());
}

TEST(GenerateScene, EmptyConfigGivesEmptyScene) {
  SceneConfig cfg;
  cfg.min_regions = cfg.max_regions = 0;
  cfg.min_boxes = cfg.max_boxes = 0;
  auto s = generate_scene(3, cfg);
  EXPECT_TRUE(s.points.empty());
  for (float v : s.bev_labels.data()) EXPECT_EQ(v, 0.0f);
  EXPECT_EQ(s.bev_labels.shape(), (Shape{2, 32, 32}));
}

TEST(GenerateScene, BoxFootprintMatchesCellCenterOracle) {
  SceneConfig cfg;
  SceneLayout layout;
  // 4 m long, 2 m wide, centered 5 m ahead of the camera.
  layout.boxes.push_back({1, 3.0, 7.0, -1.0, 1.0, 1.5});
  auto s = render_scene(layout, cfg);
  const auto& g = cfg.grid;
  std::size_t count = 0;
  for (std::size_t r = 0; r < g.rows; ++r) {
    for (std::size_t c = 0; c < g.cols; ++c) {
      const double x = -10.0 + (c + 0.5) * 20.0 / 32.0, y = -10.0 + (r + 0.5) * 20.0 / 32.0;
      const bool in = x >= 3.0 && x < 7.0 && y >= -1.0 && y < 1.0;
      count += in;
      EXPECT_EQ(s.bev_labels.at({1, r, c}), in ? 1.0f : 0.0f) << r << "," << c;
      EXPECT_EQ(s.bev_labels.at({0, r, c}), 0.0f);
    }
  }
  // Column centers 3.4375 .. 6.5625 (6) and row centers -0.9375 .. 0.9375 (4).
  EXPECT_EQ(count, 24u);
  EXPECT_FALSE(s.points.empty());
}

TEST(GenerateScene, PointsLandOnTheirOwnObjects) {
  SceneConfig cfg;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto layout = random_layout(seed, cfg);
    const auto s = render_scene(layout, cfg);
    const auto proj = project_points(s.rig, s.points);
    ASSERT_FALSE(proj.points.empty());
    for (const auto& p : proj.points) {
      const auto hit = cast_ray(layout, s.rig, std::floor(p.u), std::floor(p.v));
      ASSERT_TRUE(hit.kind == RayHit::kRegion || hit.kind == RayHit::kBox);
      const auto& src = s.points[p.source];
      for (int a = 0; a < 3; ++a) EXPECT_NEAR(hit.point[a], src[a], 1e-3);
    }
    // Points beyond the depth range are the only ones projection drops.
    for (const auto& q : s.points) {
      const auto cam = s.rig.to_camera(q);
      const bool in_range = cam[2] >= s.rig.bins.d_min && cam[2] <= s.rig.bins.d_max;
      if (in_range) EXPECT_EQ(project_points(s.rig, std::vector<Vec3>{q}).points.size(), 1u);
    }
  }
}

TEST(GenerateScene, ImageAndLabelsAreWellFormed) {
  SceneConfig cfg;
  cfg.classes = 4;
  auto s = generate_scene(21, cfg);
  EXPECT_EQ(s.image.shape(), (Shape{3, 64, 64}));
  for (float v : s.image.data()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
  for (float v : s.bev_labels.data()) EXPECT_TRUE(v == 0.0f || v == 1.0f);
  EXPECT_EQ(s.bev_labels.dim(0), 4u);
}

TEST(GenerateScene, RejectsBadConfig) {
  SceneConfig cfg;
  cfg.grid.x_max = cfg.grid.x_min;
  EXPECT_THROW(generate_scene(1, cfg), ValidationError);
  SceneConfig many;
  many.classes = 9;
  EXPECT_THROW(generate_scene(1, many), ValidationError);
}

TEST(Dataset, RoundTripIsBitExact) {
  SceneConfig cfg;
  auto dir = scratch_dir("roundtrip");
  generate_dataset(dir, 3, 40, cfg);
  EXPECT_TRUE(fs::exists(dir / "scene_41.dbt"));
  auto ds = load_dataset(dir, cfg.hash());
  ASSERT_EQ(ds.samples.size(), 3u);
  EXPECT_EQ(ds.files[2], "scene_42.dbt");
  for (std::size_t i = 0; i < 3; ++i) {
    const auto fresh = generate_scene(40 + i, cfg);
    EXPECT_EQ(scene_to_archive(ds.samples[i]).serialize(), scene_to_archive(fresh).serialize());
    ASSERT_EQ(ds.samples[i].points.size(), fresh.points.size());
    for (std::size_t k = 0; k < fresh.points.size(); ++k) EXPECT_EQ(ds.samples[i].points[k], fresh.points[k]);
    EXPECT_EQ(ds.samples[i].rig.K, fresh.rig.K);
    EXPECT_EQ(ds.samples[i].rig.t, fresh.rig.t);
  }
  const auto names = {"image", "points", "bev_labels", "valid_mask", "K", "R", "t", "depth_bins"};
  auto archive = TensorArchive::load(dir / "scene_40.dbt");
  for (const char* n : names) EXPECT_TRUE(archive.contains(n)) << n;
  fs::remove_all(dir);
}

TEST(Dataset, ManifestMismatchIsRejected) {
  SceneConfig cfg;
  auto dir = scratch_dir("mismatch");
  generate_dataset(dir, 1, 0, cfg);
  SceneConfig other = cfg;
  other.classes = 3;
  EXPECT_NE(other.hash(), cfg.hash());
  EXPECT_THROW(load_dataset(dir, other.hash()), ValidationError);
  EXPECT_THROW(load_dataset(dir / "missing"), ValidationError);
  fs::remove_all(dir);
}

std::vector<float> bits(std::initializer_list<int> v) { return std::vector<float>(v.begin(), v.end()); }

TEST(Iou, Examples) {
  const auto all = bits({1, 1, 1, 1, 1, 1});
  EXPECT_EQ(iou(bits({1, 0, 1, 0, 0, 0}), bits({1, 0, 1, 0, 0, 0}), all), 1.0);
  EXPECT_EQ(iou(bits({1, 1, 1, 0, 0, 0}), bits({0, 1, 1, 1, 0, 0}), all), 0.5);
  EXPECT_EQ(iou(bits({0, 0, 0, 0, 0, 0}), bits({0, 0, 0, 0, 0, 0}), all), 1.0);
  // Masked-out disagreement does not count.
  EXPECT_EQ(iou(bits({1, 1, 0, 0, 0, 0}), bits({1, 0, 0, 0, 0, 0}), bits({1, 0, 1, 1, 1, 1})), 1.0);
  EXPECT_THROW(iou(bits({1}), bits({1, 0}), bits({1, 1})), ValidationError);
}

TEST(Iou, SymmetricAndMonotoneInFalsePositives) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<float> pred(30), gt(30), mask(30, 1.0f);
    for (std::size_t i = 0; i < 30; ++i) {
      pred[i] = rng.uniform() < 0.4;
      gt[i] = rng.uniform() < 0.4;
    }
    EXPECT_EQ(iou(pred, gt, mask), iou(gt, pred, mask));
    double prev = iou(pred, gt, mask);
    for (std::size_t i = 0; i < 30; ++i) {
      if (gt[i] == 0.0f && pred[i] == 0.0f) {
        pred[i] = 1.0f;
        const double now = iou(pred, gt, mask);
        EXPECT_LE(now, prev);
        prev = now;
      }
    }
  }
}

TEST(AveragePrecision, Examples) {
  EXPECT_EQ(*average_precision(std::vector<float>{0.9f, 0.8f, 0.3f, 0.1f}, bits({1, 1, 0, 0}), bits({1, 1, 1, 1})),
            1.0);
  EXPECT_EQ(*average_precision(std::vector<float>{0.9f, 0.4f}, bits({0, 1}), bits({1, 1})), 0.5);
  EXPECT_FALSE(average_precision(std::vector<float>{0.9f, 0.4f}, bits({0, 0}), bits({1, 1})).has_value());
  // Constant scores: one threshold, precision equals prevalence.
  EXPECT_DOUBLE_EQ(*average_precision(std::vector<float>(8, 0.5f), bits({1, 0, 0, 1, 0, 1, 0, 0}),
                                      std::vector<float>(8, 1.0f)),
                   3.0 / 8.0);
}

// Independent oracle: walk a strictly ranked list and integrate the
// positive-admitting PR points with a (0, p_first) left end.
double ap_oracle(const std::vector<int>& ranked_labels) {
  const double total = std::count(ranked_labels.begin(), ranked_labels.end(), 1);
  std::vector<double> r{0.0}, p;
  double tp = 0;
  for (std::size_t k = 0; k < ranked_labels.size(); ++k) {
    if (!ranked_labels[k]) continue;
    tp += 1;
    r.push_back(tp / total);
    p.push_back(tp / static_cast<double>(k + 1));
  }
  p.insert(p.begin(), p.front());
  double area = 0;
  for (std::size_t i = 1; i < r.size(); ++i) area += (r[i] - r[i - 1]) * (p[i] + p[i - 1]) / 2;
  return area;
}

TEST(AveragePrecision, RandomRankingMatchesPermutationOracle) {
  // Every placement of k positives among 8 distinct-score cells.
  const std::vector<float> scores{0.95f, 0.85f, 0.75f, 0.65f, 0.55f, 0.45f, 0.35f, 0.25f};
  const std::vector<float> mask(8, 1.0f);
  for (int k = 1; k < 8; ++k) {
    std::vector<int> labels(8, 0);
    std::fill(labels.begin(), labels.begin() + k, 1);
    std::sort(labels.begin(), labels.end());
    double ours = 0, oracle = 0;
    int n = 0;
    do {
      std::vector<float> gt(labels.begin(), labels.end());
      ours += *average_precision(scores, gt, mask);
      oracle += ap_oracle(labels);
      ++n;
    } while (std::next_permutation(labels.begin(), labels.end()));
    EXPECT_NEAR(ours / n, oracle / n, 0.05) << k;
    EXPECT_NEAR(ours / n, oracle / n, 1e-12) << k;
  }
}

TEST(AveragePrecision, RandomScoresApproachPrevalence) {
  Rng rng(8);
  const std::size_t n = 20000;
  std::vector<float> scores(n), gt(n), mask(n, 1.0f);
  double pos = 0;
  for (std::size_t i = 0; i < n; ++i) {
    scores[i] = static_cast<float>(rng.uniform());
    gt[i] = rng.uniform() < 0.3;
    pos += gt[i];
  }
  EXPECT_NEAR(*average_precision(scores, gt, mask), pos / n, 0.05);
}

TEST(MetricAccumulator, InjectedGroundTruthScoresPerfectly) {
  SceneConfig cfg;
  MetricAccumulator acc(2);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    auto s = generate_scene(seed, cfg);
    acc.add(s.bev_labels.data(), s.bev_labels.data(), s.valid_mask.data());
  }
  auto r = acc.report();
  EXPECT_EQ(r.miou, 1.0);
  EXPECT_EQ(r.map, 1.0);
  auto csv = report_csv(r, {"drivable", "vehicle"});
  EXPECT_EQ(csv.substr(0, 13), "class,iou,ap\n");
  EXPECT_NE(csv.find("mean,1.000000,1.000000"), std::string::npos);
}

TEST(MetricAccumulator, SumsCountsBeforeDividing) {
  MetricAccumulator acc(1);
  // Sample 1: inter 1, union 1. Sample 2: inter 0, union 3.
  acc.add(std::vector<float>{0.9f, 0.1f}, bits({1, 0}), bits({1, 1}));
  acc.add(std::vector<float>{0.9f, 0.9f, 0.2f}, bits({0, 0, 1}), bits({1, 1, 1}));
  auto r = acc.report();
  EXPECT_DOUBLE_EQ(r.per_class_iou[0], 1.0 / 4.0);
  MetricAccumulator absent(2);
  absent.add(std::vector<float>{0.9f, 0.1f}, bits({1, 0}), bits({1}));
  auto ra = absent.report();
  EXPECT_FALSE(ra.present[1]);
  EXPECT_EQ(ra.miou, 1.0);
}

}  // namespace
}  // namespace diffbev
