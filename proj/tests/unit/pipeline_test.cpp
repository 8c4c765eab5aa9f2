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

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include "diffbev/error.hpp"
#include "diffbev/pipeline.hpp"

namespace diffbev {
namespace {

namespace fs = std::filesystem;

// Small enough that a training step takes milliseconds.
TrainConfig tiny_config(const fs::path& root) {
  TrainConfig c;
  c.image_size = 16;
  c.grid_size = 8;
  c.bev_channels = 4;
  c.unet_base = 8;
  c.time_dim = 8;
  c.decoder_width = 8;
  c.depth_bins = 4;
  c.timesteps = 10;
  c.n_sample_steps = 2;
  c.train_refine_steps = 2;
  c.iterations = 6;
  c.warmup_iters = 2;
  c.batch_size = 2;
  c.point_stride = 1;
  c.dataset = (root / "data").string();
  c.out_dir = (root / "run").string();
  return c;
}

class PipelineTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    root_ = fs::temp_directory_path() / (std::string("diffbev_pipeline_") + info->name());
    fs::remove_all(root_);
    fs::create_directories(root_);
    cfg_ = tiny_config(root_);
  }
  void TearDown() override { fs::remove_all(root_); }

  std::vector<SceneSample> scenes(std::size_t n) const {
    std::vector<SceneSample> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(generate_scene(100 + i, cfg_.scene()));
    return out;
  }

  fs::path root_;
  TrainConfig cfg_;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

TEST_F(PipelineTest, SameSeedGivesByteIdenticalCheckpoints) {
  Trainer a(cfg_, scenes(3)), b(cfg_, scenes(3));
  for (int i = 0; i < 3; ++i) {
    const StepRecord ra = a.step(), rb = b.step();
    EXPECT_EQ(ra.l_total, rb.l_total);
  }
  EXPECT_EQ(a.checkpoint().serialize(), b.checkpoint().serialize());
}

TEST_F(PipelineTest, DifferentSeedChangesWeights) {
  TrainConfig other = cfg_;
  other.seed = 1;
  Trainer a(cfg_, scenes(2)), b(other, scenes(2));
  EXPECT_NE(a.checkpoint().serialize(), b.checkpoint().serialize());
}

TEST_F(PipelineTest, SaveLoadSaveIsByteIdentical) {
  Trainer a(cfg_, scenes(2));
  a.step();
  a.step();
  const fs::path path = root_ / "a.dbt";
  a.checkpoint().save(path);
  Trainer b(cfg_, scenes(2));
  b.restore(TensorArchive::load(path));
  const fs::path again = root_ / "b.dbt";
  b.checkpoint().save(again);
  EXPECT_EQ(slurp(path), slurp(again));
  EXPECT_EQ(b.iter(), 2u);
}

TEST_F(PipelineTest, ResumeReproducesNextStepBitExactly) {
  Trainer straight(cfg_, scenes(3));
  for (int i = 0; i < 3; ++i) straight.step();
  const auto saved = straight.checkpoint().serialize();
  const StepRecord expected = straight.step();

  Trainer resumed(cfg_, scenes(3));
  resumed.restore(TensorArchive::deserialize(saved));
  const StepRecord got = resumed.step();
  EXPECT_EQ(got.iter, expected.iter);
  EXPECT_EQ(got.l_total, expected.l_total);
  EXPECT_EQ(got.l_wce, expected.l_wce);
  EXPECT_EQ(got.l_diff, expected.l_diff);
  EXPECT_EQ(resumed.checkpoint().serialize(), straight.checkpoint().serialize());
}

TEST_F(PipelineTest, RestoreRejectsDifferentRun) {
  Trainer a(cfg_, scenes(2));
  TrainConfig other = cfg_;
  other.lr = 1e-3;
  Trainer b(other, scenes(2));
  EXPECT_THROW(b.restore(a.checkpoint()), ValidationError);
  TrainConfig moved = cfg_;
  moved.out_dir = (root_ / "elsewhere").string();
  Trainer c(moved, scenes(2));
  EXPECT_NO_THROW(c.restore(a.checkpoint()));
}

TEST_F(PipelineTest, BatchesCoverEachEpochOnce) {
  TrainConfig c = cfg_;
  c.batch_size = 3;
  Trainer t(c, scenes(6));
  std::multiset<std::size_t> seen;
  for (std::size_t it = 1; it <= 2; ++it) {
    for (auto i : t.batch_indices(it)) seen.insert(i);
  }
  EXPECT_EQ(seen, (std::multiset<std::size_t>{0, 1, 2, 3, 4, 5}));
}

TEST_F(PipelineTest, ClassWeightsFollowInverseFrequency) {
  SceneSample s = generate_scene(3, cfg_.scene());
  auto labels = s.bev_labels.mutable_data();
  auto mask = s.valid_mask.mutable_data();
  const std::size_t cells = mask.size();
  std::fill(mask.begin(), mask.end(), 1.0f);
  std::fill(labels.begin(), labels.end(), 0.0f);
  for (std::size_t i = 0; i < cells / 4; ++i) labels[i] = 1.0f;       // class 0: 25%
  for (std::size_t i = 0; i < cells / 2; ++i) labels[cells + i] = 1.0f;  // class 1: 50%
  const auto w = dataset_class_weights({s}, 2);
  ASSERT_EQ(w.size(), 2u);
  EXPECT_NEAR(w[0] / w[1], 2.0, 1e-9);
}

TEST_F(PipelineTest, TrainWritesLogAndResumesFromFile) {
  cfg_.checkpoint_every = 3;
  const TrainResult full = train(cfg_, TrainOptions{.generate = 3});
  ASSERT_EQ(full.log.size(), cfg_.iterations);
  EXPECT_EQ(full.log.back().lr, 0.0);
  EXPECT_DOUBLE_EQ(full.log[cfg_.warmup_iters - 1].lr, cfg_.lr);

  std::istringstream log(slurp(fs::path(cfg_.out_dir) / "train_log.csv"));
  std::string header;
  std::getline(log, header);
  EXPECT_EQ(header, "iter,lr,l_wce,l_depth,l_diff,l_total,wall_ms");

  const std::string final_bytes = slurp(full.checkpoint);
  const TrainResult resumed = train(cfg_, TrainOptions{.resume = fs::path(cfg_.out_dir) / "checkpoint_3.dbt"});
  ASSERT_EQ(resumed.log.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(resumed.log[i].iter, full.log[3 + i].iter);
    EXPECT_EQ(resumed.log[i].l_total, full.log[3 + i].l_total);
  }
  EXPECT_EQ(slurp(resumed.checkpoint), final_bytes);
}

TEST_F(PipelineTest, DatasetManifestMismatchIsRejected) {
  generate_dataset(cfg_.dataset, 2, 0, cfg_.scene());
  TrainConfig other = cfg_;
  other.grid_size = 12;
  EXPECT_THROW(prepare_dataset(other), ValidationError);
  EXPECT_EQ(prepare_dataset(cfg_).size(), 2u);
}

TEST_F(PipelineTest, LoadedModelPredictsLikeTrainer) {
  const TrainResult r = train(cfg_, TrainOptions{.generate = 2});
  LoadedModel a = load_model(r.checkpoint), b = load_model(r.checkpoint);
  const auto samples = prepare_dataset(cfg_);
  const MetricReport ra = evaluate(a.model, samples), rb = evaluate(b.model, samples);
  EXPECT_EQ(ra.miou, rb.miou);
  EXPECT_EQ(ra.map, rb.map);
  const Tensor<float> p = infer(a.model, samples[0]);
  ASSERT_EQ(p.shape(), (Shape{cfg_.classes, cfg_.grid_size, cfg_.grid_size}));
  for (float v : p.data()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(Metrics, GroundTruthAsPredictionScoresOne) {
  const SceneSample s = generate_scene(11, TrainConfig{}.scene());
  MetricAccumulator acc(s.bev_labels.dim(0));
  acc.add(s.bev_labels.data(), s.bev_labels.data(), s.valid_mask.data());
  const MetricReport r = acc.report();
  EXPECT_EQ(r.miou, 1.0);
  EXPECT_EQ(r.map, 1.0);
}

TEST(InferenceImages, HeadersPixelsAndArgmaxPalette) {
  const fs::path dir = fs::temp_directory_path() / "diffbev_images";
  fs::remove_all(dir);
  // Two classes on a 2 x 3 map.
  Tensor<float> probs(Shape{2, 2, 3}, std::vector<float>{0.0f, 0.2f, 0.8f, 1.0f, 0.5f, 0.3f,  //
                                                         1.0f, 0.1f, 0.95f, 0.0f, 0.6f, 0.3f});
  write_inference_images(probs, dir);
  const std::string c0 = slurp(dir / "class_0.pgm");
  const std::string head = "P5\n3 2\n255\n";
  ASSERT_EQ(c0.size(), head.size() + 6);
  EXPECT_EQ(c0.substr(0, head.size()), head);
  const std::vector<int> want{0, 51, 204, 255, 128, 77};
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(static_cast<unsigned char>(c0[head.size() + i]), want[i]) << i;
  EXPECT_TRUE(fs::exists(dir / "class_1.pgm"));

  const std::string rgb = slurp(dir / "composite.ppm");
  const std::string rgb_head = "P6\n3 2\n255\n";
  ASSERT_EQ(rgb.size(), rgb_head.size() + 18);
  EXPECT_EQ(rgb.substr(0, rgb_head.size()), rgb_head);
  // Argmax by hand: ties keep the lower class.
  const std::vector<int> winner{1, 0, 1, 0, 1, 0};
  const std::string first_pixel_c0 = rgb.substr(rgb_head.size() + 3, 3);
  const std::string first_pixel_c1 = rgb.substr(rgb_head.size(), 3);
  EXPECT_NE(first_pixel_c0, first_pixel_c1);
  for (std::size_t i = 0; i < 6; ++i) {
    const std::string px = rgb.substr(rgb_head.size() + 3 * i, 3);
    EXPECT_EQ(px, winner[i] == 0 ? first_pixel_c0 : first_pixel_c1) << i;
  }
  fs::remove_all(dir);
}

TEST(Ablation, GridEnumeratesNineAndTwoConfigs) {
  TrainConfig base;
  base.out_dir = "grid";
  const auto configs = ablation_configs(base);
  ASSERT_EQ(configs.size(), 11u);
  std::set<std::pair<int, int>> grid;
  for (std::size_t i = 0; i < 9; ++i) {
    grid.insert({static_cast<int>(configs[i].condition), static_cast<int>(configs[i].fusion)});
    EXPECT_EQ(configs[i].encoder_mode, base.encoder_mode);
  }
  EXPECT_EQ(grid.size(), 9u);
  EXPECT_EQ(configs[9].encoder_mode, EncoderMode::kSelfAttention);
  EXPECT_EQ(configs[10].encoder_mode, EncoderMode::kConv);
  std::set<std::string> dirs;
  for (const auto& c : configs) dirs.insert(c.out_dir);
  EXPECT_EQ(dirs.size(), 11u);
}

TEST(Ablation, SelfAttentionEncoderHasMoreParameters) {
  TrainConfig sa, conv;
  conv.encoder_mode = EncoderMode::kConv;
  EXPECT_GT(DiffBevModel<float>(sa).parameters().parameter_count(),
            DiffBevModel<float>(conv).parameters().parameter_count());
}

TEST(Ablation, CsvShape) {
  AblationRow row;
  row.table = "encoder";
  row.miou = 0.5;
  const std::string csv = ablation_csv({row, row});
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "table,condition,fusion,encoder_mode,miou,map,params,macs,final_loss");
  std::size_t rows = 0;
  while (std::getline(in, line)) rows += !line.empty();
  EXPECT_EQ(rows, 2u);
}

}  // namespace
}  // namespace diffbev
