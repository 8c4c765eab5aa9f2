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
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "diffbev/archive.hpp"
#include "diffbev/config.hpp"
#include "diffbev/data.hpp"
#include "diffbev/losses.hpp"
#include "diffbev/metrics.hpp"
#include "diffbev/model.hpp"
#include "diffbev/optim.hpp"

namespace diffbev {

/// One row of the training log.
struct StepRecord {
  std::size_t iter = 0;
  double lr = 0.0;
  double l_wce = 0.0;
  double l_depth = 0.0;
  double l_diff = 0.0;
  double l_total = 0.0;
  double wall_ms = 0.0;
  double grad_norm = 0.0;
};

inline constexpr const char* kLogHeader = "iter,lr,l_wce,l_depth,l_diff,l_total,wall_ms";
std::string log_row(const StepRecord& r);

/// Seed streams derived from the run seed.
inline constexpr std::uint64_t kShuffleStream = 0x5100;
inline constexpr std::uint64_t kStepStream = 0x5200;
inline constexpr std::uint64_t kEvalStream = 0x5300;

/// Class weights from positive frequencies over the valid cells of a dataset.
std::vector<double> dataset_class_weights(const std::vector<SceneSample>& samples, std::size_t classes);

/// Owns the model, optimizer and training data of one run. Every iteration
/// draws its batch and noise from streams keyed by (seed, iteration), so a
/// run restored from a checkpoint continues exactly as the original would.
class Trainer {
 public:
  Trainer(const TrainConfig& cfg, std::vector<SceneSample> samples);

  /// Runs iteration iter() + 1. Throws NumericalError on a non-finite loss
  /// or gradient.
  StepRecord step();

  std::size_t iter() const { return iter_; }
  const TrainConfig& config() const { return cfg_; }
  DiffBevModel<float>& model() { return model_; }
  const std::vector<SceneSample>& samples() const { return samples_; }
  const std::vector<double>& class_weights() const { return weights_.class_weights; }

  TensorArchive checkpoint() const;
  /// Restores parameters, buffers, optimizer state and the iteration
  /// counter. The archive's config must describe the same run.
  void restore(const TensorArchive& archive);

  /// Dataset indices of the batch at 1-based iteration `iter`.
  std::vector<std::size_t> batch_indices(std::size_t iter) const;

 private:
  TrainConfig cfg_;
  std::vector<SceneSample> samples_;
  std::vector<ModelInput<float>> inputs_;
  DiffBevModel<float> model_;
  ParamSet<float> params_;
  std::vector<Tensor<float>> param_tensors_;
  AdamW<float> optimizer_;
  LossWeights weights_;
  std::size_t iter_ = 0;
};

/// Config keys that may differ between a checkpoint and the run resuming it.
bool same_run(const TrainConfig& a, const TrainConfig& b);

/// Loads the dataset named by the config, generating `generate` scenes first
/// when it is non-zero. Throws ValidationError on a manifest mismatch.
std::vector<SceneSample> prepare_dataset(const TrainConfig& cfg, std::size_t generate = 0);

struct TrainOptions {
  std::optional<std::filesystem::path> resume;
  std::size_t generate = 0;
  /// Called after every iteration.
  std::function<void(const StepRecord&)> on_step;
};

struct TrainResult {
  std::vector<StepRecord> log;
  std::filesystem::path checkpoint;
};

/// Trains to cfg.iterations, writing out_dir/train_log.csv and
/// out_dir/checkpoint.dbt (plus checkpoint_<iter>.dbt every
/// checkpoint_every iterations).
TrainResult train(const TrainConfig& cfg, const TrainOptions& opts = {});

/// Model and config restored from a checkpoint file.
struct LoadedModel {
  TrainConfig config;
  DiffBevModel<float> model;
};
LoadedModel load_model(const std::filesystem::path& checkpoint);

/// Full inference on every sample, binarized at 0.5. Sample i draws its
/// reverse-chain noise from a stream keyed by (seed, i).
MetricReport evaluate(DiffBevModel<float>& model, const std::vector<SceneSample>& samples);

std::vector<std::string> class_names(std::size_t classes);

/// Occupancy probabilities [M, rows, cols] for one scene.
Tensor<float> infer(DiffBevModel<float>& model, const SceneSample& scene);

/// Writes class_<i>.pgm per class and composite.ppm (palette color of the
/// per-cell argmax class) into `dir`.
void write_inference_images(const Tensor<float>& probs, const std::filesystem::path& dir);

struct AblationRow {
  std::string table;  // "condition_fusion" or "encoder"
  ConditionKind condition = ConditionKind::kSBev;
  FusionMode fusion = FusionMode::kCrossAttention;
  EncoderMode encoder = EncoderMode::kSelfAttention;
  double miou = 0.0;
  double map = 0.0;
  std::size_t params = 0;
  std::size_t macs = 0;
  double final_loss = 0.0;
};

/// The 3 x 3 condition/fusion grid on the base encoder, then both encoder
/// modes on the base condition and fusion.
std::vector<TrainConfig> ablation_configs(const TrainConfig& base);

std::vector<AblationRow> ablate(const TrainConfig& base, const std::function<void(const AblationRow&)>& on_row = {});

std::string ablation_csv(const std::vector<AblationRow>& rows);

/// Multiply-accumulates of one inference pass with n_sample_steps.
std::size_t inference_macs(DiffBevModel<float>& model);

}  // namespace diffbev
