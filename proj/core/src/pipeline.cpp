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

#include "diffbev/pipeline.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "diffbev/error.hpp"
#include "diffbev/ops.hpp"

namespace diffbev {

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

void check_sample(const SceneSample& s, const TrainConfig& cfg) {
  const Shape labels{cfg.classes, cfg.grid_size, cfg.grid_size};
  const Shape image{3, cfg.image_size, cfg.image_size};
  if (s.bev_labels.shape() != labels || s.image.shape() != image) {
    throw ValidationError("dataset scene has labels " + to_string(s.bev_labels.shape()) + " and image " +
                          to_string(s.image.shape()) + "; config expects " + to_string(labels) + " and " +
                          to_string(image));
  }
}

void copy_into(Tensor<float>& dst, const TensorArchive& a, const std::string& name) {
  const Tensor<float> src = a.tensor(name);
  if (src.shape() != dst.shape()) {
    throw ValidationError("checkpoint entry " + name + " has shape " + to_string(src.shape()) + ", model expects " +
                          to_string(dst.shape()));
  }
  std::copy(src.data().begin(), src.data().end(), dst.mutable_data().begin());
}

void put_schedule(TensorArchive& a, const NoiseSchedule& sched) {
  const std::vector<float> beta(sched.beta.begin(), sched.beta.end());
  const std::vector<float> alpha_bar(sched.alpha_bar.begin(), sched.alpha_bar.end());
  a.put("sched.beta", Shape{beta.size()}, beta);
  a.put("sched.alpha_bar", Shape{alpha_bar.size()}, alpha_bar);
}

void check_schedule(const TensorArchive& a, const NoiseSchedule& sched) {
  const Tensor<float> beta = a.tensor("sched.beta");
  const Tensor<float> alpha_bar = a.tensor("sched.alpha_bar");
  if (beta.numel() != sched.steps() || alpha_bar.numel() != sched.steps()) {
    throw ValidationError("checkpoint schedule length does not match the config");
  }
  for (std::size_t i = 0; i < sched.steps(); ++i) {
    if (beta.data()[i] != static_cast<float>(sched.beta[i]) ||
        alpha_bar.data()[i] != static_cast<float>(sched.alpha_bar[i])) {
      throw ValidationError("checkpoint schedule does not match the config at step " + std::to_string(i + 1));
    }
  }
}

void restore_parameters(const ParamSet<float>& set, const TensorArchive& a) {
  for (auto p : set.params) copy_into(p.tensor, a, p.name);
  for (auto b : set.buffers) copy_into(b.tensor, a, b.name);
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << bytes;
}

}  // namespace

std::string log_row(const StepRecord& r) {
  return std::to_string(r.iter) + "," + fmt(r.lr) + "," + fmt(r.l_wce) + "," + fmt(r.l_depth) + "," + fmt(r.l_diff) +
         "," + fmt(r.l_total) + "," + fmt(r.wall_ms);
}

std::vector<double> dataset_class_weights(const std::vector<SceneSample>& samples, std::size_t classes) {
  std::vector<double> positives(classes, 0.0);
  double valid = 0.0;
  for (const auto& s : samples) {
    const auto mask = s.valid_mask.data();
    const auto labels = s.bev_labels.data();
    const std::size_t cells = mask.size();
    for (std::size_t i = 0; i < cells; ++i) {
      if (mask[i] <= 0.5f) continue;
      valid += 1.0;
      for (std::size_t c = 0; c < classes; ++c) positives[c] += labels[c * cells + i] > 0.5f ? 1.0 : 0.0;
    }
  }
  return class_weights_from_counts(positives, valid);
}

Trainer::Trainer(const TrainConfig& cfg, std::vector<SceneSample> samples)
    : cfg_(cfg), samples_(std::move(samples)), model_(cfg) {
  if (samples_.empty()) throw ValidationError("training dataset is empty");
  for (const auto& s : samples_) {
    check_sample(s, cfg_);
    inputs_.push_back(make_input<float>(s, Backbone<float>::kStride));
  }
  params_ = model_.parameters();
  param_tensors_ = params_.param_tensors();
  optimizer_ = AdamW<float>(param_tensors_, AdamWOptions{0.9, 0.999, 1e-8, cfg_.weight_decay});
  weights_.lambda1 = cfg_.lambda1;
  weights_.lambda2 = cfg_.lambda2;
  weights_.class_weights = dataset_class_weights(samples_, cfg_.classes);
  // Checkpoints hold float32, so a restored run must see the same values.
  for (double& w : weights_.class_weights) w = static_cast<float>(w);
  weights_.validate(cfg_.classes);
}

std::vector<std::size_t> Trainer::batch_indices(std::size_t iter) const {
  const std::size_t n = samples_.size();
  std::vector<std::size_t> out;
  std::size_t cached_epoch = SIZE_MAX;
  std::vector<std::size_t> perm(n);
  for (std::size_t j = 0; j < cfg_.batch_size; ++j) {
    const std::size_t k = (iter - 1) * cfg_.batch_size + j;
    const std::size_t epoch = k / n;
    if (epoch != cached_epoch) {
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      Rng rng(mix_seed(cfg_.seed, kShuffleStream + epoch));
      for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
      cached_epoch = epoch;
    }
    out.push_back(perm[k % n]);
  }
  return out;
}

StepRecord Trainer::step() {
  const auto start = std::chrono::steady_clock::now();
  const std::size_t it = iter_ + 1;
  if (it > cfg_.iterations) throw ValidationError("training already reached iterations = " + std::to_string(cfg_.iterations));
  StepRecord rec;
  rec.iter = it;
  rec.lr = lr_at(it, cfg_.iterations, cfg_.warmup_iters, cfg_.lr);

  optimizer_.zero_grad();
  const Mode mode;
  const std::vector<std::size_t> batch = batch_indices(it);
  std::vector<const ModelInput<float>*> inputs;
  std::vector<Rng> rngs;
  for (std::size_t j = 0; j < batch.size(); ++j) {
    inputs.push_back(&inputs_[batch[j]]);
    rngs.emplace_back(mix_seed(mix_seed(cfg_.seed, kStepStream + it), j));
  }
  const std::vector<LossParts<float>> parts =
      model_.loss(inputs, mode, rngs, weights_, cfg_.train_refine_steps, cfg_.detach_diffusion);
  std::vector<Tensor<float>> totals;
  for (const auto& p : parts) {
    rec.l_wce += p.wce.item();
    rec.l_depth += p.depth.item();
    rec.l_diff += p.diff.item();
    rec.l_total += p.total.item();
    totals.push_back(p.total);
  }
  backward(scale(reduce_sum(concat(totals, 0)), 1.0f / static_cast<float>(batch.size())));
  const double b = static_cast<double>(batch.size());
  rec.l_wce /= b;
  rec.l_depth /= b;
  rec.l_diff /= b;
  rec.l_total /= b;

  rec.grad_norm = clip_grad_norm(param_tensors_, cfg_.grad_clip);
  if (!std::isfinite(rec.grad_norm)) {
    throw NumericalError("non-finite gradient norm at iteration " + std::to_string(it));
  }
  optimizer_.step(rec.lr);
  optimizer_.zero_grad();
  iter_ = it;
  rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return rec;
}

TensorArchive Trainer::checkpoint() const {
  TensorArchive a;
  a.put_text("config", cfg_.to_text());
  a.put_i64("iter", static_cast<std::int64_t>(iter_));
  a.put_i64("opt.steps", static_cast<std::int64_t>(optimizer_.steps()));
  for (const auto& p : params_.params) a.put(p.name, p.tensor);
  for (const auto& b : params_.buffers) a.put(b.name, b.tensor);
  for (std::size_t i = 0; i < params_.params.size(); ++i) {
    a.put("opt.m." + params_.params[i].name, optimizer_.first_moments()[i]);
  }
  for (std::size_t i = 0; i < params_.params.size(); ++i) {
    a.put("opt.v." + params_.params[i].name, optimizer_.second_moments()[i]);
  }
  put_schedule(a, model_.schedule());
  const std::vector<float> cw(weights_.class_weights.begin(), weights_.class_weights.end());
  a.put("loss.class_weights", Shape{cw.size()}, cw);
  return a;
}

void Trainer::restore(const TensorArchive& a) {
  const TrainConfig saved = parse_config(a.text("config"));
  if (!same_run(saved, cfg_)) throw ValidationError("checkpoint config describes a different run");
  check_schedule(a, model_.schedule());
  restore_parameters(params_, a);
  for (std::size_t i = 0; i < params_.params.size(); ++i) {
    copy_into(optimizer_.first_moments()[i], a, "opt.m." + params_.params[i].name);
    copy_into(optimizer_.second_moments()[i], a, "opt.v." + params_.params[i].name);
  }
  const Tensor<float> cw = a.tensor("loss.class_weights");
  if (cw.numel() != cfg_.classes) throw ValidationError("checkpoint class weights do not match the class count");
  weights_.class_weights.assign(cw.data().begin(), cw.data().end());
  const std::int64_t iter = a.i64("iter"), steps = a.i64("opt.steps");
  if (iter < 0 || steps < 0 || static_cast<std::size_t>(iter) > cfg_.iterations) {
    throw ValidationError("checkpoint iteration counter out of range");
  }
  iter_ = static_cast<std::size_t>(iter);
  optimizer_.set_steps(static_cast<std::size_t>(steps));
}

bool same_run(const TrainConfig& a, const TrainConfig& b) {
  TrainConfig x = a, y = b;
  for (TrainConfig* c : {&x, &y}) {
    c->out_dir.clear();
    c->dataset.clear();
    c->checkpoint_every = 0;
  }
  return x.to_text() == y.to_text();
}

std::vector<SceneSample> prepare_dataset(const TrainConfig& cfg, std::size_t generate) {
  const SceneConfig scene = cfg.scene();
  if (generate > 0) generate_dataset(cfg.dataset, generate, cfg.data_seed, scene);
  if (!std::filesystem::exists(std::filesystem::path(cfg.dataset) / "manifest.txt")) {
    throw ValidationError("dataset " + cfg.dataset + " has no manifest; generate it first");
  }
  Dataset d = load_dataset(cfg.dataset, scene.hash());
  if (d.samples.empty()) throw ValidationError("dataset " + cfg.dataset + " is empty");
  return std::move(d.samples);
}

TrainResult train(const TrainConfig& cfg, const TrainOptions& opts) {
  Trainer trainer(cfg, prepare_dataset(cfg, opts.generate));
  if (opts.resume) trainer.restore(TensorArchive::load(*opts.resume));

  const std::filesystem::path dir(cfg.out_dir);
  std::filesystem::create_directories(dir);
  const auto log_path = dir / "train_log.csv";
  const bool append = opts.resume && std::filesystem::exists(log_path);
  std::ofstream log(log_path, append ? std::ios::app : std::ios::trunc);
  if (!log) throw ValidationError("cannot write " + log_path.string());
  if (!append) log << kLogHeader << "\n";

  TrainResult result;
  while (trainer.iter() < cfg.iterations) {
    const StepRecord rec = trainer.step();
    log << log_row(rec) << "\n" << std::flush;
    result.log.push_back(rec);
    if (opts.on_step) opts.on_step(rec);
    if (cfg.checkpoint_every > 0 && rec.iter % cfg.checkpoint_every == 0 && rec.iter < cfg.iterations) {
      trainer.checkpoint().save(dir / ("checkpoint_" + std::to_string(rec.iter) + ".dbt"));
    }
  }
  result.checkpoint = dir / "checkpoint.dbt";
  trainer.checkpoint().save(result.checkpoint);
  return result;
}

LoadedModel load_model(const std::filesystem::path& checkpoint) {
  const TensorArchive a = TensorArchive::load(checkpoint);
  LoadedModel out{parse_config(a.text("config")), DiffBevModel<float>(parse_config(a.text("config")))};
  check_schedule(a, out.model.schedule());
  restore_parameters(out.model.parameters(), a);
  return out;
}

MetricReport evaluate(DiffBevModel<float>& model, const std::vector<SceneSample>& samples) {
  if (samples.empty()) throw ValidationError("evaluation dataset is empty");
  const TrainConfig& cfg = model.config();
  MetricAccumulator acc(cfg.classes);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    check_sample(samples[i], cfg);
    Rng rng(mix_seed(cfg.seed, kEvalStream + i));
    const Tensor<float> probs = model.predict(samples[i].image, rng, cfg.n_sample_steps);
    acc.add(probs.data(), samples[i].bev_labels.data(), samples[i].valid_mask.data());
  }
  return acc.report();
}

std::vector<std::string> class_names(std::size_t classes) {
  std::vector<std::string> out;
  for (std::size_t c = 0; c < classes; ++c) out.push_back("class_" + std::to_string(c));
  return out;
}

Tensor<float> infer(DiffBevModel<float>& model, const SceneSample& scene) {
  check_sample(scene, model.config());
  Rng rng(mix_seed(model.config().seed, kEvalStream));
  return model.predict(scene.image, rng, model.config().n_sample_steps);
}

void write_inference_images(const Tensor<float>& probs, const std::filesystem::path& dir) {
  static constexpr std::array<std::array<std::uint8_t, 3>, kMaxClasses> kPalette{{{128, 64, 128},
                                                                                  {220, 20, 60},
                                                                                  {0, 0, 142},
                                                                                  {250, 170, 30},
                                                                                  {107, 142, 35},
                                                                                  {70, 130, 180},
                                                                                  {255, 255, 255},
                                                                                  {190, 153, 153}}};
  if (probs.rank() != 3 || probs.dim(0) > kMaxClasses) throw ValidationError("probability maps must be [M<=8, H, W]");
  const std::size_t m = probs.dim(0), h = probs.dim(1), w = probs.dim(2), cells = h * w;
  std::filesystem::create_directories(dir);
  const auto p = probs.data();
  const std::string size = std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  for (std::size_t c = 0; c < m; ++c) {
    std::string img = "P5\n" + size;
    for (std::size_t i = 0; i < cells; ++i) {
      const float v = std::clamp(p[c * cells + i], 0.0f, 1.0f);
      img.push_back(static_cast<char>(static_cast<std::uint8_t>(std::lround(v * 255.0f))));
    }
    write_file(dir / ("class_" + std::to_string(c) + ".pgm"), img);
  }
  std::string rgb = "P6\n" + size;
  for (std::size_t i = 0; i < cells; ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < m; ++c) {
      if (p[c * cells + i] > p[best * cells + i]) best = c;
    }
    for (const std::uint8_t v : kPalette[best]) rgb.push_back(static_cast<char>(v));
  }
  write_file(dir / "composite.ppm", rgb);
}

std::vector<TrainConfig> ablation_configs(const TrainConfig& base) {
  std::vector<TrainConfig> out;
  const std::filesystem::path root(base.out_dir);
  for (const auto cond : {ConditionKind::kOBev, ConditionKind::kSBev, ConditionKind::kSumBev}) {
    for (const auto fusion : {FusionMode::kCrossAttention, FusionMode::kConcat, FusionMode::kAdd}) {
      TrainConfig c = base;
      c.condition = cond;
      c.fusion = fusion;
      c.out_dir = (root / (to_string(cond) + "__" + to_string(fusion))).string();
      out.push_back(c);
    }
  }
  for (const auto enc : {EncoderMode::kSelfAttention, EncoderMode::kConv}) {
    TrainConfig c = base;
    c.encoder_mode = enc;
    c.out_dir = (root / ("encoder__" + to_string(enc))).string();
    out.push_back(c);
  }
  return out;
}

std::size_t inference_macs(DiffBevModel<float>& model) {
  const TrainConfig& cfg = model.config();
  const Tensor<float> image(Shape{3, cfg.image_size, cfg.image_size}, 0.5f);
  Rng rng(0);
  MacCounter counter;
  model.predict(image, rng, cfg.n_sample_steps);
  return counter.total();
}

std::vector<AblationRow> ablate(const TrainConfig& base, const std::function<void(const AblationRow&)>& on_row) {
  const std::vector<SceneSample> samples = prepare_dataset(base);
  const std::vector<TrainConfig> configs = ablation_configs(base);
  std::vector<AblationRow> rows;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    const TrainConfig& cfg = configs[i];
    Trainer trainer(cfg, samples);
    AblationRow row;
    row.table = i < 9 ? "condition_fusion" : "encoder";
    row.condition = cfg.condition;
    row.fusion = cfg.fusion;
    row.encoder = cfg.encoder_mode;
    while (trainer.iter() < cfg.iterations) row.final_loss = trainer.step().l_total;
    std::filesystem::create_directories(cfg.out_dir);
    trainer.checkpoint().save(std::filesystem::path(cfg.out_dir) / "checkpoint.dbt");
    const MetricReport report = evaluate(trainer.model(), samples);
    row.miou = report.miou;
    row.map = report.map;
    row.params = trainer.model().parameters().parameter_count();
    row.macs = inference_macs(trainer.model());
    rows.push_back(row);
    if (on_row) on_row(row);
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out = "table,condition,fusion,encoder_mode,miou,map,params,macs,final_loss\n";
  for (const auto& r : rows) {
    out += r.table + "," + to_string(r.condition) + "," + to_string(r.fusion) + "," + to_string(r.encoder) + "," +
           fmt(r.miou) + "," + fmt(r.map) + "," + std::to_string(r.params) + "," + std::to_string(r.macs) + "," +
           fmt(r.final_loss) + "\n";
  }
  return out;
}

}  // namespace diffbev
