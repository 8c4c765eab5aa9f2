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

#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <string>

#include "CLI11.hpp"
#include "diffbev/error.hpp"
#include "diffbev/gradcheck_suite.hpp"
#include "diffbev/pipeline.hpp"

namespace {

using namespace diffbev;

constexpr int kOk = 0;
constexpr int kValidation = 1;
constexpr int kNumerical = 2;

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << text;
  if (!out) throw ValidationError("failed writing " + path.string());
}

TrainConfig config_or_default(const std::string& path) { return path.empty() ? TrainConfig{} : load_config(path); }

int run_generate(std::size_t n, std::uint64_t seed, const std::string& out, const std::string& config) {
  if (n == 0) throw ValidationError("--n must be positive");
  generate_dataset(out, n, seed, config_or_default(config).scene());
  std::printf("wrote %zu scenes to %s\n", n, out.c_str());
  return kOk;
}

int run_train(const std::string& config, const std::string& resume, std::size_t generate, bool detach) {
  TrainConfig cfg = load_config(config);
  if (detach) cfg.detach_diffusion = true;
  TrainOptions opts;
  if (!resume.empty()) opts.resume = resume;
  opts.generate = generate;
  const std::size_t every = std::max<std::size_t>(1, cfg.iterations / 20);
  opts.on_step = [&](const StepRecord& r) {
    if (r.iter % every == 0 || r.iter == cfg.iterations) {
      std::printf("iter %zu lr %.3e l_wce %.4f l_depth %.4f l_diff %.4f l_total %.4f\n", r.iter, r.lr, r.l_wce,
                  r.l_depth, r.l_diff, r.l_total);
      std::fflush(stdout);
    }
  };
  const TrainResult result = train(cfg, opts);
  std::printf("checkpoint %s\n", result.checkpoint.string().c_str());
  return kOk;
}

int run_eval(const std::string& ckpt, const std::string& data, const std::string& out) {
  LoadedModel loaded = load_model(ckpt);
  const Dataset dataset = load_dataset(data, loaded.config.scene().hash());
  const MetricReport report = evaluate(loaded.model, dataset.samples);
  write_text(out, report_csv(report, class_names(loaded.config.classes)));
  std::printf("mIoU %.4f mAP %.4f on %zu scenes\n", report.miou, report.map, dataset.samples.size());
  return kOk;
}

int run_ablate(const std::string& config, const std::string& out) {
  const TrainConfig base = load_config(config);
  const auto rows = ablate(base, [](const AblationRow& r) {
    std::printf("%s %s/%s/%s mIoU %.4f params %zu\n", r.table.c_str(), to_string(r.condition).c_str(),
                to_string(r.fusion).c_str(), to_string(r.encoder).c_str(), r.miou, r.params);
    std::fflush(stdout);
  });
  write_text(out, ablation_csv(rows));
  return kOk;
}

int run_infer(const std::string& ckpt, const std::string& scene, const std::string& out) {
  LoadedModel loaded = load_model(ckpt);
  const SceneSample sample = scene_from_archive(TensorArchive::load(scene));
  write_inference_images(infer(loaded.model, sample), out);
  std::printf("wrote %zu class maps to %s\n", loaded.config.classes, out.c_str());
  return kOk;
}

int run_gradcheck(std::uint64_t seed) {
  std::size_t failed = 0;
  run_gradcheck_suite(seed, [&](const GradcheckCase& c) {
    if (!c.report.passed()) ++failed;
    std::printf("%-4s %-26s max_rel_err %.3e checked %zu retried %zu %.2fs\n", c.report.passed() ? "ok" : "FAIL",
                c.name.c_str(), c.report.max_rel_error, c.report.checked, c.report.retried, c.seconds);
    std::fflush(stdout);
  });
  if (failed > 0) {
    std::fprintf(stderr, "gradcheck: %zu case(s) failed\n", failed);
    return kNumerical;
  }
  std::printf("gradcheck passed\n");
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"diffbev: camera-to-BEV segmentation with a conditional diffusion prior"};
  app.require_subcommand(1);

  std::size_t n = 0;
  std::uint64_t seed = 0;
  std::string out, config, resume, ckpt, data, scene;
  std::size_t generate = 0;
  bool detach = false;

  auto* gen = app.add_subcommand("generate", "Render a synthetic dataset");
  gen->add_option("--n", n, "Number of scenes")->required();
  gen->add_option("--seed", seed, "Seed of the first scene")->required();
  gen->add_option("--out", out, "Output directory")->required();
  gen->add_option("--config", config, "Config whose scene settings to use")->check(CLI::ExistingFile);

  auto* tr = app.add_subcommand("train", "Train a model");
  tr->add_option("--config", config, "Config file")->required()->check(CLI::ExistingFile);
  tr->add_option("--resume", resume, "Checkpoint to resume from")->check(CLI::ExistingFile);
  tr->add_option("--generate", generate, "Generate this many scenes into the dataset directory first");
  tr->add_flag("--detach-diffusion", detach, "Stop segmentation gradients at the reverse chain");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  ev->add_option("--ckpt", ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  ev->add_option("--data", data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--out", out, "Report CSV")->required();

  auto* ab = app.add_subcommand("ablate", "Train and evaluate the condition, fusion and encoder grid");
  ab->add_option("--config", config, "Base config file")->required()->check(CLI::ExistingFile);
  ab->add_option("--out", out, "Grid CSV")->required();

  auto* inf = app.add_subcommand("infer", "Write per-class occupancy maps for one scene");
  inf->add_option("--ckpt", ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  inf->add_option("--scene", scene, "Scene file")->required()->check(CLI::ExistingFile);
  inf->add_option("--out", out, "Output directory")->required();

  auto* gc = app.add_subcommand("gradcheck", "Check every gradient against finite differences in 64-bit");
  gc->add_option("--seed", seed, "Seed of the random probes");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }

  try {
    if (*gen) return run_generate(n, seed, out, config);
    if (*tr) return run_train(config, resume, generate, detach);
    if (*ev) return run_eval(ckpt, data, out);
    if (*ab) return run_ablate(config, out);
    if (*inf) return run_infer(ckpt, scene, out);
    if (*gc) return run_gradcheck(seed);
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kNumerical;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kValidation;
  }
  return kValidation;
}
