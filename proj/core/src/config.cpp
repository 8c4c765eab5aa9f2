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

#include "diffbev/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <vector>

#include "diffbev/error.hpp"

namespace diffbev {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
  throw ValidationError("config: key '" + key + "' has value '" + value + "', expected " + expected);
}

template <typename T>
T parse_unsigned(const std::string& key, const std::string& v) {
  T out{};
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "a non-negative integer");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || !std::isfinite(out)) bad_value(key, v, "a finite number");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  bad_value(key, v, "true or false");
}

struct Field {
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&, const std::string&)> set;
};

#define DIFFBEV_SIZE(name)                                                                   \
  {#name,                                                                                    \
   {[](const TrainConfig& c) { return std::to_string(c.name); },                             \
    [](TrainConfig& c, const std::string& k, const std::string& v) {                         \
      c.name = parse_unsigned<decltype(c.name)>(k, v);                                       \
    }}}
#define DIFFBEV_DOUBLE(name)                                                                                      \
  {#name,                                                                                                         \
   {[](const TrainConfig& c) { return fmt_double(c.name); },                                                      \
    [](TrainConfig& c, const std::string& k, const std::string& v) { c.name = parse_double(k, v); }}}
#define DIFFBEV_STRING(name) \
  {#name, {[](const TrainConfig& c) { return c.name; }, [](TrainConfig& c, const std::string&, const std::string& v) { c.name = v; }}}

// Ordered as written by to_text().
const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      DIFFBEV_SIZE(seed),
      DIFFBEV_SIZE(iterations),
      DIFFBEV_SIZE(batch_size),
      DIFFBEV_DOUBLE(lr),
      DIFFBEV_DOUBLE(weight_decay),
      DIFFBEV_SIZE(warmup_iters),
      DIFFBEV_DOUBLE(grad_clip),
      DIFFBEV_DOUBLE(lambda1),
      DIFFBEV_DOUBLE(lambda2),
      DIFFBEV_SIZE(timesteps),
      DIFFBEV_DOUBLE(beta_start),
      DIFFBEV_DOUBLE(beta_end),
      DIFFBEV_SIZE(n_sample_steps),
      DIFFBEV_SIZE(train_refine_steps),
      {"detach_diffusion",
       {[](const TrainConfig& c) { return std::string(c.detach_diffusion ? "true" : "false"); },
        [](TrainConfig& c, const std::string& k, const std::string& v) { c.detach_diffusion = parse_bool(k, v); }}},
      {"condition",
       {[](const TrainConfig& c) { return to_string(c.condition); },
        [](TrainConfig& c, const std::string&, const std::string& v) { c.condition = parse_condition_kind(v); }}},
      {"fusion",
       {[](const TrainConfig& c) { return to_string(c.fusion); },
        [](TrainConfig& c, const std::string&, const std::string& v) { c.fusion = parse_fusion_mode(v); }}},
      {"encoder_mode",
       {[](const TrainConfig& c) { return to_string(c.encoder_mode); },
        [](TrainConfig& c, const std::string&, const std::string& v) { c.encoder_mode = parse_encoder_mode(v); }}},
      DIFFBEV_SIZE(attention_heads),
      DIFFBEV_SIZE(bev_channels),
      DIFFBEV_SIZE(decoder_width),
      DIFFBEV_SIZE(unet_base),
      DIFFBEV_SIZE(time_dim),
      DIFFBEV_STRING(dataset),
      DIFFBEV_SIZE(data_seed),
      DIFFBEV_SIZE(classes),
      DIFFBEV_SIZE(image_size),
      DIFFBEV_DOUBLE(fov_deg),
      DIFFBEV_DOUBLE(camera_height),
      DIFFBEV_DOUBLE(camera_pitch),
      DIFFBEV_DOUBLE(depth_min),
      DIFFBEV_DOUBLE(depth_max),
      DIFFBEV_SIZE(depth_bins),
      DIFFBEV_DOUBLE(grid_extent),
      DIFFBEV_SIZE(grid_size),
      DIFFBEV_SIZE(min_regions),
      DIFFBEV_SIZE(max_regions),
      DIFFBEV_SIZE(min_boxes),
      DIFFBEV_SIZE(max_boxes),
      DIFFBEV_SIZE(point_stride),
      DIFFBEV_STRING(out_dir),
      DIFFBEV_SIZE(checkpoint_every),
  };
  return table;
}

#undef DIFFBEV_SIZE
#undef DIFFBEV_DOUBLE
#undef DIFFBEV_STRING

void require(bool ok, const std::string& message) {
  if (!ok) throw ValidationError("config: " + message);
}

}  // namespace

void TrainConfig::validate() const {
  require(iterations > 0, "iterations must be positive");
  require(batch_size > 0, "batch_size must be positive");
  require(lr > 0.0, "lr must be positive");
  require(weight_decay >= 0.0, "weight_decay must be >= 0");
  require(warmup_iters < iterations, "warmup_iters must be below iterations");
  require(grad_clip > 0.0, "grad_clip must be positive");
  require(lambda1 >= 0.0 && lambda2 >= 0.0, "lambda1 and lambda2 must be >= 0");
  require(timesteps >= 1, "timesteps must be >= 1");
  require(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0, "need 0 < beta_start <= beta_end < 1");
  require(n_sample_steps >= 1 && n_sample_steps <= timesteps, "n_sample_steps must be in [1, timesteps]");
  require(train_refine_steps >= 1 && train_refine_steps <= timesteps, "train_refine_steps must be in [1, timesteps]");
  require(attention_heads >= 1 && bev_channels % attention_heads == 0, "attention_heads must divide bev_channels");
  require(bev_channels > 0 && decoder_width > 0 && unet_base > 0, "channel counts must be positive");
  require(time_dim >= 2 && time_dim % 2 == 0, "time_dim must be even");
  require(classes >= 1 && classes <= kMaxClasses, "classes must be in [1, 8]");
  require(image_size > 0 && image_size % 8 == 0, "image_size must be a positive multiple of 8");
  require(fov_deg > 0.0 && fov_deg < 180.0, "fov_deg must be in (0, 180)");
  require(depth_min > 0.0 && depth_min < depth_max && depth_bins > 0, "need 0 < depth_min < depth_max, depth_bins > 0");
  require(grid_extent > 0.0, "grid_extent must be positive");
  require(grid_size > 0 && grid_size % 4 == 0, "grid_size must be a positive multiple of 4");
  require(!dataset.empty(), "dataset path is empty");
  scene().validate();
}

std::string TrainConfig::to_text() const {
  std::string out;
  for (const auto& [key, field] : fields()) out += key + " = " + field.get(*this) + "\n";
  return out;
}

SceneConfig TrainConfig::scene() const {
  SceneConfig s;
  s.rig = CameraRig::forward_looking(image_size, image_size, fov_deg * 3.14159265358979323846 / 180.0, camera_height,
                                     camera_pitch, DepthBins{depth_min, depth_max, depth_bins});
  s.grid.x_min = s.grid.y_min = -grid_extent;
  s.grid.x_max = s.grid.y_max = grid_extent;
  s.grid.rows = s.grid.cols = grid_size;
  s.grid.channels = bev_channels;
  s.classes = classes;
  s.min_regions = min_regions;
  s.max_regions = max_regions;
  s.min_boxes = min_boxes;
  s.max_boxes = max_boxes;
  s.point_stride = point_stride;
  return s;
}

TrainConfig parse_config(const std::string& text) {
  std::map<std::string, const Field*> index;
  for (const auto& [key, field] : fields()) index[key] = &field;
  TrainConfig cfg;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ValidationError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    const auto it = index.find(key);
    if (it == index.end()) throw ValidationError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    if (!seen.insert(key).second) {
      throw ValidationError("config line " + std::to_string(lineno) + ": key '" + key + "' given twice");
    }
    it->second->set(cfg, key, value);
  }
  cfg.validate();
  return cfg;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

}  // namespace diffbev
