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

#include "diffbev/gradcheck_suite.hpp"

#include <chrono>
#include <cmath>

#include "diffbev/backbone.hpp"
#include "diffbev/diffusion.hpp"
#include "diffbev/fusion.hpp"
#include "diffbev/geometry.hpp"
#include "diffbev/heads.hpp"
#include "diffbev/layers.hpp"
#include "diffbev/losses.hpp"
#include "diffbev/model.hpp"
#include "diffbev/ops.hpp"

namespace diffbev {

namespace {

using TD = Tensor<double>;

TD uniform(const Shape& shape, Rng& rng, double lo = -2.0, double hi = 2.0, bool grad = true) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return TD(shape, std::move(v), grad);
}

struct Case {
  std::string name;
  std::function<TD()> f;
  std::vector<TD> params;
  GradcheckOptions opts;
};

// A model small enough to probe a slice of every parameter in seconds.
TrainConfig small_config() {
  TrainConfig c;
  c.image_size = 16;
  c.grid_size = 8;
  c.grid_extent = 10.0;
  c.bev_channels = 4;
  c.unet_base = 8;
  c.time_dim = 8;
  c.decoder_width = 8;
  c.depth_bins = 4;
  c.timesteps = 10;
  c.n_sample_steps = 2;
  c.train_refine_steps = 2;
  c.iterations = 2;
  c.warmup_iters = 1;
  c.point_stride = 1;
  return c;
}

}  // namespace

std::vector<GradcheckCase> run_gradcheck_suite(std::uint64_t seed,
                                               const std::function<void(const GradcheckCase&)>& on_case) {
  Rng rng(mix_seed(seed, 0x6c));
  std::vector<Case> cases;
  const auto add_case = [&](std::string name, std::function<TD()> f, std::vector<TD> params,
                            GradcheckOptions opts = {}) {
    cases.push_back({std::move(name), std::move(f), std::move(params), opts});
  };

  // Elementwise and shape ops.
  auto x = uniform({3, 4, 4}, rng), y = uniform({3, 4, 4}, rng), row = uniform({1, 4, 1}, rng);
  auto pos = uniform({3, 4, 4}, rng, 0.5, 2.0);
  auto a = uniform({3, 5}, rng), b = uniform({5, 4}, rng);
  auto gamma = uniform({3}, rng), beta = uniform({3}, rng);
  auto rm = TD(Shape{3}, 0.0), rv = TD(Shape{3}, 1.0);
  NormOptions train_norm;
  train_norm.update_running = false;
  NormOptions eval_norm;
  eval_norm.training = false;
  // Each case captures a fixed contraction so re-evaluation is deterministic.
  auto fixed = [&](auto op) {
    auto probe_op = op;
    auto w = uniform(probe_op().shape(), rng, -1.0, 1.0, false);
    return [op, w]() mutable { return reduce_sum(mul(op(), w)); };
  };
  add_case("add", fixed([=] { return add(x, row); }), {x, row});
  add_case("sub", fixed([=] { return sub(x, row); }), {x, row});
  add_case("mul", fixed([=] { return mul(x, y); }), {x, y});
  add_case("mul_broadcast", fixed([=] { return mul(x, row); }), {x, row});
  add_case("scale", fixed([=] { return scale(x, 1.7); }), {x});
  add_case("add_scalar", fixed([=] { return mul(add_scalar(x, 0.3), y); }), {x, y});
  add_case("matmul", fixed([=] { return matmul(a, b); }), {a, b});
  add_case("transpose", fixed([=] { return transpose(a); }), {a});
  add_case("reshape", fixed([=] { return reshape(x, {6, 8}); }), {x});
  add_case("relu", fixed([=] { return relu(x); }), {x});
  add_case("sigmoid", fixed([=] { return sigmoid(x); }), {x});
  add_case("log", fixed([=] { return log(pos); }), {pos});
  add_case("softmax", fixed([=] { return softmax(x, 0); }), {x});
  add_case("softmax_inner", fixed([=] { return softmax(x, 2); }), {x});
  add_case("concat", fixed([=] { return concat<double>({x, y}, 1); }), {x, y});
  add_case("slice", fixed([=] { return slice(x, 2, 1, 2); }), {x});
  add_case("reduce_sum", [=] { return reduce_sum(mul(x, y)); }, {x, y});
  add_case("reduce_mean", [=] { return reduce_mean(mul(x, x)); }, {x});
  add_case("tokens", fixed([=] { return from_tokens(mul(to_tokens(x), to_tokens(y)), 4, 4); }), {x, y});
  add_case("avg_pool2d", fixed([=] { return avg_pool2d(x, 2); }), {x});
  add_case("bilinear_up", fixed([=] { return bilinear_interpolate(x, 7, 9); }), {x});
  add_case("bilinear_down", fixed([=] { return bilinear_interpolate(x, 3, 2); }), {x});
  add_case("norm2d_train", fixed([=]() mutable { return norm2d(x, gamma, beta, rm, rv, train_norm); }),
           {x, gamma, beta});
  add_case("norm2d_eval", fixed([=]() mutable { return norm2d(x, gamma, beta, rm, rv, eval_norm); }),
           {x, gamma, beta});

  // Convolution and attention.
  auto img = uniform({2, 7, 7}, rng), w3 = uniform({4, 2, 3, 3}, rng), w1 = uniform({3, 2, 1, 1}, rng);
  auto bias3 = uniform({4}, rng), bias1 = uniform({3}, rng);
  add_case("conv2d_3x3", fixed([=] { return conv2d(img, w3, bias3, 1, 1); }), {img, w3, bias3});
  add_case("conv2d_stride2", fixed([=] { return conv2d(img, w3, TD(), 2, 1); }), {img, w3});
  add_case("conv2d_1x1", fixed([=] { return conv2d(img, w1, bias1, 1, 0); }), {img, w1, bias1});
  auto q = uniform({5, 3}, rng), k = uniform({7, 3}, rng), v = uniform({7, 4}, rng);
  add_case("attention", fixed([=] { return scaled_dot_attention(q, k, v); }), {q, k, v});

  // View transformer.
  {
    CameraRig rig = CameraRig::forward_looking(16, 16, 1.5707963267948966, 3.0, 0.5, DepthBins{1.0, 12.0, 3});
    BevGrid grid;
    grid.x_min = grid.y_min = -10.0;
    grid.x_max = grid.y_max = 10.0;
    grid.rows = grid.cols = 8;
    grid.channels = 2;
    const SplatPlan plan = plan_splat(rig.scaled(0.25), grid, 4, 4);
    auto feat = uniform({2, 4, 4}, rng);
    auto logits = uniform({3, 4, 4}, rng);
    add_case("lift_splat", fixed([=] { return lift_splat(feat, DepthDistribution<double>{softmax(logits, 0)}, plan); }),
             {feat, logits});
    auto sem = std::make_shared<SemanticFromDepth<double>>(3, 2, rng);
    ParamSet<double> set;
    sem->collect(set, "semantic");
    auto params = set.param_tensors();
    params.push_back(logits);
    add_case("semantic_from_depth",
             fixed([=] { return (*sem)(DepthDistribution<double>{softmax(logits, 0)}, grid); }), params);
  }

  // Losses.
  {
    auto z = uniform({2, 4, 4}, rng);
    TD labels(Shape{2, 4, 4}), mask(Shape{4, 4}, 1.0);
    for (std::size_t i = 0; i < labels.numel(); ++i) labels.mutable_data()[i] = rng.uniform() < 0.4 ? 1.0 : 0.0;
    mask.mutable_data()[3] = 0.0;
    add_case("loss_wce", [=] { return loss_wce(z, labels, mask, {0.7, 1.9}); }, {z});
    auto dl = uniform({3, 4, 4}, rng);
    TD onehot(Shape{3, 4, 4});
    for (std::size_t i = 0; i < 16; ++i) onehot.mutable_data()[(i % 3) * 16 + i] = 1.0;
    add_case("loss_depth", [=] { return loss_depth(softmax(dl, 0), onehot, mask); }, {dl});
    auto e1 = uniform({2, 4, 4}, rng), e2 = uniform({2, 4, 4}, rng);
    add_case("loss_diff", [=] { return loss_diff(e1, e2); }, {e1, e2});
  }

  // Modules.
  {
    auto bev = uniform({4, 4, 4}, rng), diff = uniform({4, 4, 4}, rng);
    for (const auto mode : {FusionMode::kCrossAttention, FusionMode::kConcat, FusionMode::kAdd}) {
      auto fusion = std::make_shared<Fusion<double>>(mode, 4, rng, 2);
      ParamSet<double> set;
      fusion->collect(set, "fusion");
      auto params = set.param_tensors();
      params.push_back(bev);
      params.push_back(diff);
      add_case("fusion_" + to_string(mode), fixed([=] { return (*fusion)(bev, diff); }), params);
    }

    DenoiserConfig dc;
    dc.channels = 2;
    dc.height = dc.width = 8;
    dc.base = 4;
    dc.time_dim = 8;
    for (const auto enc : {EncoderMode::kSelfAttention, EncoderMode::kConv}) {
      dc.encoder = enc;
      auto den = std::make_shared<Denoiser<double>>(dc, rng);
      auto xt = uniform({2, 8, 8}, rng), cond = uniform({2, 8, 8}, rng);
      ParamSet<double> set;
      den->collect(set, "denoiser");
      auto params = set.param_tensors();
      params.push_back(xt);
      params.push_back(cond);
      add_case("denoiser_" + to_string(enc), fixed([=] { return (*den)(xt, 7, cond); }), params,
               {.fraction = 0.2, .seed = seed});
    }

    BackboneConfig bc;
    bc.widths = {4, 6, 6, 6};
    bc.feature_channels = 3;
    bc.depth_bins = 3;
    auto bb = std::make_shared<Backbone<double>>(bc, rng);
    auto image = uniform({3, 16, 16}, rng, 0.0, 1.0);
    Mode mode;
    mode.update_running = false;
    {
      ParamSet<double> set;
      bb->collect(set, "backbone");
      auto w_feat = uniform({3, 2, 2}, rng, -1.0, 1.0, false), w_depth = uniform({3, 2, 2}, rng, -1.0, 1.0, false);
      add_case("backbone",
               [=] {
                 auto e = (*bb)(image, mode);
                 return add(reduce_sum(mul(e.features, w_feat)), reduce_sum(mul(e.depth, w_depth)));
               },
               set.param_tensors(), {.fraction = 0.5, .seed = seed});
    }
    auto dec = std::make_shared<SegDecoder<double>>(4, 6, 2, rng);
    {
      ParamSet<double> set;
      dec->collect(set, "decoder");
      auto params = set.param_tensors();
      auto in = uniform({4, 4, 4}, rng);
      params.push_back(in);
      add_case("seg_decoder", fixed([=] { return (*dec)(in, mode); }), params, {.fraction = 0.5, .seed = seed});
    }
  }

  // Full training loss: backbone, lift-splat, condition, diffusion loss,
  // reverse chain, fusion, decoder and all three loss terms.
  {
    const TrainConfig cfg = small_config();
    auto model = std::make_shared<DiffBevModel<double>>(cfg);
    const SceneSample scene = generate_scene(mix_seed(seed, 2), cfg.scene());
    const ModelInput<double> in = make_input<double>(scene, Backbone<double>::kStride);
    LossWeights weights;
    weights.class_weights = {0.8, 1.6};
    Mode mode;
    mode.update_running = false;
    const std::uint64_t draw_seed = mix_seed(seed, 3);
    add_case("composed_loss",
             [=] {
               Rng draws(draw_seed);
               return model->loss(in, mode, draws, weights, cfg.train_refine_steps, false).total;
             },
             model->parameters().param_tensors(), {.fraction = 0.1, .seed = seed});
  }

  std::vector<GradcheckCase> results;
  for (auto& c : cases) {
    const auto start = std::chrono::steady_clock::now();
    GradcheckCase r{c.name, gradcheck(c.f, c.params, c.opts), 0.0};
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (on_case) on_case(r);
    results.push_back(std::move(r));
  }
  return results;
}

}  // namespace diffbev
