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

#include "diffbev/backbone.hpp"
#include "diffbev/diffusion.hpp"
#include "diffbev/error.hpp"
#include "diffbev/gradcheck.hpp"

namespace diffbev {
namespace {

TEST(Backbone, ShapeContract) {
  Rng rng(1);
  Backbone<float> net(BackboneConfig{}, rng);
  Rng data(2);
  auto out = encode(gaussian_like<float>({3, 64, 64}, data), net, Mode{});
  EXPECT_EQ(out.features.shape(), (Shape{16, 8, 8}));
  EXPECT_EQ(out.depth.shape(), (Shape{8, 8, 8}));
  EXPECT_THROW(net(Tensor<float>({3, 60, 64}), Mode{}), ValidationError);
  EXPECT_THROW(net(Tensor<float>({1, 64, 64}), Mode{}), ValidationError);
}

TEST(Backbone, DepthIsSimplex) {
  Rng rng(3);
  Backbone<float> net(BackboneConfig{}, rng);
  for (int trial = 0; trial < 5; ++trial) {
    auto depth = net(gaussian_like<float>({3, 32, 32}, rng), Mode{}).depth;
    for (std::size_t p = 0; p < 16; ++p) {
      double sum = 0;
      for (std::size_t b = 0; b < 8; ++b) {
        const float v = depth.data()[b * 16 + p];
        EXPECT_GE(v, 0.0f);
        sum += v;
      }
      EXPECT_NEAR(sum, 1.0, 1e-5);
    }
  }
}

TEST(Backbone, SeededInitIsDeterministic) {
  Rng a(9), b(9);
  ParamSet<float> pa, pb;
  Backbone<float>(BackboneConfig{}, a).collect(pa, "backbone");
  Backbone<float>(BackboneConfig{}, b).collect(pb, "backbone");
  ASSERT_EQ(pa.params.size(), pb.params.size());
  for (std::size_t i = 0; i < pa.params.size(); ++i) {
    EXPECT_EQ(pa.params[i].name.rfind("backbone.", 0), 0u);
    for (std::size_t k = 0; k < pa.params[i].tensor.numel(); ++k) {
      ASSERT_EQ(pa.params[i].tensor.data()[k], pb.params[i].tensor.data()[k]);
    }
  }
}

TEST(Backbone, GradcheckSubsampledParams) {
  Rng rng(4);
  BackboneConfig cfg;
  cfg.widths = {4, 6, 6, 6};
  cfg.feature_channels = 3;
  cfg.depth_bins = 4;
  Backbone<double> net(cfg, rng);
  ParamSet<double> set;
  net.collect(set, "backbone");
  auto image = gaussian_like<double>({3, 16, 16}, rng);
  auto wf = gaussian_like<double>({3, 2, 2}, rng);
  auto wd = gaussian_like<double>({4, 2, 2}, rng);
  Mode mode{.training = true, .update_running = false};
  auto f = [&] {
    auto out = net(image, mode);
    return add(reduce_sum(mul(out.features, wf)), reduce_sum(mul(out.depth, wd)));
  };
  auto r = gradcheck(f, set.param_tensors(), {.fraction = 0.25, .seed = 2});
  EXPECT_TRUE(r.passed()) << r.max_rel_error << " at " << set.params[r.worst_param].name << " a=" << r.worst_analytic
                          << " n=" << r.worst_numeric;
  EXPECT_GT(r.checked, 100u);
}

}  // namespace
}  // namespace diffbev
