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

#include "diffbev/optim.hpp"

namespace diffbev {
namespace {

Tensor<double> param(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor<double>(Shape{n}, std::move(v), true);
}

void set_grad(Tensor<double>& p, const std::vector<double>& g) {
  auto out = p.mutable_grad();
  std::copy(g.begin(), g.end(), out.begin());
}

TEST(AdamW, ZeroGradientAndZeroDecayLeavesParameters) {
  auto p = param({0.5, -1.5, 2.0});
  AdamW<double> opt({p}, AdamWOptions{0.9, 0.999, 1e-8, 0.0});
  set_grad(p, {0.0, 0.0, 0.0});
  for (int i = 0; i < 3; ++i) opt.step(1e-2);
  EXPECT_EQ(p.data()[0], 0.5);
  EXPECT_EQ(p.data()[1], -1.5);
  EXPECT_EQ(p.data()[2], 2.0);
}

TEST(AdamW, TwoStepsMatchHandComputedUpdate) {
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8, wd = 0.01, lr = 1e-2;
  auto p = param({0.5, -1.5});
  AdamW<double> opt({p}, AdamWOptions{b1, b2, eps, wd});
  const std::vector<std::vector<double>> grads{{0.2, -3.0}, {-0.1, 1.0}};
  std::vector<double> x{0.5, -1.5}, m(2, 0.0), v(2, 0.0);
  for (std::size_t t = 1; t <= grads.size(); ++t) {
    set_grad(p, grads[t - 1]);
    opt.step(lr);
    opt.zero_grad();
    for (std::size_t i = 0; i < 2; ++i) {
      const double g = grads[t - 1][i];
      m[i] = b1 * m[i] + (1 - b1) * g;
      v[i] = b2 * v[i] + (1 - b2) * g * g;
      const double mh = m[i] / (1 - std::pow(b1, double(t)));
      const double vh = v[i] / (1 - std::pow(b2, double(t)));
      x[i] -= lr * (mh / (std::sqrt(vh) + eps) + wd * x[i]);
    }
  }
  EXPECT_NEAR(p.data()[0], x[0], 1e-14);
  EXPECT_NEAR(p.data()[1], x[1], 1e-14);
  EXPECT_EQ(opt.steps(), 2u);
}

TEST(AdamW, DecayAloneShrinksTowardZero) {
  auto p = param({2.0});
  AdamW<double> opt({p}, AdamWOptions{0.9, 0.999, 1e-8, 0.5});
  set_grad(p, {0.0});
  opt.step(0.1);
  EXPECT_DOUBLE_EQ(p.data()[0], 2.0 - 0.1 * 0.5 * 2.0);
}

TEST(LrSchedule, Endpoints) {
  const double peak = 2e-4;
  EXPECT_DOUBLE_EQ(lr_at(1, 500, 150, peak), peak / 150.0);
  EXPECT_DOUBLE_EQ(lr_at(150, 500, 150, peak), peak);
  EXPECT_EQ(lr_at(500, 500, 150, peak), 0.0);
  EXPECT_DOUBLE_EQ(lr_at(325, 500, 150, peak), peak * 0.5);
}

TEST(LrSchedule, RisesThenFalls) {
  double prev = 0.0;
  for (std::size_t i = 1; i <= 20; ++i) {
    const double lr = lr_at(i, 50, 20, 1.0);
    EXPECT_GT(lr, prev);
    prev = lr;
  }
  for (std::size_t i = 21; i <= 50; ++i) {
    const double lr = lr_at(i, 50, 20, 1.0);
    EXPECT_LT(lr, prev);
    prev = lr;
  }
}

TEST(LrSchedule, NoWarmupStartsAtPeak) { EXPECT_DOUBLE_EQ(lr_at(1, 10, 0, 1.0), 0.9); }

TEST(ClipGradNorm, ScalesToMaxAndReportsOriginal) {
  auto a = param({0.0, 0.0});
  auto b = param({0.0});
  set_grad(a, {3.0, 0.0});
  set_grad(b, {4.0});
  std::vector<Tensor<double>> ps{a, b};
  EXPECT_DOUBLE_EQ(clip_grad_norm(ps, 1.0), 5.0);
  EXPECT_NEAR(a.grad()[0], 0.6, 1e-15);
  EXPECT_NEAR(b.grad()[0], 0.8, 1e-15);
  EXPECT_NEAR(clip_grad_norm(ps, 10.0), 1.0, 1e-15);
  EXPECT_NEAR(a.grad()[0], 0.6, 1e-15);
}

}  // namespace
}  // namespace diffbev
