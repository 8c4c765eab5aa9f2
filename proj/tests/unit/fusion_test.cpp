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
#include <numeric>

#include "diffbev/diffusion.hpp"
#include "diffbev/error.hpp"
#include "diffbev/fusion.hpp"
#include "diffbev/gradcheck.hpp"

namespace diffbev {
namespace {

using TD = Tensor<double>;

void set_matrix(Linear<double>& l, std::initializer_list<double> values) {
  ASSERT_EQ(l.weight.numel(), values.size());
  std::copy(values.begin(), values.end(), l.weight.mutable_data().begin());
}

TEST(CrossAttend, TwoTokenExample) {
  Rng rng(1);
  CrossAttention<double> ca(2, 1, rng);
  set_matrix(ca.wq[0], {1, 0, 0, 1});
  set_matrix(ca.wk[0], {1, 0, 0, 1});
  set_matrix(ca.wv[0], {2, 0, 0, 4});
  set_matrix(ca.out, {1, 0, 0, 1});
  // Channels-first [C=2, H=1, W=2]: token 0 of bev is [1, 0]; diff_out tokens are [1, 0] and [0, 1].
  TD bev({2, 1, 2}, {1, 0, 0, 1});
  TD diff({2, 1, 2}, {1, 0, 0, 1});
  TD weights;
  auto y = cross_attend(bev, diff, ca, &weights);
  const double e = std::exp(1.0 / std::sqrt(2.0));
  const double w0 = e / (e + 1.0);
  EXPECT_NEAR(weights.at({0, 0}), w0, 1e-12);
  EXPECT_NEAR(weights.at({0, 1}), 1.0 - w0, 1e-12);
  // Output minus the residual, token 0.
  EXPECT_NEAR(y.at({0, 0, 0}) - 1.0, 2.0 * w0, 1e-12);
  EXPECT_NEAR(y.at({1, 0, 0}) - 0.0, 4.0 * (1.0 - w0), 1e-12);
  EXPECT_NEAR(y.at({0, 0, 0}) - 1.0, 1.339523, 1e-6);
  EXPECT_NEAR(y.at({1, 0, 0}) - 0.0, 1.320954, 1e-6);
}

TEST(CrossAttend, RawAttentionExample) {
  TD q({1, 2}, {1, 0});
  TD k({2, 2}, {1, 0, 0, 1});
  TD v({2, 2}, {2, 0, 0, 4});
  auto a = scaled_dot_attention(q, k, v);
  const double e = std::exp(1.0 / std::sqrt(2.0));
  EXPECT_NEAR(a.at({0, 0}), 2.0 * e / (e + 1.0), 1e-12);
  EXPECT_NEAR(a.at({0, 1}), 4.0 / (e + 1.0), 1e-12);
}

TEST(CrossAttend, SingleTokenIgnoresQuery) {
  Rng rng(2);
  CrossAttention<double> ca(4, 1, rng);
  auto bev = gaussian_like<double>({4, 1, 1}, rng);
  auto diff = gaussian_like<double>({4, 1, 1}, rng);
  TD weights;
  auto y = cross_attend(bev, diff, ca, &weights);
  EXPECT_EQ(weights.item(), 1.0);
  // Oracle: bev + (diff W^V) W^Out with explicit loops.
  const auto wv = ca.wv[0].weight.data();
  const auto wo = ca.out.weight.data();
  for (std::size_t c = 0; c < 4; ++c) {
    double acc = 0;
    for (std::size_t j = 0; j < 4; ++j) {
      double v = 0;
      for (std::size_t i = 0; i < 4; ++i) v += diff.data()[i] * wv[i * 4 + j];
      acc += v * wo[j * 4 + c];
    }
    EXPECT_NEAR(y.data()[c], bev.data()[c] + acc, 1e-12);
  }
  for (auto& w : ca.wq[0].weight.mutable_data()) w *= -3.0;
  auto y2 = cross_attend(bev, diff, ca);
  for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(y2.data()[c], y.data()[c], 1e-12);
}

TEST(CrossAttend, WeightRowsAreProbabilities) {
  Rng rng(3);
  CrossAttention<float> ca(8, 1, rng);
  auto bev = gaussian_like<float>({8, 6, 6}, rng);
  auto diff = gaussian_like<float>({8, 6, 6}, rng);
  Tensor<float> weights;
  cross_attend(bev, diff, ca, &weights);
  ASSERT_EQ(weights.shape(), (Shape{36, 36}));
  for (std::size_t r = 0; r < 36; ++r) {
    double sum = 0;
    for (std::size_t c = 0; c < 36; ++c) {
      const float w = weights.at({r, c});
      EXPECT_GE(w, 0.0f);
      sum += w;
    }
    EXPECT_NEAR(sum, 1.0, 1e-6);
  }
}

TEST(CrossAttend, ScoreShiftInvariance) {
  Rng rng(4);
  auto q = gaussian_like<double>({5, 4}, rng);
  auto k = gaussian_like<double>({7, 4}, rng);
  auto scores = matmul(q, transpose(k));
  auto a = softmax(scores, 1);
  auto b = softmax(add_scalar(scores, 10.0), 1);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a.data()[i], b.data()[i], 1e-12);
}

TEST(CrossAttend, KeyValuePermutationEquivariance) {
  Rng rng(5);
  CrossAttention<double> ca(4, 1, rng);
  auto bev = gaussian_like<double>({4, 3, 4}, rng);
  auto diff = gaussian_like<double>({4, 3, 4}, rng);
  std::vector<std::size_t> perm(12);
  std::iota(perm.begin(), perm.end(), 0);
  std::reverse(perm.begin(), perm.end());
  std::swap(perm[2], perm[7]);
  TD shuffled({4, 3, 4});
  for (std::size_t c = 0; c < 4; ++c) {
    for (std::size_t p = 0; p < 12; ++p) shuffled.mutable_data()[c * 12 + p] = diff.data()[c * 12 + perm[p]];
  }
  auto a = cross_attend(bev, diff, ca);
  auto b = cross_attend(bev, shuffled, ca);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a.data()[i], b.data()[i], 1e-12);
}

TEST(CrossAttend, GradcheckTwoTokens) {
  for (std::size_t heads : {1u, 2u}) {
    Rng rng(6);
    CrossAttention<double> ca(4, heads, rng);
    auto bev = gaussian_like<double>({4, 1, 2}, rng);
    auto diff = gaussian_like<double>({4, 1, 2}, rng);
    ParamSet<double> set;
    ca.collect(set, "ca");
    auto probe = set.param_tensors();
    probe.push_back(bev);
    probe.push_back(diff);
    auto f = [&] {
      auto y = cross_attend(bev, diff, ca);
      return reduce_sum(mul(y, y));
    };
    auto r = gradcheck(f, probe);
    EXPECT_TRUE(r.passed()) << heads << " heads: " << r.max_rel_error;
  }
}

TEST(CrossAttend, RejectsBadShapes) {
  Rng rng(7);
  CrossAttention<float> ca(4, 1, rng);
  EXPECT_THROW(cross_attend(Tensor<float>({4, 2, 2}), Tensor<float>({4, 2, 3}), ca), ValidationError);
  EXPECT_THROW(cross_attend(Tensor<float>({3, 2, 2}), Tensor<float>({3, 2, 2}), ca), ValidationError);
  EXPECT_THROW(CrossAttention<float>(4, 3, rng), ValidationError);
}

TEST(Fuse, AddWithZeroKeepsBev) {
  Rng rng(8);
  Fusion<float> f(FusionMode::kAdd, 4, rng);
  auto bev = gaussian_like<float>({4, 5, 5}, rng);
  auto y = fuse(bev, Tensor<float>({4, 5, 5}), f);
  for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_EQ(y.data()[i], bev.data()[i]);
}

TEST(Fuse, ConcatWithIdentityProjectionKeepsBev) {
  Rng rng(9);
  Fusion<double> f(FusionMode::kConcat, 3, rng);
  auto w = f.concat_proj.weight.mutable_data();
  std::fill(w.begin(), w.end(), 0.0);
  for (std::size_t o = 0; o < 3; ++o) w[o * 6 + o] = 1.0;
  auto b = f.concat_proj.bias.mutable_data();
  std::fill(b.begin(), b.end(), 0.0);
  auto bev = gaussian_like<double>({3, 4, 4}, rng);
  auto y = fuse(bev, gaussian_like<double>({3, 4, 4}, rng), f);
  for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_EQ(y.data()[i], bev.data()[i]);
}

TEST(Fuse, EveryModeKeepsShape) {
  for (auto mode : {FusionMode::kCrossAttention, FusionMode::kConcat, FusionMode::kAdd}) {
    Rng rng(10);
    Fusion<float> f(mode, 8, rng);
    auto y = fuse(gaussian_like<float>({8, 16, 16}, rng), gaussian_like<float>({8, 16, 16}, rng), f);
    EXPECT_EQ(y.shape(), (Shape{8, 16, 16})) << to_string(mode);
    EXPECT_THROW(fuse(Tensor<float>({8, 16, 16}), Tensor<float>({8, 16, 8}), f), ValidationError);
  }
}

TEST(Fuse, ModeNames) {
  for (auto mode : {FusionMode::kCrossAttention, FusionMode::kConcat, FusionMode::kAdd}) {
    EXPECT_EQ(parse_fusion_mode(to_string(mode)), mode);
  }
  EXPECT_THROW(parse_fusion_mode("CrossAttention"), ValidationError);
}

}  // namespace
}  // namespace diffbev
