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

#include "diffbev/diffusion.hpp"
#include "diffbev/error.hpp"
#include "diffbev/gradcheck.hpp"
#include "diffbev/ops.hpp"

namespace diffbev {
namespace {

using TD = Tensor<double>;

TEST(Schedule, HandExamples) {
  auto s = NoiseSchedule::from_betas({0.1, 0.2});
  EXPECT_DOUBLE_EQ(s.alpha[0], 0.9);
  EXPECT_DOUBLE_EQ(s.alpha[1], 0.8);
  EXPECT_DOUBLE_EQ(s.alpha_bar[0], 0.9);
  EXPECT_DOUBLE_EQ(s.alpha_bar[1], 0.72);
  auto one = make_schedule(1, 0.3, 0.3);
  ASSERT_EQ(one.steps(), 1u);
  EXPECT_DOUBLE_EQ(one.alpha_bar[0], 0.7);
}

TEST(Schedule, DefaultMatchesProductOracle) {
  auto s = make_schedule(100, 1e-4, 0.02);
  long double product = 1.0L;
  for (int t = 1; t <= 100; ++t) {
    const long double beta = 1e-4L + (0.02L - 1e-4L) * (t - 1) / 99.0L;
    product *= 1.0L - beta;
  }
  EXPECT_NEAR(s.alpha_bar.back(), static_cast<double>(product), 1e-12);
  EXPECT_NEAR(s.beta.front(), 1e-4, 1e-15);
  EXPECT_NEAR(s.beta.back(), 0.02, 1e-15);
  for (std::size_t t = 2; t <= 100; ++t) {
    EXPECT_LT(s.alpha_bar_at(t), s.alpha_bar_at(t - 1));
    EXPECT_EQ(s.alpha_bar_at(t), s.alpha_bar_at(t - 1) * s.alpha_at(t));
  }
}

TEST(Schedule, RejectsInvalidBounds) {
  EXPECT_THROW(make_schedule(0, 0.1, 0.2), ValidationError);
  EXPECT_THROW(make_schedule(10, 0.0, 0.2), ValidationError);
  EXPECT_THROW(make_schedule(10, 0.3, 0.2), ValidationError);
  EXPECT_THROW(make_schedule(10, 0.1, 1.0), ValidationError);
}

TEST(QStep, ZeroVarianceIsIdentity) {
  auto s = NoiseSchedule::from_betas({0.0});
  Rng rng(1);
  auto x = gaussian_like<float>({3, 4, 4}, rng);
  auto n = gaussian_like<float>({3, 4, 4}, rng);
  auto y = q_step(x, 1, s, n);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y.data()[i], x.data()[i]);
}

TEST(QStep, ScalesByRootOneMinusBeta) {
  auto s = NoiseSchedule::from_betas({0.19});
  auto y = q_step(TD::vector({2.0, -1.0}), 1, s, TD::vector({0.0, 0.0}));
  EXPECT_NEAR(y.data()[0], 1.8, 1e-15);
  EXPECT_NEAR(y.data()[1], -0.9, 1e-15);
  EXPECT_THROW(q_step(TD::vector({1.0}), 2, s, TD::vector({0.0})), ValidationError);
}

TEST(QStep, NoiselessChainTelescopes) {
  auto s = make_schedule(100, 1e-4, 0.02);
  TD x0({4}, {1.0, -2.0, 0.5, 3.0});
  TD zero({4}, 0.0);
  TD x = x0;
  for (std::size_t t = 1; t <= 100; ++t) x = q_step(x, t, s, zero);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(x.data()[i], std::sqrt(s.alpha_bar.back()) * x0.data()[i], 1e-5);
}

TEST(ForwardSample, ScalarExamples) {
  auto noiseless = NoiseSchedule::from_betas({0.0});
  auto y = forward_sample(TD::vector({1.5}), 1, noiseless, TD::vector({0.7}));
  EXPECT_EQ(y.item(), 1.5);

  auto quarter = NoiseSchedule::from_betas({0.75});
  EXPECT_NEAR(forward_sample(TD::vector({1.0}), 1, quarter, TD::vector({1.0})).item(), 0.5 + std::sqrt(0.75), 1e-12);
  EXPECT_NEAR(forward_sample(TD::vector({1.0}), 1, quarter, TD::vector({1.0})).item(), 1.36603, 1e-5);
  EXPECT_NEAR(forward_sample(TD::vector({3.0}), 1, quarter, TD::vector({0.0})).item(), 1.5, 1e-12);
  EXPECT_THROW(forward_sample(TD::vector({1.0}), 0, quarter, TD::vector({0.0})), ValidationError);
}

TEST(ForwardSample, EmpiricalVarianceMatchesSchedule) {
  auto s = make_schedule(100, 1e-4, 0.02);
  Rng rng(123);
  for (std::size_t t : {1u, 10u, 50u, 100u}) {
    auto eps = gaussian_like<double>({10000}, rng);
    auto xt = forward_sample(TD({10000}, 0.0), t, s, eps);
    double mean = 0, sq = 0;
    for (double v : xt.data()) mean += v;
    mean /= 10000;
    for (double v : xt.data()) sq += (v - mean) * (v - mean);
    const double var = sq / 9999;
    EXPECT_NEAR(var / (1.0 - s.alpha_bar_at(t)), 1.0, 0.05) << "t=" << t;
  }
}

TEST(ForwardSample, OneStepPredictionInvertsEveryStep) {
  auto s = make_schedule(100, 1e-4, 0.02);
  Rng rng(5);
  auto x0 = gaussian_like<double>({16}, rng);
  auto eps = gaussian_like<double>({16}, rng);
  for (std::size_t t = 1; t <= 100; ++t) {
    auto xt = forward_sample(x0, t, s, eps);
    const double ab = s.alpha_bar_at(t);
    for (std::size_t i = 0; i < 16; ++i) {
      const double x0_hat = (xt.data()[i] - std::sqrt(1 - ab) * eps.data()[i]) / std::sqrt(ab);
      EXPECT_NEAR(x0_hat, x0.data()[i], 1e-5);
    }
  }
}

TEST(ReverseStep, SingleStepInversion) {
  for (double beta : {0.02, 0.3, 0.9}) {
    auto s = NoiseSchedule::from_betas({beta});
    Rng rng(9);
    auto x0 = gaussian_like<double>({8}, rng);
    auto eps = gaussian_like<double>({8}, rng);
    auto xt = forward_sample(x0, 1, s, eps);
    auto rec = reverse_step(xt, 1, eps, s, gaussian_like<double>({8}, rng));
    for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(rec.data()[i], x0.data()[i], 1e-6);
  }
}

TEST(ReverseStep, ZeroBetaKeepsSample) {
  auto s = NoiseSchedule::from_betas({0.1, 0.0});
  auto y = reverse_step(TD::vector({1.25, -3.0}), 2, TD::vector({0.4, 0.9}), s, TD::vector({1.0, 1.0}));
  EXPECT_EQ(y.data()[0], 1.25);
  EXPECT_EQ(y.data()[1], -3.0);
}

TEST(ReverseStep, ScalarPosteriorOracle) {
  auto s = NoiseSchedule::from_betas({0.1, 0.15, 0.2});
  // alpha_bar_2 = 0.9 * 0.85, alpha_bar_3 = 0.9 * 0.85 * 0.8.
  const double ab2 = 0.765, ab3 = 0.612;
  const double mu = (1.0 / std::sqrt(0.8)) * (1.0 - 0.2 / std::sqrt(1.0 - ab3) * 0.5);
  const double var = 0.2 * (1.0 - ab2) / (1.0 - ab3);
  EXPECT_NEAR(reverse_step(TD::vector({1.0}), 3, TD::vector({0.5}), s, TD::vector({0.0})).item(), mu, 1e-12);
  EXPECT_NEAR(reverse_step(TD::vector({1.0}), 3, TD::vector({0.5}), s, TD::vector({1.0})).item(), mu + std::sqrt(var),
              1e-12);
  EXPECT_NEAR(s.posterior_variance(3), var, 1e-15);
  EXPECT_NEAR(mu, 0.93854, 1e-5);
}

TEST(SamplingTimesteps, EvenlySpacedEndingAtOne) {
  EXPECT_EQ(sampling_timesteps(2, 2), (std::vector<std::size_t>{2, 1}));
  EXPECT_EQ(sampling_timesteps(5, 5), (std::vector<std::size_t>{5, 4, 3, 2, 1}));
  EXPECT_EQ(sampling_timesteps(100, 4), (std::vector<std::size_t>{100, 67, 34, 1}));
  EXPECT_EQ(sampling_timesteps(100, 1), (std::vector<std::size_t>{100}));
  auto twenty = sampling_timesteps(100, 20);
  EXPECT_EQ(twenty.front(), 100u);
  EXPECT_EQ(twenty.back(), 1u);
  for (std::size_t i = 1; i < twenty.size(); ++i) EXPECT_LT(twenty[i], twenty[i - 1]);
  EXPECT_THROW(sampling_timesteps(10, 11), ValidationError);
}

TEST(SamplingTimesteps, RespacedScheduleKeepsCumulativeProducts) {
  auto s = make_schedule(100, 1e-4, 0.02);
  std::vector<std::size_t> asc{1, 34, 67, 100};
  auto r = s.respaced(asc);
  for (std::size_t k = 0; k < asc.size(); ++k) EXPECT_EQ(r.alpha_bar[k], s.alpha_bar_at(asc[k]));
  EXPECT_NEAR(r.beta[0], s.beta[0], 1e-15);
}

DenoiserConfig small_config(std::size_t c, std::size_t h, std::size_t w, EncoderMode mode) {
  DenoiserConfig cfg;
  cfg.channels = c;
  cfg.height = h;
  cfg.width = w;
  cfg.base = 8;
  cfg.encoder = mode;
  return cfg;
}

TEST(Denoiser, OutputShapeMatchesInput) {
  for (auto mode : {EncoderMode::kSelfAttention, EncoderMode::kConv}) {
    for (auto [c, h, w] : {std::tuple{4u, 8u, 8u}, std::tuple{8u, 16u, 16u}}) {
      Rng rng(1);
      Denoiser<float> model(small_config(c, h, w, mode), rng);
      auto x = gaussian_like<float>({c, h, w}, rng);
      auto cond = gaussian_like<float>({c, h, w}, rng);
      EXPECT_EQ(denoise(x, 7, cond, model).shape(), x.shape());
    }
  }
}

TEST(Denoiser, MismatchedConditionThrows) {
  Rng rng(1);
  Denoiser<float> model(small_config(4, 8, 8, EncoderMode::kConv), rng);
  EXPECT_THROW(denoise(gaussian_like<float>({4, 8, 8}, rng), 1, gaussian_like<float>({4, 8, 4}, rng), model),
               ValidationError);
}

TEST(Denoiser, ZeroConditionGatesOutTheSample) {
  for (auto mode : {EncoderMode::kSelfAttention, EncoderMode::kConv}) {
    Rng rng(2);
    Denoiser<double> model(small_config(4, 8, 8, mode), rng);
    for (auto& v : model.cond_conv.weight.mutable_data()) v = 0.0;
    for (auto& v : model.cond_conv.bias.mutable_data()) v = 0.0;
    auto cond = gaussian_like<double>({4, 8, 8}, rng);
    auto a = denoise(gaussian_like<double>({4, 8, 8}, rng), 5, cond, model);
    auto b = denoise(gaussian_like<double>({4, 8, 8}, rng), 5, cond, model);
    for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a.data()[i], b.data()[i]);
    auto c = denoise(gaussian_like<double>({4, 8, 8}, rng), 60, cond, model);
    bool differs = false;
    for (std::size_t i = 0; i < a.numel(); ++i) differs |= a.data()[i] != c.data()[i];
    EXPECT_TRUE(differs) << "time embedding should still reach the output";
  }
}

TEST(Denoiser, GradcheckSampledParameters) {
  for (auto mode : {EncoderMode::kSelfAttention, EncoderMode::kConv}) {
    Rng rng(3);
    auto cfg = small_config(2, 8, 8, mode);
    cfg.base = 32;
    Denoiser<double> model(cfg, rng);
    ParamSet<double> set;
    model.collect(set, "denoiser");
    auto x = gaussian_like<double>({2, 8, 8}, rng);
    auto cond = gaussian_like<double>({2, 8, 8}, rng);
    auto f = [&] {
      auto e = denoise(x, 17, cond, model);
      return reduce_sum(mul(e, e));
    };
    auto r = gradcheck(f, set.param_tensors(), {.fraction = 0.01, .seed = 4});
    EXPECT_TRUE(r.passed()) << to_string(mode) << " max rel err " << r.max_rel_error << " at param "
                            << set.params[r.worst_param].name << " a=" << r.worst_analytic << " n=" << r.worst_numeric << " fails=" << r.failures << "/" << r.checked;
    EXPECT_GT(r.checked, 20u);
  }
}

TEST(Denoiser, SelfAttentionHasMoreParameters) {
  Rng a(1), b(1);
  ParamSet<float> sa, conv;
  Denoiser<float>(DenoiserConfig{.encoder = EncoderMode::kSelfAttention}, a).collect(sa, "d");
  Denoiser<float>(DenoiserConfig{.encoder = EncoderMode::kConv}, b).collect(conv, "d");
  EXPECT_GT(sa.parameter_count(), conv.parameter_count());
}

TEST(Refine, MatchesHandUnrolledChain) {
  auto s = make_schedule(2, 0.1, 0.2);
  Rng init(4);
  Denoiser<double> model(small_config(2, 8, 8, EncoderMode::kConv), init);
  auto cond = gaussian_like<double>({2, 8, 8}, init);
  Rng a(77), b(77);
  auto out = refine(cond, model, s, a, 2);
  auto x = gaussian_like<double>({2, 8, 8}, b);
  auto eps2 = denoise(x, 2, cond, model);
  auto noise = gaussian_like<double>({2, 8, 8}, b);
  x = reverse_step(x, 2, eps2, s, noise);
  auto eps1 = denoise(x, 1, cond, model);
  x = reverse_step(x, 1, eps1, s, TD());
  ASSERT_EQ(out.shape(), cond.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(out.data()[i], x.data()[i]);
}

TEST(Refine, DeterministicAndFinite) {
  auto s = make_schedule(100, 1e-4, 0.02);
  Rng init(6);
  Denoiser<float> model(small_config(4, 8, 8, EncoderMode::kSelfAttention), init);
  auto cond = gaussian_like<float>({4, 8, 8}, init);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng a(seed), b(seed);
    NoGradGuard guard;
    auto x = refine(cond, model, s, a, 20);
    auto y = refine(cond, model, s, b, 20);
    ASSERT_EQ(x.shape(), cond.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) {
      EXPECT_EQ(x.data()[i], y.data()[i]);
      EXPECT_TRUE(std::isfinite(x.data()[i]));
    }
  }
}

}  // namespace
}  // namespace diffbev
