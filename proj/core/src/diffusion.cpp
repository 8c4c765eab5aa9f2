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

#include "diffbev/diffusion.hpp"

#include <cmath>

#include "diffbev/error.hpp"
#include "diffbev/ops.hpp"

namespace diffbev {

double NoiseSchedule::posterior_variance(std::size_t t) const {
  check_step(t);
  const double b = beta_at(t);
  if (b == 0.0) return 0.0;
  return b * (1.0 - alpha_bar_at(t - 1)) / (1.0 - alpha_bar_at(t));
}

void NoiseSchedule::check_step(std::size_t t) const {
  if (t < 1 || t > steps()) {
    throw ValidationError("timestep " + std::to_string(t) + " outside 1.." + std::to_string(steps()));
  }
}

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas) {
  NoiseSchedule s;
  s.beta = std::move(betas);
  double running = 1.0;
  for (double b : s.beta) {
    s.alpha.push_back(1.0 - b);
    running *= 1.0 - b;
    s.alpha_bar.push_back(running);
  }
  return s;
}

NoiseSchedule NoiseSchedule::respaced(const std::vector<std::size_t>& timesteps) const {
  if (timesteps.size() == steps()) return *this;
  NoiseSchedule s;
  double prev = 1.0;
  for (std::size_t t : timesteps) {
    check_step(t);
    const double ab = alpha_bar_at(t);
    s.alpha.push_back(ab / prev);
    s.beta.push_back(1.0 - ab / prev);
    s.alpha_bar.push_back(ab);
    prev = ab;
  }
  return s;
}

NoiseSchedule make_schedule(std::size_t steps, double beta_start, double beta_end) {
  if (steps < 1) throw ValidationError("noise schedule needs at least one step");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw ValidationError("noise schedule needs 0 < beta_start <= beta_end < 1");
  }
  std::vector<double> betas(steps);
  for (std::size_t i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(steps - 1);
    betas[i] = beta_start + (beta_end - beta_start) * frac;
  }
  return NoiseSchedule::from_betas(std::move(betas));
}

std::vector<std::size_t> sampling_timesteps(std::size_t steps, std::size_t n_steps) {
  if (n_steps < 1 || n_steps > steps) {
    throw ValidationError("sampling steps must lie in 1.." + std::to_string(steps));
  }
  if (n_steps == 1) return {steps};
  std::vector<std::size_t> out(n_steps);
  for (std::size_t i = 0; i < n_steps; ++i) {
    const double pos = 1.0 + static_cast<double>(steps - 1) * static_cast<double>(i) / static_cast<double>(n_steps - 1);
    out[n_steps - 1 - i] = static_cast<std::size_t>(std::lround(pos));
  }
  return out;
}

template <typename S>
Tensor<S> q_step(const Tensor<S>& x_prev, std::size_t t, const NoiseSchedule& sched, const Tensor<S>& noise) {
  sched.check_step(t);
  const double b = sched.beta_at(t);
  return add(scale(x_prev, static_cast<S>(std::sqrt(1.0 - b))), scale(noise, static_cast<S>(std::sqrt(b))));
}

template <typename S>
Tensor<S> forward_sample(const Tensor<S>& x0, std::size_t t, const NoiseSchedule& sched, const Tensor<S>& eps) {
  sched.check_step(t);
  if (x0.shape() != eps.shape()) {
    throw ValidationError("forward_sample: noise " + to_string(eps.shape()) + " does not match " + to_string(x0.shape()));
  }
  const double ab = sched.alpha_bar_at(t);
  return add(scale(x0, static_cast<S>(std::sqrt(ab))), scale(eps, static_cast<S>(std::sqrt(1.0 - ab))));
}

template <typename S>
Tensor<S> reverse_step(const Tensor<S>& x_t, std::size_t t, const Tensor<S>& eps_hat, const NoiseSchedule& sched,
                       const Tensor<S>& noise) {
  sched.check_step(t);
  const double b = sched.beta_at(t);
  const double eps_coef = b == 0.0 ? 0.0 : b / std::sqrt(1.0 - sched.alpha_bar_at(t));
  const double inv_sqrt_alpha = 1.0 / std::sqrt(sched.alpha_at(t));
  auto mean = scale(sub(x_t, scale(eps_hat, static_cast<S>(eps_coef))), static_cast<S>(inv_sqrt_alpha));
  if (t == 1 || !noise.defined()) return mean;
  const double sigma = std::sqrt(sched.posterior_variance(t));
  return add(mean, scale(noise, static_cast<S>(sigma)));
}

std::string to_string(ConditionKind kind) {
  switch (kind) {
    case ConditionKind::kOBev:
      return "o_bev";
    case ConditionKind::kSBev:
      return "s_bev";
    case ConditionKind::kSumBev:
      return "sum_bev";
  }
  return "?";
}

ConditionKind parse_condition_kind(const std::string& text) {
  if (text == "o_bev") return ConditionKind::kOBev;
  if (text == "s_bev") return ConditionKind::kSBev;
  if (text == "sum_bev") return ConditionKind::kSumBev;
  throw ValidationError("unknown condition '" + text + "' (expected o_bev | s_bev | sum_bev)");
}

template <typename S>
Tensor<S> build_condition(const Tensor<S>& o_bev, const Tensor<S>& s_bev, ConditionKind kind) {
  if (o_bev.shape() != s_bev.shape()) {
    throw ValidationError("condition: O-BEV " + to_string(o_bev.shape()) + " and S-BEV " + to_string(s_bev.shape()) +
                          " differ");
  }
  switch (kind) {
    case ConditionKind::kOBev:
      return o_bev;
    case ConditionKind::kSBev:
      return s_bev;
    case ConditionKind::kSumBev:
      break;
  }
  return add(o_bev, s_bev);
}

std::string to_string(EncoderMode mode) {
  return mode == EncoderMode::kSelfAttention ? "self_attention" : "conv";
}

EncoderMode parse_encoder_mode(const std::string& text) {
  if (text == "self_attention") return EncoderMode::kSelfAttention;
  if (text == "conv") return EncoderMode::kConv;
  throw ValidationError("unknown encoder mode '" + text + "' (expected self_attention | conv)");
}

template <typename S>
Tensor<S> timestep_embedding(std::size_t t, std::size_t dim) {
  const std::size_t half = dim / 2;
  std::vector<S> v(dim, S(0));
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
    v[i] = static_cast<S>(std::sin(static_cast<double>(t) * freq));
    v[half + i] = static_cast<S>(std::cos(static_cast<double>(t) * freq));
  }
  return Tensor<S>(Shape{1, dim}, std::move(v));
}

template <typename S>
Denoiser<S>::Denoiser(const DenoiserConfig& cfg, Rng& rng) : cfg_(cfg) {
  const std::size_t c = cfg.channels, b = cfg.base;
  if (cfg.height % 4 != 0 || cfg.width % 4 != 0) {
    throw ValidationError("denoiser needs BEV sides divisible by 4 for two pooling levels");
  }
  if (cfg.encoder == EncoderMode::kSelfAttention) {
    pos_embed = kaiming_uniform<S>({cfg.height * cfg.width, c}, c, rng, 0.1);
    wq = Linear<S>(c, c, rng, true, 1.0);
    wk = Linear<S>(c, c, rng, true, 1.0);
    wv = Linear<S>(c, c, rng, true, 1.0);
    wo = Linear<S>(c, c, rng, true, 1.0);
  } else {
    sample_conv = Conv2d<S>(c, c, 3, rng);
  }
  cond_conv = Conv2d<S>(c, c, 3, rng);
  time_mlp = Linear<S>(cfg.time_dim, cfg.time_dim, rng);
  for (int i = 0; i < 5; ++i) time_proj.emplace_back(cfg.time_dim, b, rng, true, 1.0);
  in_conv = Conv2d<S>(c, b, 3, rng);
  enc0 = Conv2d<S>(b, b, 3, rng);
  enc1 = Conv2d<S>(b, b, 3, rng);
  mid = Conv2d<S>(b, b, 3, rng);
  dec1 = Conv2d<S>(2 * b, b, 3, rng);
  dec0 = Conv2d<S>(2 * b, b, 3, rng);
  out_conv = Conv2d<S>(b, c, 3, rng, true);
}

template <typename S>
Tensor<S> Denoiser<S>::encode_sample(const Tensor<S>& x) const {
  if (cfg_.encoder == EncoderMode::kConv) return sample_conv(x);
  auto tokens = add(to_tokens(x), pos_embed);
  auto attended = scaled_dot_attention(wq(tokens), wk(tokens), wv(tokens));
  return from_tokens(add(tokens, wo(attended)), x.dim(1), x.dim(2));
}

template <typename S>
Tensor<S> Denoiser<S>::operator()(const Tensor<S>& x_t, std::size_t t, const Tensor<S>& x_cond) const {
  if (x_t.shape() != x_cond.shape()) {
    throw ValidationError("denoise: sample " + to_string(x_t.shape()) + " and condition " + to_string(x_cond.shape()) +
                          " differ");
  }
  if (x_t.rank() != 3 || x_t.dim(0) != cfg_.channels || x_t.dim(1) != cfg_.height || x_t.dim(2) != cfg_.width) {
    throw ValidationError("denoise: input " + to_string(x_t.shape()) + " does not match the configured BEV shape");
  }
  const std::size_t h = x_t.dim(1), w = x_t.dim(2), b = cfg_.base;
  auto gated = mul(encode_sample(x_t), cond_conv(x_cond));

  auto temb = relu(time_mlp(timestep_embedding<S>(t, cfg_.time_dim)));
  auto with_time = [&](const Tensor<S>& y, std::size_t block) {
    return relu(add(y, reshape(time_proj[block](temb), Shape{b, 1, 1})));
  };

  auto e0 = with_time(enc0(in_conv(gated)), 0);
  auto e1 = with_time(enc1(avg_pool2d(e0, 2)), 1);
  auto m = with_time(mid(avg_pool2d(e1, 2)), 2);
  auto d1 = with_time(dec1(concat<S>({bilinear_interpolate(m, h / 2, w / 2), e1}, 0)), 3);
  auto d0 = with_time(dec0(concat<S>({bilinear_interpolate(d1, h, w), e0}, 0)), 4);
  return out_conv(d0);
}

template <typename S>
void Denoiser<S>::collect(ParamSet<S>& set, const std::string& prefix) const {
  if (cfg_.encoder == EncoderMode::kSelfAttention) {
    set.params.push_back({prefix + ".pos_embed", pos_embed});
    wq.collect(set, prefix + ".wq");
    wk.collect(set, prefix + ".wk");
    wv.collect(set, prefix + ".wv");
    wo.collect(set, prefix + ".wo");
  } else {
    sample_conv.collect(set, prefix + ".sample_conv");
  }
  cond_conv.collect(set, prefix + ".cond_conv");
  time_mlp.collect(set, prefix + ".time_mlp");
  for (std::size_t i = 0; i < time_proj.size(); ++i) time_proj[i].collect(set, prefix + ".time_proj" + std::to_string(i));
  in_conv.collect(set, prefix + ".in_conv");
  enc0.collect(set, prefix + ".enc0");
  enc1.collect(set, prefix + ".enc1");
  mid.collect(set, prefix + ".mid");
  dec1.collect(set, prefix + ".dec1");
  dec0.collect(set, prefix + ".dec0");
  out_conv.collect(set, prefix + ".out_conv");
}

template <typename S>
Tensor<S> denoise(const Tensor<S>& x_t, std::size_t t, const Tensor<S>& x_cond, const Denoiser<S>& model) {
  return model(x_t, t, x_cond);
}

template <typename S>
Tensor<S> gaussian_like(const Shape& shape, Rng& rng) {
  std::vector<S> v(numel(shape));
  for (auto& x : v) x = static_cast<S>(rng.normal());
  return Tensor<S>(shape, std::move(v));
}

template <typename S>
Tensor<S> refine(const Tensor<S>& x_cond, const Denoiser<S>& model, const NoiseSchedule& sched, Rng& rng,
                 std::size_t n_steps) {
  const auto timesteps = sampling_timesteps(sched.steps(), n_steps);
  const std::vector<std::size_t> ascending(timesteps.rbegin(), timesteps.rend());
  const NoiseSchedule sub = sched.respaced(ascending);
  auto x = gaussian_like<S>(x_cond.shape(), rng);
  for (std::size_t k = n_steps; k >= 1; --k) {
    auto eps_hat = model(x, timesteps[n_steps - k], x_cond);
    Tensor<S> noise;
    if (k > 1) noise = gaussian_like<S>(x_cond.shape(), rng);
    x = reverse_step(x, k, eps_hat, sub, noise);
  }
  return x;
}

#define DIFFBEV_INSTANTIATE_DIFFUSION(S)                                                                       \
  template Tensor<S> q_step(const Tensor<S>&, std::size_t, const NoiseSchedule&, const Tensor<S>&);           \
  template Tensor<S> forward_sample(const Tensor<S>&, std::size_t, const NoiseSchedule&, const Tensor<S>&);   \
  template Tensor<S> reverse_step(const Tensor<S>&, std::size_t, const Tensor<S>&, const NoiseSchedule&,      \
                                  const Tensor<S>&);                                                          \
  template Tensor<S> timestep_embedding(std::size_t, std::size_t);                                            \
  template Tensor<S> build_condition(const Tensor<S>&, const Tensor<S>&, ConditionKind);                    \
  template class Denoiser<S>;                                                                                 \
  template Tensor<S> denoise(const Tensor<S>&, std::size_t, const Tensor<S>&, const Denoiser<S>&);            \
  template Tensor<S> gaussian_like(const Shape&, Rng&);                                                       \
  template Tensor<S> refine(const Tensor<S>&, const Denoiser<S>&, const NoiseSchedule&, Rng&, std::size_t);

DIFFBEV_INSTANTIATE_DIFFUSION(float)
DIFFBEV_INSTANTIATE_DIFFUSION(double)

}  // namespace diffbev
