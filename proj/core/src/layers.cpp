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

#include "diffbev/layers.hpp"

#include <cmath>
#include <memory>

#include <Eigen/Core>

#include "diffbev/error.hpp"
#include "diffbev/ops.hpp"

namespace diffbev {

namespace {
thread_local MacCounter* t_counter = nullptr;
}

MacCounter::MacCounter() : previous_(t_counter) { t_counter = this; }
MacCounter::~MacCounter() { t_counter = previous_; }

void MacCounter::add(std::size_t macs) {
  if (t_counter) t_counter->total_ += macs;
}

template <typename S>
Tensor<S> kaiming_uniform(const Shape& shape, std::size_t fan_in, Rng& rng, double gain) {
  const double bound = gain * std::sqrt(3.0 / static_cast<double>(fan_in));
  std::vector<S> values(numel(shape));
  for (auto& v : values) v = static_cast<S>(rng.uniform(-bound, bound));
  return Tensor<S>(shape, std::move(values), true);
}

template <typename S>
Conv2d<S>::Conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, Rng& rng, bool with_bias)
    : weight(kaiming_uniform<S>({out_ch, in_ch, kernel, kernel}, in_ch * kernel * kernel, rng)) {
  if (with_bias) bias = Tensor<S>(Shape{out_ch}, std::vector<S>(out_ch, S(0)), true);
}

template <typename S>
Tensor<S> Conv2d<S>::operator()(const Tensor<S>& x) const {
  const std::size_t k = weight.dim(2);
  auto y = conv2d(x, weight, bias, 1, k / 2);
  MacCounter::add(y.numel() * weight.dim(1) * k * k);
  return y;
}

template <typename S>
void Conv2d<S>::collect(ParamSet<S>& set, const std::string& prefix) const {
  set.params.push_back({prefix + ".weight", weight});
  if (bias.defined()) set.params.push_back({prefix + ".bias", bias});
}

template <typename S>
Linear<S>::Linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias, double gain)
    : weight(kaiming_uniform<S>({in, out}, in, rng, gain)) {
  if (with_bias) bias = Tensor<S>(Shape{out}, std::vector<S>(out, S(0)), true);
}

template <typename S>
Tensor<S> Linear<S>::operator()(const Tensor<S>& x) const {
  auto y = matmul(x, weight);
  MacCounter::add(x.dim(0) * weight.dim(0) * weight.dim(1));
  return bias.defined() ? add(y, bias) : y;
}

template <typename S>
void Linear<S>::collect(ParamSet<S>& set, const std::string& prefix) const {
  set.params.push_back({prefix + ".weight", weight});
  if (bias.defined()) set.params.push_back({prefix + ".bias", bias});
}

template <typename S>
ChannelNorm<S>::ChannelNorm(std::size_t channels)
    : gamma(Shape{channels}, std::vector<S>(channels, S(1)), true),
      beta(Shape{channels}, std::vector<S>(channels, S(0)), true),
      running_mean(Shape{channels}, S(0)),
      running_var(Shape{channels}, S(1)) {}

template <typename S>
Tensor<S> ChannelNorm<S>::operator()(const Tensor<S>& x, const Mode& mode) {
  return norm2d(x, gamma, beta, running_mean, running_var, mode.norm());
}

template <typename S>
std::vector<Tensor<S>> ChannelNorm<S>::operator()(const std::vector<Tensor<S>>& xs, const Mode& mode) {
  if (xs.size() == 1) return {(*this)(xs.front(), mode)};
  // Side by side along the width, per-channel statistics span every sample.
  const Tensor<S> joined = norm2d(concat(xs, 2), gamma, beta, running_mean, running_var, mode.norm());
  std::vector<Tensor<S>> out;
  std::size_t offset = 0;
  for (const auto& x : xs) {
    out.push_back(slice(joined, 2, offset, x.dim(2)));
    offset += x.dim(2);
  }
  return out;
}

template <typename S>
void ChannelNorm<S>::collect(ParamSet<S>& set, const std::string& prefix) const {
  set.params.push_back({prefix + ".gamma", gamma});
  set.params.push_back({prefix + ".beta", beta});
  set.buffers.push_back({prefix + ".running_mean", running_mean});
  set.buffers.push_back({prefix + ".running_var", running_var});
}

template <typename S>
ConvBlock<S>::ConvBlock(std::size_t in_ch, std::size_t out_ch, Rng& rng)
    : conv(in_ch, out_ch, 3, rng, false), norm(out_ch) {}

template <typename S>
Tensor<S> ConvBlock<S>::operator()(const Tensor<S>& x, const Mode& mode) {
  return relu(norm(conv(x), mode));
}

template <typename S>
std::vector<Tensor<S>> ConvBlock<S>::operator()(const std::vector<Tensor<S>>& xs, const Mode& mode) {
  std::vector<Tensor<S>> y;
  for (const auto& x : xs) y.push_back(conv(x));
  y = norm(y, mode);
  for (auto& t : y) t = relu(t);
  return y;
}

template <typename S>
void ConvBlock<S>::collect(ParamSet<S>& set, const std::string& prefix) const {
  conv.collect(set, prefix + ".conv");
  norm.collect(set, prefix + ".norm");
}

template <typename S>
Tensor<S> scaled_dot_attention(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v, Tensor<S>* weights_out) {
  using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using CMap = Eigen::Map<const Mat>;
  using MMap = Eigen::Map<Mat>;
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || q.dim(1) != k.dim(1) || k.dim(0) != v.dim(0)) {
    throw ValidationError("attention: incompatible shapes Q " + to_string(q.shape()) + ", K " + to_string(k.shape()) +
                          ", V " + to_string(v.shape()));
  }
  const auto n = static_cast<Eigen::Index>(q.dim(0)), m = static_cast<Eigen::Index>(k.dim(0));
  const auto dk = static_cast<Eigen::Index>(q.dim(1)), dv = static_cast<Eigen::Index>(v.dim(1));
  const S inv_sqrt = S(1) / std::sqrt(static_cast<S>(dk));
  MacCounter::add(q.dim(0) * k.dim(0) * (q.dim(1) + v.dim(1)));

  // Probabilities are kept for the backward pass; nothing else of size n x m is.
  auto probs = std::make_shared<Mat>(n, m);
  Mat& p = *probs;
  p.noalias() = CMap(q.data().data(), n, dk) * CMap(k.data().data(), m, dk).transpose();
  p *= inv_sqrt;
  for (Eigen::Index i = 0; i < n; ++i) {
    auto row = p.row(i).array();
    row = (row - row.maxCoeff()).exp();
    row /= row.sum();
  }
  std::vector<S> out(static_cast<std::size_t>(n * dv));
  MMap(out.data(), n, dv).noalias() = p * CMap(v.data().data(), m, dv);
  if (weights_out) {
    *weights_out = Tensor<S>(Shape{q.dim(0), k.dim(0)}, std::vector<S>(p.data(), p.data() + p.size()));
  }
  return make_result<S>(Shape{q.dim(0), v.dim(1)}, std::move(out), {q, k, v},
                        [probs, n, m, dk, dv, inv_sqrt](detail::Node<S>& self) {
                          const Mat& pr = *probs;
                          auto& nq = *self.inputs[0];
                          auto& nk = *self.inputs[1];
                          auto& nv = *self.inputs[2];
                          const CMap g(self.grad.data(), n, dv);
                          if (nv.requires_grad) MMap(nv.grad_buffer().data(), m, dv).noalias() += pr.transpose() * g;
                          if (!nq.requires_grad && !nk.requires_grad) return;
                          Mat ds = g * CMap(nv.data.data(), m, dv).transpose();
                          for (Eigen::Index i = 0; i < n; ++i) {
                            const S dot = ds.row(i).dot(pr.row(i));
                            ds.row(i).array() = pr.row(i).array() * (ds.row(i).array() - dot) * inv_sqrt;
                          }
                          if (nq.requires_grad) {
                            MMap(nq.grad_buffer().data(), n, dk).noalias() += ds * CMap(nk.data.data(), m, dk);
                          }
                          if (nk.requires_grad) {
                            MMap(nk.grad_buffer().data(), m, dk).noalias() += ds.transpose() * CMap(nq.data.data(), n, dk);
                          }
                        });
}

template Tensor<float> scaled_dot_attention(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&,
                                            Tensor<float>*);
template Tensor<double> scaled_dot_attention(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&,
                                             Tensor<double>*);
template Tensor<float> kaiming_uniform(const Shape&, std::size_t, Rng&, double);
template Tensor<double> kaiming_uniform(const Shape&, std::size_t, Rng&, double);
template class Conv2d<float>;
template class Conv2d<double>;
template class Linear<float>;
template class Linear<double>;
template class ChannelNorm<float>;
template class ChannelNorm<double>;
template class ConvBlock<float>;
template class ConvBlock<double>;

}  // namespace diffbev
