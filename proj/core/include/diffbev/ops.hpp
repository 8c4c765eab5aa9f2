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

#pragma once

#include <cstddef>
#include <vector>

#include "diffbev/tensor.hpp"

namespace diffbev {

// Element-wise binary ops with right-aligned broadcasting: a dimension
// matches when the sizes are equal or one of them is 1.
template <typename S> Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b);
template <typename S> Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b);
template <typename S> Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b);

Shape broadcast_shape(const Shape& a, const Shape& b);

template <typename S> Tensor<S> scale(const Tensor<S>& a, S k);
template <typename S> Tensor<S> add_scalar(const Tensor<S>& a, S k);

/// [m,k]x[k,n] or batched [B,m,k]x[B,k,n].
template <typename S> Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b);
/// Swaps the last two axes of a rank-2 or rank-3 tensor.
template <typename S> Tensor<S> transpose(const Tensor<S>& a);
template <typename S> Tensor<S> reshape(const Tensor<S>& a, Shape shape);

/// Cross-correlation of x [C_in,H,W] with w [C_out,C_in,k,k]; `bias` may be
/// undefined. The output size must come out integral.
template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& bias, std::size_t stride,
                 std::size_t padding);

/// Non-overlapping window average over the two trailing axes of [C,H,W].
template <typename S> Tensor<S> avg_pool2d(const Tensor<S>& x, std::size_t window);

/// Max-subtracted softmax along `axis`.
template <typename S> Tensor<S> softmax(const Tensor<S>& x, std::size_t axis);

template <typename S> Tensor<S> relu(const Tensor<S>& x);
template <typename S> Tensor<S> sigmoid(const Tensor<S>& x);
template <typename S> Tensor<S> log(const Tensor<S>& x);

struct NormOptions {
  bool training = true;
  /// Off for gradient checks, which replay the forward many times.
  bool update_running = true;
  double momentum = 0.1;
  double eps = 1e-5;
};

/// Per-channel normalization of [C,H,W] over spatial positions, followed by
/// a learned affine map. Training mode normalizes with the input's own
/// statistics and folds them into the running buffers; eval mode uses the
/// running buffers.
template <typename S>
Tensor<S> norm2d(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                 Tensor<S>& running_mean, Tensor<S>& running_var, const NormOptions& opts);

/// [C,h,w] -> [C,out_h,out_w], half-pixel (align-corners-false) sampling.
template <typename S>
Tensor<S> bilinear_interpolate(const Tensor<S>& x, std::size_t out_h, std::size_t out_w);

template <typename S> Tensor<S> concat(const std::vector<Tensor<S>>& parts, std::size_t axis);
/// Entries [start, start + length) of `axis`.
template <typename S> Tensor<S> slice(const Tensor<S>& x, std::size_t axis, std::size_t start, std::size_t length);

template <typename S> Tensor<S> reduce_sum(const Tensor<S>& x);
template <typename S> Tensor<S> reduce_mean(const Tensor<S>& x);

/// Reorders [C,H,W] into [H*W,C] tokens and back.
template <typename S> Tensor<S> to_tokens(const Tensor<S>& x);
template <typename S> Tensor<S> from_tokens(const Tensor<S>& tokens, std::size_t h, std::size_t w);

}  // namespace diffbev
