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

#include "diffbev/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Core>

#include "diffbev/error.hpp"

namespace diffbev {

namespace {

using std::size_t;

template <typename S>
using NodeT = detail::Node<S>;

// Row-major C = alpha * op(A) * op(B) + beta * C.
template <typename S>
void gemm(bool ta, bool tb, size_t m, size_t n, size_t k, S alpha, const S* a, const S* b, S beta, S* c) {
  using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Map = Eigen::Map<const Mat>;
  Eigen::Map<Mat> out(c, m, n);
  const auto ei = [](size_t v) { return static_cast<Eigen::Index>(v); };
  const auto apply = [&](const auto& product) {
    if (beta == S(0)) {
      out.noalias() = alpha * product;
    } else {
      if (beta != S(1)) out *= beta;
      out.noalias() += alpha * product;
    }
  };
  if (!ta && !tb) apply(Map(a, ei(m), ei(k)) * Map(b, ei(k), ei(n)));
  else if (!ta && tb) apply(Map(a, ei(m), ei(k)) * Map(b, ei(n), ei(k)).transpose());
  else if (ta && !tb) apply(Map(a, ei(k), ei(m)).transpose() * Map(b, ei(k), ei(n)));
  else apply(Map(a, ei(k), ei(m)).transpose() * Map(b, ei(n), ei(k)).transpose());
}

struct BroadcastPlan {
  Shape out;
  std::vector<size_t> a_stride;
  std::vector<size_t> b_stride;
};

std::vector<size_t> aligned_strides(const Shape& in, const Shape& out) {
  std::vector<size_t> strides(out.size(), 0);
  size_t stride = 1;
  for (size_t i = 0; i < in.size(); ++i) {
    const size_t in_axis = in.size() - 1 - i;
    const size_t out_axis = out.size() - 1 - i;
    strides[out_axis] = in[in_axis] == 1 ? 0 : stride;
    stride *= in[in_axis];
  }
  return strides;
}

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b) {
  BroadcastPlan p;
  p.out = broadcast_shape(a, b);
  p.a_stride = aligned_strides(a, p.out);
  p.b_stride = aligned_strides(b, p.out);
  return p;
}

// Calls fn(out_index, a_index, b_index) over the broadcast iteration space in
// row-major order.
template <typename Fn>
void for_each_broadcast(const BroadcastPlan& p, Fn&& fn) {
  const size_t rank = p.out.size();
  const size_t total = numel(p.out);
  if (total == 0) return;
  if (rank == 0) {
    fn(size_t{0}, size_t{0}, size_t{0});
    return;
  }
  const size_t inner = p.out[rank - 1];
  const size_t sa = p.a_stride[rank - 1];
  const size_t sb = p.b_stride[rank - 1];
  std::vector<size_t> counter(rank, 0);
  size_t ia = 0;
  size_t ib = 0;
  for (size_t o = 0; o < total; o += inner) {
    for (size_t j = 0; j < inner; ++j) fn(o + j, ia + j * sa, ib + j * sb);
    for (size_t axis = rank - 1; axis-- > 0;) {
      ++counter[axis];
      ia += p.a_stride[axis];
      ib += p.b_stride[axis];
      if (counter[axis] < p.out[axis]) break;
      ia -= p.a_stride[axis] * p.out[axis];
      ib -= p.b_stride[axis] * p.out[axis];
      counter[axis] = 0;
    }
  }
}

enum class BinaryKind { kAdd, kSub, kMul };

template <typename S>
Tensor<S> binary(BinaryKind kind, const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape() == b.shape()) {
    const size_t n = a.numel();
    std::vector<S> out(n);
    const S* pa = a.data().data();
    const S* pb = b.data().data();
    switch (kind) {
      case BinaryKind::kAdd:
        for (size_t i = 0; i < n; ++i) out[i] = pa[i] + pb[i];
        break;
      case BinaryKind::kSub:
        for (size_t i = 0; i < n; ++i) out[i] = pa[i] - pb[i];
        break;
      case BinaryKind::kMul:
        for (size_t i = 0; i < n; ++i) out[i] = pa[i] * pb[i];
        break;
    }
    return make_result<S>(a.shape(), std::move(out), {a, b}, [kind](NodeT<S>& self) {
      auto& na = *self.inputs[0];
      auto& nb = *self.inputs[self.inputs.size() - 1];
      const size_t n = self.grad.size();
      const S* g = self.grad.data();
      if (na.requires_grad) {
        S* ga = na.grad_buffer().data();
        if (kind == BinaryKind::kMul) {
          for (size_t i = 0; i < n; ++i) ga[i] += g[i] * nb.data[i];
        } else {
          for (size_t i = 0; i < n; ++i) ga[i] += g[i];
        }
      }
      if (nb.requires_grad) {
        S* gb = nb.grad_buffer().data();
        if (kind == BinaryKind::kMul) {
          for (size_t i = 0; i < n; ++i) gb[i] += g[i] * na.data[i];
        } else if (kind == BinaryKind::kSub) {
          for (size_t i = 0; i < n; ++i) gb[i] -= g[i];
        } else {
          for (size_t i = 0; i < n; ++i) gb[i] += g[i];
        }
      }
    });
  }

  auto plan = plan_broadcast(a.shape(), b.shape());
  std::vector<S> out(numel(plan.out));
  const S* pa = a.data().data();
  const S* pb = b.data().data();
  for_each_broadcast(plan, [&](size_t o, size_t i, size_t j) {
    switch (kind) {
      case BinaryKind::kAdd: out[o] = pa[i] + pb[j]; break;
      case BinaryKind::kSub: out[o] = pa[i] - pb[j]; break;
      case BinaryKind::kMul: out[o] = pa[i] * pb[j]; break;
    }
  });
  Shape out_shape = plan.out;
  return make_result<S>(std::move(out_shape), std::move(out), {a, b},
                        [kind, plan](NodeT<S>& self) {
                          auto& na = *self.inputs[0];
                          auto& nb = *self.inputs[self.inputs.size() - 1];
                          const S* g = self.grad.data();
                          S* ga = na.requires_grad ? na.grad_buffer().data() : nullptr;
                          S* gb = nb.requires_grad ? nb.grad_buffer().data() : nullptr;
                          for_each_broadcast(plan, [&](size_t o, size_t i, size_t j) {
                            switch (kind) {
                              case BinaryKind::kAdd:
                                if (ga) ga[i] += g[o];
                                if (gb) gb[j] += g[o];
                                break;
                              case BinaryKind::kSub:
                                if (ga) ga[i] += g[o];
                                if (gb) gb[j] -= g[o];
                                break;
                              case BinaryKind::kMul:
                                if (ga) ga[i] += g[o] * nb.data[j];
                                if (gb) gb[j] += g[o] * na.data[i];
                                break;
                            }
                          });
                        });
}

template <typename S, typename Fwd, typename Deriv>
Tensor<S> unary(const Tensor<S>& x, Fwd fwd, Deriv deriv) {
  const size_t n = x.numel();
  std::vector<S> out(n);
  const S* px = x.data().data();
  for (size_t i = 0; i < n; ++i) out[i] = fwd(px[i]);
  return make_result<S>(x.shape(), std::move(out), {x}, [deriv](NodeT<S>& self) {
    auto& in = *self.inputs[0];
    S* gi = in.grad_buffer().data();
    for (size_t i = 0; i < self.grad.size(); ++i) gi[i] += self.grad[i] * deriv(in.data[i], self.data[i]);
  });
}

void require_rank(const Shape& s, size_t rank, const char* op) {
  if (s.size() != rank) {
    throw ValidationError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                          to_string(s));
  }
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (size_t i = 0; i < rank; ++i) {
    const size_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
    const size_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
    if (da != db && da != 1 && db != 1) {
      throw ValidationError("shapes " + to_string(a) + " and " + to_string(b) +
                            " are not broadcast-compatible");
    }
    out[rank - 1 - i] = std::max(da, db);
  }
  return out;
}

template <typename S> Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) { return binary(BinaryKind::kAdd, a, b); }
template <typename S> Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) { return binary(BinaryKind::kSub, a, b); }
template <typename S> Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) { return binary(BinaryKind::kMul, a, b); }

template <typename S>
Tensor<S> scale(const Tensor<S>& a, S k) {
  return unary<S>(a, [k](S v) { return v * k; }, [k](S, S) { return k; });
}

template <typename S>
Tensor<S> add_scalar(const Tensor<S>& a, S k) {
  return unary<S>(a, [k](S v) { return v + k; }, [](S, S) { return S(1); });
}

template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
  return unary<S>(x, [](S v) { return v > S(0) ? v : S(0); }, [](S v, S) { return v > S(0) ? S(1) : S(0); });
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& x) {
  return unary<S>(
      x, [](S v) { return S(1) / (S(1) + std::exp(-v)); }, [](S, S y) { return y * (S(1) - y); });
}

template <typename S>
Tensor<S> log(const Tensor<S>& x) {
  return unary<S>(x, [](S v) { return std::log(v); }, [](S v, S) { return S(1) / v; });
}

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  const bool batched = a.rank() == 3;
  if (!((a.rank() == 2 && b.rank() == 2) || (a.rank() == 3 && b.rank() == 3))) {
    throw ValidationError("matmul: unsupported ranks " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  const size_t batch = batched ? a.dim(0) : 1;
  const size_t m = a.dim(a.rank() - 2);
  const size_t k = a.dim(a.rank() - 1);
  const size_t n = b.dim(b.rank() - 1);
  if (b.dim(b.rank() - 2) != k || (batched && b.dim(0) != batch)) {
    throw ValidationError("matmul: inner dimensions differ for " + to_string(a.shape()) + " x " +
                          to_string(b.shape()));
  }
  std::vector<S> out(batch * m * n, S(0));
  for (size_t i = 0; i < batch; ++i) {
    gemm(false, false, m, n, k, S(1), a.data().data() + i * m * k, b.data().data() + i * k * n, S(0),
         out.data() + i * m * n);
  }
  Shape shape = batched ? Shape{batch, m, n} : Shape{m, n};
  return make_result<S>(std::move(shape), std::move(out), {a, b}, [batch, m, n, k](NodeT<S>& self) {
    auto& na = *self.inputs[0];
    auto& nb = *self.inputs[self.inputs.size() - 1];
    for (size_t i = 0; i < batch; ++i) {
      const S* g = self.grad.data() + i * m * n;
      if (na.requires_grad) {
        gemm(false, true, m, k, n, S(1), g, nb.data.data() + i * k * n, S(1),
             na.grad_buffer().data() + i * m * k);
      }
      if (nb.requires_grad) {
        gemm(true, false, k, n, m, S(1), na.data.data() + i * m * k, g, S(1),
             nb.grad_buffer().data() + i * k * n);
      }
    }
  });
}

template <typename S>
Tensor<S> transpose(const Tensor<S>& a) {
  if (a.rank() != 2 && a.rank() != 3) throw ValidationError("transpose: rank must be 2 or 3, got " + to_string(a.shape()));
  const size_t batch = a.rank() == 3 ? a.dim(0) : 1;
  const size_t r = a.dim(a.rank() - 2);
  const size_t c = a.dim(a.rank() - 1);
  std::vector<S> out(a.numel());
  const S* p = a.data().data();
  for (size_t b = 0; b < batch; ++b)
    for (size_t i = 0; i < r; ++i)
      for (size_t j = 0; j < c; ++j) out[b * r * c + j * r + i] = p[b * r * c + i * c + j];
  Shape shape = a.shape();
  std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
  return make_result<S>(std::move(shape), std::move(out), {a}, [batch, r, c](NodeT<S>& self) {
    S* gi = self.inputs[0]->grad_buffer().data();
    for (size_t b = 0; b < batch; ++b)
      for (size_t i = 0; i < r; ++i)
        for (size_t j = 0; j < c; ++j) gi[b * r * c + i * c + j] += self.grad[b * r * c + j * r + i];
  });
}

template <typename S>
Tensor<S> reshape(const Tensor<S>& a, Shape shape) {
  if (numel(shape) != a.numel()) {
    throw ValidationError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
  }
  std::vector<S> out(a.data().begin(), a.data().end());
  return make_result<S>(std::move(shape), std::move(out), {a}, [](NodeT<S>& self) {
    S* gi = self.inputs[0]->grad_buffer().data();
    for (size_t i = 0; i < self.grad.size(); ++i) gi[i] += self.grad[i];
  });
}

namespace {

struct ConvGeometry {
  size_t cin, h, w, cout, k, stride, pad, ho, wo;
};

// Output columns [lo, hi) whose stride-1 input column ox + kx - pad is inside the image.
std::pair<size_t, size_t> valid_columns(const ConvGeometry& g, size_t kx) {
  const size_t lo = std::min(g.wo, g.pad > kx ? g.pad - kx : size_t{0});
  const size_t hi = std::min(g.wo, g.w + g.pad > kx ? g.w + g.pad - kx : size_t{0});
  return {lo, std::max(lo, hi)};
}

template <typename S>
void im2col(const S* x, const ConvGeometry& g, S* cols) {
  const size_t plane = g.ho * g.wo;
  for (size_t c = 0; c < g.cin; ++c) {
    for (size_t ky = 0; ky < g.k; ++ky) {
      for (size_t kx = 0; kx < g.k; ++kx) {
        S* row = cols + ((c * g.k + ky) * g.k + kx) * plane;
        for (size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          S* dst = row + oy * g.wo;
          if (iy < 0 || iy >= static_cast<long>(g.h)) {
            std::fill(dst, dst + g.wo, S(0));
            continue;
          }
          const S* src = x + (c * g.h + static_cast<size_t>(iy)) * g.w;
          if (g.stride == 1) {
            const auto [lo, hi] = valid_columns(g, kx);
            std::fill(dst, dst + lo, S(0));
            std::copy(src + lo + kx - g.pad, src + hi + kx - g.pad, dst + lo);
            std::fill(dst + hi, dst + g.wo, S(0));
            continue;
          }
          for (size_t ox = 0; ox < g.wo; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            dst[ox] = (ix < 0 || ix >= static_cast<long>(g.w)) ? S(0) : src[ix];
          }
        }
      }
    }
  }
}

template <typename S>
void col2im(const S* cols, const ConvGeometry& g, S* dx) {
  const size_t plane = g.ho * g.wo;
  for (size_t c = 0; c < g.cin; ++c) {
    for (size_t ky = 0; ky < g.k; ++ky) {
      for (size_t kx = 0; kx < g.k; ++kx) {
        const S* row = cols + ((c * g.k + ky) * g.k + kx) * plane;
        for (size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          S* dst = dx + (c * g.h + static_cast<size_t>(iy)) * g.w;
          if (g.stride == 1) {
            const auto [lo, hi] = valid_columns(g, kx);
            const S* src = row + oy * g.wo;
            S* out = dst + kx - g.pad;
            for (size_t ox = lo; ox < hi; ++ox) out[ox] += src[ox];
            continue;
          }
          for (size_t ox = 0; ox < g.wo; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            if (ix >= 0 && ix < static_cast<long>(g.w)) dst[ix] += row[oy * g.wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& bias, size_t stride,
                 size_t padding) {
  require_rank(x.shape(), 3, "conv2d input");
  require_rank(w.shape(), 4, "conv2d weight");
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), w.dim(0), w.dim(2), stride, padding, 0, 0};
  if (w.dim(1) != g.cin || w.dim(3) != g.k) {
    throw ValidationError("conv2d: weight " + to_string(w.shape()) + " does not fit input " +
                          to_string(x.shape()));
  }
  if (g.k % 2 == 0) throw ValidationError("conv2d: kernel size must be odd");
  if (stride == 0) throw ValidationError("conv2d: stride must be positive");
  const size_t span_h = g.h + 2 * padding;
  const size_t span_w = g.w + 2 * padding;
  if (span_h < g.k || span_w < g.k || (span_h - g.k) % stride != 0 || (span_w - g.k) % stride != 0) {
    throw ValidationError("conv2d: non-integer output size for input " + to_string(x.shape()) +
                          ", kernel " + std::to_string(g.k) + ", stride " + std::to_string(stride) +
                          ", padding " + std::to_string(padding));
  }
  g.ho = (span_h - g.k) / stride + 1;
  g.wo = (span_w - g.k) / stride + 1;
  if (bias.defined() && bias.numel() != g.cout) {
    throw ValidationError("conv2d: bias has " + std::to_string(bias.numel()) + " entries for " +
                          std::to_string(g.cout) + " output channels");
  }

  const size_t plane = g.ho * g.wo;
  const size_t kdim = g.cin * g.k * g.k;
  const bool pointwise = g.k == 1 && stride == 1 && padding == 0;
  std::vector<S> cols;
  if (!pointwise) {
    cols.resize(kdim * plane);
    im2col(x.data().data(), g, cols.data());
  }
  const S* col_ptr = pointwise ? x.data().data() : cols.data();

  std::vector<S> out(g.cout * plane);
  if (bias.defined()) {
    for (size_t o = 0; o < g.cout; ++o) std::fill_n(out.data() + o * plane, plane, bias.data()[o]);
  }
  gemm(false, false, g.cout, plane, kdim, S(1), w.data().data(), col_ptr, bias.defined() ? S(1) : S(0),
       out.data());

  std::vector<Tensor<S>> inputs{x, w};
  if (bias.defined()) inputs.push_back(bias);
  const bool has_bias = bias.defined();
  return make_result<S>(
      Shape{g.cout, g.ho, g.wo}, std::move(out), inputs,
      [g, pointwise, has_bias, cols = std::move(cols), plane, kdim](NodeT<S>& self) {
        auto& nx = *self.inputs[0];
        auto& nw = *self.inputs[1];
        const S* dy = self.grad.data();
        const S* col_ptr = pointwise ? nx.data.data() : cols.data();
        if (nw.requires_grad) {
          gemm(false, true, g.cout, kdim, plane, S(1), dy, col_ptr, S(1), nw.grad_buffer().data());
        }
        if (has_bias && self.inputs[2]->requires_grad) {
          S* gb = self.inputs[2]->grad_buffer().data();
          for (size_t o = 0; o < g.cout; ++o) {
            S acc = 0;
            for (size_t p = 0; p < plane; ++p) acc += dy[o * plane + p];
            gb[o] += acc;
          }
        }
        if (nx.requires_grad) {
          if (pointwise) {
            gemm(true, false, kdim, plane, g.cout, S(1), nw.data.data(), dy, S(1), nx.grad_buffer().data());
          } else {
            std::vector<S> dcols(kdim * plane);
            gemm(true, false, kdim, plane, g.cout, S(1), nw.data.data(), dy, S(0), dcols.data());
            col2im(dcols.data(), g, nx.grad_buffer().data());
          }
        }
      });
}

template <typename S>
Tensor<S> avg_pool2d(const Tensor<S>& x, size_t window) {
  require_rank(x.shape(), 3, "avg_pool2d");
  const size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (window == 0 || h % window != 0 || w % window != 0) {
    throw ValidationError("avg_pool2d: window " + std::to_string(window) + " does not tile " + to_string(x.shape()));
  }
  const size_t ho = h / window, wo = w / window;
  const S inv = S(1) / static_cast<S>(window * window);
  std::vector<S> out(c * ho * wo, S(0));
  const S* p = x.data().data();
  for (size_t ch = 0; ch < c; ++ch)
    for (size_t y = 0; y < h; ++y)
      for (size_t xx = 0; xx < w; ++xx) out[(ch * ho + y / window) * wo + xx / window] += p[(ch * h + y) * w + xx] * inv;
  return make_result<S>(Shape{c, ho, wo}, std::move(out), {x}, [c, h, w, ho, wo, window, inv](NodeT<S>& self) {
    S* gi = self.inputs[0]->grad_buffer().data();
    for (size_t ch = 0; ch < c; ++ch)
      for (size_t y = 0; y < h; ++y)
        for (size_t xx = 0; xx < w; ++xx) gi[(ch * h + y) * w + xx] += self.grad[(ch * ho + y / window) * wo + xx / window] * inv;
  });
}

template <typename S>
Tensor<S> softmax(const Tensor<S>& x, size_t axis) {
  if (axis >= x.rank()) throw ValidationError("softmax: axis " + std::to_string(axis) + " invalid for " + to_string(x.shape()));
  size_t outer = 1, inner = 1;
  for (size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const size_t len = x.dim(axis);
  std::vector<S> out(x.numel());
  const S* p = x.data().data();
  for (size_t o = 0; o < outer; ++o) {
    for (size_t in = 0; in < inner; ++in) {
      const size_t base = o * len * inner + in;
      S mx = -std::numeric_limits<S>::infinity();
      for (size_t i = 0; i < len; ++i) mx = std::max(mx, p[base + i * inner]);
      S total = 0;
      for (size_t i = 0; i < len; ++i) {
        const S e = std::exp(p[base + i * inner] - mx);
        out[base + i * inner] = e;
        total += e;
      }
      const S inv = S(1) / total;
      for (size_t i = 0; i < len; ++i) out[base + i * inner] *= inv;
    }
  }
  return make_result<S>(x.shape(), std::move(out), {x}, [outer, inner, len](NodeT<S>& self) {
    S* gi = self.inputs[0]->grad_buffer().data();
    const S* y = self.data.data();
    const S* g = self.grad.data();
    for (size_t o = 0; o < outer; ++o) {
      for (size_t in = 0; in < inner; ++in) {
        const size_t base = o * len * inner + in;
        S dot = 0;
        for (size_t i = 0; i < len; ++i) dot += g[base + i * inner] * y[base + i * inner];
        for (size_t i = 0; i < len; ++i) {
          const size_t idx = base + i * inner;
          gi[idx] += y[idx] * (g[idx] - dot);
        }
      }
    }
  });
}

template <typename S>
Tensor<S> norm2d(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta, Tensor<S>& running_mean,
                 Tensor<S>& running_var, const NormOptions& opts) {
  require_rank(x.shape(), 3, "norm2d");
  const size_t c = x.dim(0);
  const size_t n = x.dim(1) * x.dim(2);
  if (gamma.numel() != c || beta.numel() != c || running_mean.numel() != c || running_var.numel() != c) {
    throw ValidationError("norm2d: parameter sizes do not match " + std::to_string(c) + " channels");
  }
  const S eps = static_cast<S>(opts.eps);
  std::vector<S> mean(c), inv_std(c);
  const S* p = x.data().data();
  if (opts.training) {
    auto rm = running_mean.mutable_data();
    auto rv = running_var.mutable_data();
    const S m = static_cast<S>(opts.momentum);
    for (size_t ch = 0; ch < c; ++ch) {
      const S* row = p + ch * n;
      S acc = 0;
      for (size_t i = 0; i < n; ++i) acc += row[i];
      const S mu = acc / static_cast<S>(n);
      S sq = 0;
      for (size_t i = 0; i < n; ++i) sq += (row[i] - mu) * (row[i] - mu);
      const S var = sq / static_cast<S>(n);
      mean[ch] = mu;
      inv_std[ch] = S(1) / std::sqrt(var + eps);
      if (opts.update_running) {
        const S unbiased = n > 1 ? sq / static_cast<S>(n - 1) : var;
        rm[ch] = (S(1) - m) * rm[ch] + m * mu;
        rv[ch] = (S(1) - m) * rv[ch] + m * unbiased;
      }
    }
  } else {
    for (size_t ch = 0; ch < c; ++ch) {
      mean[ch] = running_mean.data()[ch];
      inv_std[ch] = S(1) / std::sqrt(running_var.data()[ch] + eps);
    }
  }
  std::vector<S> xhat(c * n), out(c * n);
  for (size_t ch = 0; ch < c; ++ch) {
    const S gm = gamma.data()[ch], bt = beta.data()[ch];
    for (size_t i = 0; i < n; ++i) {
      const S v = (p[ch * n + i] - mean[ch]) * inv_std[ch];
      xhat[ch * n + i] = v;
      out[ch * n + i] = gm * v + bt;
    }
  }
  const bool batch_stats = opts.training;
  return make_result<S>(
      x.shape(), std::move(out), {x, gamma, beta},
      [c, n, batch_stats, inv_std = std::move(inv_std), xhat = std::move(xhat)](NodeT<S>& self) {
        auto& nx = *self.inputs[0];
        auto& ng = *self.inputs[1];
        auto& nb = *self.inputs[2];
        const S* g = self.grad.data();
        for (size_t ch = 0; ch < c; ++ch) {
          const S* gy = g + ch * n;
          const S* xh = xhat.data() + ch * n;
          S sum_g = 0, sum_gx = 0;
          for (size_t i = 0; i < n; ++i) {
            sum_g += gy[i];
            sum_gx += gy[i] * xh[i];
          }
          if (ng.requires_grad) ng.grad_buffer()[ch] += sum_gx;
          if (nb.requires_grad) nb.grad_buffer()[ch] += sum_g;
          if (nx.requires_grad) {
            S* gx = nx.grad_buffer().data() + ch * n;
            const S gm = ng.data[ch];
            if (batch_stats) {
              const S k = gm * inv_std[ch] / static_cast<S>(n);
              const S ns = static_cast<S>(n);
              for (size_t i = 0; i < n; ++i) gx[i] += k * (ns * gy[i] - sum_g - xh[i] * sum_gx);
            } else {
              for (size_t i = 0; i < n; ++i) gx[i] += gy[i] * gm * inv_std[ch];
            }
          }
        }
      });
}

namespace {

struct AxisSample {
  size_t i0, i1;
  double frac;
};

std::vector<AxisSample> axis_samples(size_t in, size_t out) {
  std::vector<AxisSample> s(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    if (src < 0) src = 0;
    size_t i0 = static_cast<size_t>(src);
    if (i0 > in - 1) i0 = in - 1;
    const size_t i1 = std::min(i0 + 1, in - 1);
    s[o] = {i0, i1, src - static_cast<double>(i0)};
  }
  return s;
}

}  // namespace

template <typename S>
Tensor<S> bilinear_interpolate(const Tensor<S>& x, size_t out_h, size_t out_w) {
  require_rank(x.shape(), 3, "bilinear_interpolate");
  if (out_h == 0 || out_w == 0) throw ValidationError("bilinear_interpolate: zero-size target");
  const size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  auto ys = axis_samples(h, out_h);
  auto xs = axis_samples(w, out_w);
  std::vector<S> out(c * out_h * out_w);
  const S* p = x.data().data();
  for (size_t ch = 0; ch < c; ++ch) {
    const S* plane = p + ch * h * w;
    for (size_t oy = 0; oy < out_h; ++oy) {
      const auto& sy = ys[oy];
      const S fy = static_cast<S>(sy.frac);
      for (size_t ox = 0; ox < out_w; ++ox) {
        const auto& sx = xs[ox];
        const S fx = static_cast<S>(sx.frac);
        const S top = plane[sy.i0 * w + sx.i0] * (S(1) - fx) + plane[sy.i0 * w + sx.i1] * fx;
        const S bot = plane[sy.i1 * w + sx.i0] * (S(1) - fx) + plane[sy.i1 * w + sx.i1] * fx;
        out[(ch * out_h + oy) * out_w + ox] = top * (S(1) - fy) + bot * fy;
      }
    }
  }
  return make_result<S>(Shape{c, out_h, out_w}, std::move(out), {x},
                        [c, h, w, out_h, out_w, ys = std::move(ys), xs = std::move(xs)](NodeT<S>& self) {
                          S* gi = self.inputs[0]->grad_buffer().data();
                          for (size_t ch = 0; ch < c; ++ch) {
                            S* plane = gi + ch * h * w;
                            for (size_t oy = 0; oy < out_h; ++oy) {
                              const auto& sy = ys[oy];
                              const S fy = static_cast<S>(sy.frac);
                              for (size_t ox = 0; ox < out_w; ++ox) {
                                const auto& sx = xs[ox];
                                const S fx = static_cast<S>(sx.frac);
                                const S g = self.grad[(ch * out_h + oy) * out_w + ox];
                                plane[sy.i0 * w + sx.i0] += g * (S(1) - fy) * (S(1) - fx);
                                plane[sy.i0 * w + sx.i1] += g * (S(1) - fy) * fx;
                                plane[sy.i1 * w + sx.i0] += g * fy * (S(1) - fx);
                                plane[sy.i1 * w + sx.i1] += g * fy * fx;
                              }
                            }
                          }
                        });
}

template <typename S>
Tensor<S> concat(const std::vector<Tensor<S>>& parts, size_t axis) {
  if (parts.empty()) throw ValidationError("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw ValidationError("concat: axis out of range for " + to_string(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& t : parts) {
    const Shape& s = t.shape();
    bool ok = s.size() == first.size();
    for (size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == first[i];
    if (!ok) throw ValidationError("concat: " + to_string(s) + " does not match " + to_string(first));
    out_shape[axis] += s[axis];
  }
  size_t outer = 1, inner = 1;
  for (size_t i = 0; i < axis; ++i) outer *= first[i];
  for (size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  const size_t out_chunk = out_shape[axis] * inner;
  std::vector<S> out(numel(out_shape));
  std::vector<size_t> chunks;
  size_t offset = 0;
  for (const auto& t : parts) {
    const size_t chunk = t.dim(axis) * inner;
    chunks.push_back(chunk);
    for (size_t o = 0; o < outer; ++o)
      std::copy_n(t.data().data() + o * chunk, chunk, out.data() + o * out_chunk + offset);
    offset += chunk;
  }
  return make_result<S>(std::move(out_shape), std::move(out), parts,
                        [outer, out_chunk, chunks = std::move(chunks)](NodeT<S>& self) {
                          size_t offset = 0;
                          for (size_t p = 0; p < chunks.size(); ++p) {
                            auto& in = *self.inputs[p];
                            if (in.requires_grad) {
                              S* gi = in.grad_buffer().data();
                              for (size_t o = 0; o < outer; ++o)
                                for (size_t j = 0; j < chunks[p]; ++j)
                                  gi[o * chunks[p] + j] += self.grad[o * out_chunk + offset + j];
                            }
                            offset += chunks[p];
                          }
                        });
}

template <typename S>
Tensor<S> slice(const Tensor<S>& x, size_t axis, size_t start, size_t length) {
  const Shape& in_shape = x.shape();
  if (axis >= in_shape.size()) throw ValidationError("slice: axis out of range for " + to_string(in_shape));
  if (length == 0 || start + length > in_shape[axis]) {
    throw ValidationError("slice: [" + std::to_string(start) + ", " + std::to_string(start + length) +
                          ") out of range for " + to_string(in_shape));
  }
  size_t outer = 1, inner = 1;
  for (size_t i = 0; i < axis; ++i) outer *= in_shape[i];
  for (size_t i = axis + 1; i < in_shape.size(); ++i) inner *= in_shape[i];
  const size_t in_chunk = in_shape[axis] * inner, chunk = length * inner, offset = start * inner;
  Shape out_shape = in_shape;
  out_shape[axis] = length;
  std::vector<S> out(outer * chunk);
  for (size_t o = 0; o < outer; ++o) std::copy_n(x.data().data() + o * in_chunk + offset, chunk, out.data() + o * chunk);
  return make_result<S>(std::move(out_shape), std::move(out), {x}, [outer, in_chunk, chunk, offset](NodeT<S>& self) {
    S* gi = self.inputs[0]->grad_buffer().data();
    for (size_t o = 0; o < outer; ++o)
      for (size_t j = 0; j < chunk; ++j) gi[o * in_chunk + offset + j] += self.grad[o * chunk + j];
  });
}

template <typename S>
Tensor<S> reduce_sum(const Tensor<S>& x) {
  S acc = 0;
  for (S v : x.data()) acc += v;
  return make_result<S>(Shape{1}, std::vector<S>{acc}, {x}, [](NodeT<S>& self) {
    S* gi = self.inputs[0]->grad_buffer().data();
    const S g = self.grad[0];
    for (size_t i = 0; i < self.inputs[0]->data.size(); ++i) gi[i] += g;
  });
}

template <typename S>
Tensor<S> reduce_mean(const Tensor<S>& x) {
  return scale(reduce_sum(x), S(1) / static_cast<S>(x.numel()));
}

template <typename S>
Tensor<S> to_tokens(const Tensor<S>& x) {
  require_rank(x.shape(), 3, "to_tokens");
  return transpose(reshape(x, Shape{x.dim(0), x.dim(1) * x.dim(2)}));
}

template <typename S>
Tensor<S> from_tokens(const Tensor<S>& tokens, size_t h, size_t w) {
  require_rank(tokens.shape(), 2, "from_tokens");
  if (tokens.dim(0) != h * w) throw ValidationError("from_tokens: token count does not match " + std::to_string(h) + "x" + std::to_string(w));
  const size_t c = tokens.dim(1);
  return reshape(transpose(tokens), Shape{c, h, w});
}

#define DIFFBEV_INSTANTIATE_OPS(S)                                                                   \
  template Tensor<S> add(const Tensor<S>&, const Tensor<S>&);                                        \
  template Tensor<S> sub(const Tensor<S>&, const Tensor<S>&);                                        \
  template Tensor<S> mul(const Tensor<S>&, const Tensor<S>&);                                        \
  template Tensor<S> scale(const Tensor<S>&, S);                                                     \
  template Tensor<S> add_scalar(const Tensor<S>&, S);                                                \
  template Tensor<S> matmul(const Tensor<S>&, const Tensor<S>&);                                     \
  template Tensor<S> transpose(const Tensor<S>&);                                                    \
  template Tensor<S> reshape(const Tensor<S>&, Shape);                                               \
  template Tensor<S> conv2d(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, size_t, size_t);   \
  template Tensor<S> avg_pool2d(const Tensor<S>&, size_t);                                           \
  template Tensor<S> softmax(const Tensor<S>&, size_t);                                              \
  template Tensor<S> relu(const Tensor<S>&);                                                         \
  template Tensor<S> sigmoid(const Tensor<S>&);                                                      \
  template Tensor<S> log(const Tensor<S>&);                                                          \
  template Tensor<S> norm2d(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, Tensor<S>&,        \
                            Tensor<S>&, const NormOptions&);                                         \
  template Tensor<S> bilinear_interpolate(const Tensor<S>&, size_t, size_t);                         \
  template Tensor<S> concat(const std::vector<Tensor<S>>&, size_t);                                  \
  template Tensor<S> slice(const Tensor<S>&, size_t, size_t, size_t);                                \
  template Tensor<S> reduce_sum(const Tensor<S>&);                                                   \
  template Tensor<S> reduce_mean(const Tensor<S>&);                                                  \
  template Tensor<S> to_tokens(const Tensor<S>&);                                                    \
  template Tensor<S> from_tokens(const Tensor<S>&, size_t, size_t);

DIFFBEV_INSTANTIATE_OPS(float)
DIFFBEV_INSTANTIATE_OPS(double)

}  // namespace diffbev
