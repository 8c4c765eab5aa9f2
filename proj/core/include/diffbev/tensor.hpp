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
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace diffbev {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {

/// One vertex of the dynamic graph. Outputs hold strong references to their
/// inputs, so the graph lives exactly as long as the loss tensor that roots it.
template <typename S>
struct Node {
  Shape shape;
  std::vector<S> data;
  std::vector<S> grad;
  bool requires_grad = false;
  std::uint64_t seq = 0;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  std::span<S> grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), S(0));
    return grad;
  }
};

std::uint64_t next_sequence_number();

}  // namespace detail

/// Whether newly created op outputs record a backward rule on this thread.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Dense row-major tensor handle. Copies share storage; use clone() for a
/// deep copy. Data is immutable once the tensor participates in a graph,
/// except for leaves, whose values the optimizer updates in place.
template <typename S>
class Tensor {
 public:
  using Scalar = S;

  Tensor() = default;
  explicit Tensor(Shape shape, S fill = S(0));
  Tensor(Shape shape, std::vector<S> data, bool requires_grad = false);

  static Tensor zeros(const Shape& shape) { return Tensor(shape, S(0)); }
  static Tensor ones(const Shape& shape) { return Tensor(shape, S(1)); }
  static Tensor scalar(S value) { return Tensor(Shape{1}, value); }
  static Tensor vector(std::initializer_list<S> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const S> data() const { return node_->data; }
  std::span<S> mutable_data() { return node_->data; }
  S item() const;
  S at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on);
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const S> grad() const { return node_->grad; }
  std::span<S> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.clear(); }

  /// Same values, fresh storage, no graph history.
  Tensor clone() const;
  /// Shares nothing with the graph; gradients stop here.
  Tensor detach() const { return clone(); }

  const std::shared_ptr<detail::Node<S>>& node() const { return node_; }
  static Tensor from_node(std::shared_ptr<detail::Node<S>> node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

 private:
  std::shared_ptr<detail::Node<S>> node_;
};

/// Builds an op output. When grad mode is on and any input requires a
/// gradient, the output records `backward`, which reads the output's grad and
/// accumulates into the inputs' grad buffers.
template <typename S>
Tensor<S> make_result(Shape shape, std::vector<S> data,
                      std::initializer_list<Tensor<S>> inputs,
                      std::function<void(detail::Node<S>&)> backward);

template <typename S>
Tensor<S> make_result(Shape shape, std::vector<S> data,
                      const std::vector<Tensor<S>>& inputs,
                      std::function<void(detail::Node<S>&)> backward);

/// Reverse-mode sweep from a single-element tensor. Nodes are replayed in
/// reverse creation order, then the recorded graph is released.
template <typename S>
void backward(const Tensor<S>& loss);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace diffbev
