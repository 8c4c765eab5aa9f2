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

#include "diffbev/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <unordered_set>

#include "diffbev/error.hpp"

namespace diffbev {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {

std::uint64_t next_sequence_number() {
  static std::atomic<std::uint64_t> counter{0};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

}  // namespace detail

namespace {
thread_local bool t_grad_enabled = true;
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

template <typename S>
Tensor<S>::Tensor(Shape shape, S fill) : node_(std::make_shared<detail::Node<S>>()) {
  node_->data.assign(diffbev::numel(shape), fill);
  node_->shape = std::move(shape);
  node_->seq = detail::next_sequence_number();
}

template <typename S>
Tensor<S>::Tensor(Shape shape, std::vector<S> data, bool requires_grad)
    : node_(std::make_shared<detail::Node<S>>()) {
  if (diffbev::numel(shape) != data.size()) {
    throw ValidationError("tensor shape " + to_string(shape) + " holds " +
                          std::to_string(diffbev::numel(shape)) + " values, got " +
                          std::to_string(data.size()));
  }
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
  node_->seq = detail::next_sequence_number();
}

template <typename S>
Tensor<S> Tensor<S>::vector(std::initializer_list<S> values) {
  return Tensor(Shape{values.size()}, std::vector<S>(values));
}

template <typename S>
S Tensor<S>::item() const {
  if (numel() != 1) throw ValidationError("item() on tensor of shape " + to_string(shape()));
  return node_->data[0];
}

template <typename S>
S Tensor<S>::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) throw ValidationError("index rank mismatch for " + to_string(shape()));
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= node_->shape[axis]) throw ValidationError("index out of range for " + to_string(shape()));
    flat = flat * node_->shape[axis] + i;
    ++axis;
  }
  return node_->data[flat];
}

template <typename S>
Tensor<S>& Tensor<S>::set_requires_grad(bool on) {
  node_->requires_grad = on;
  return *this;
}

template <typename S>
Tensor<S> Tensor<S>::clone() const {
  return Tensor(node_->shape, node_->data, false);
}

template <typename S>
static Tensor<S> make_result_impl(Shape shape, std::vector<S> data,
                                  std::span<const Tensor<S>> inputs,
                                  std::function<void(detail::Node<S>&)> backward) {
  Tensor<S> out(std::move(shape), std::move(data));
  if (!grad_enabled()) return out;
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const Tensor<S>& t) { return t.defined() && t.requires_grad(); });
  if (!any) return out;
  auto& node = *out.node();
  node.requires_grad = true;
  node.inputs.reserve(inputs.size());
  for (const auto& t : inputs) {
    if (t.defined()) node.inputs.push_back(t.node());
  }
  node.backward = std::move(backward);
  return out;
}

template <typename S>
Tensor<S> make_result(Shape shape, std::vector<S> data, std::initializer_list<Tensor<S>> inputs,
                      std::function<void(detail::Node<S>&)> backward) {
  return make_result_impl<S>(std::move(shape), std::move(data),
                             std::span<const Tensor<S>>(inputs.begin(), inputs.size()),
                             std::move(backward));
}

template <typename S>
Tensor<S> make_result(Shape shape, std::vector<S> data, const std::vector<Tensor<S>>& inputs,
                      std::function<void(detail::Node<S>&)> backward) {
  return make_result_impl<S>(std::move(shape), std::move(data), std::span<const Tensor<S>>(inputs),
                             std::move(backward));
}

template <typename S>
void backward(const Tensor<S>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ValidationError("backward() needs a single-element loss");
  }
  if (!loss.requires_grad()) return;

  // Collect the tape: every node reachable through recorded inputs. Strong
  // references keep nodes alive while the graph is torn down below.
  std::vector<std::shared_ptr<detail::Node<S>>> tape;
  std::unordered_set<detail::Node<S>*> seen;
  std::vector<std::shared_ptr<detail::Node<S>>> stack{loss.node()};
  while (!stack.empty()) {
    auto n = std::move(stack.back());
    stack.pop_back();
    if (!seen.insert(n.get()).second) continue;
    for (auto& in : n->inputs) {
      if (in->requires_grad) stack.push_back(in);
    }
    tape.push_back(std::move(n));
  }
  std::sort(tape.begin(), tape.end(), [](const auto& a, const auto& b) { return a->seq > b->seq; });

  loss.node()->grad_buffer()[0] += S(1);
  for (auto& n : tape) {
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
  // Discard the tape; leaves keep their accumulated gradients.
  for (auto& n : tape) {
    if (n->backward) {
      n->backward = nullptr;
      n->inputs.clear();
      n->requires_grad = false;
    }
  }
}

template class Tensor<float>;
template class Tensor<double>;

template Tensor<float> make_result(Shape, std::vector<float>, std::initializer_list<Tensor<float>>,
                                   std::function<void(detail::Node<float>&)>);
template Tensor<double> make_result(Shape, std::vector<double>, std::initializer_list<Tensor<double>>,
                                    std::function<void(detail::Node<double>&)>);
template Tensor<float> make_result(Shape, std::vector<float>, const std::vector<Tensor<float>>&,
                                   std::function<void(detail::Node<float>&)>);
template Tensor<double> make_result(Shape, std::vector<double>, const std::vector<Tensor<double>>&,
                                    std::function<void(detail::Node<double>&)>);
template void backward(const Tensor<float>&);
template void backward(const Tensor<double>&);

}  // namespace diffbev
