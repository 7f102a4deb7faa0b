// Copyright 2026 The Blockcast Authors
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

#include "blockcast/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "blockcast/error.hpp"

namespace blockcast::tensorgrad {

namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), values_(product(shape_), fill) {
  for (std::size_t e : shape_) {
    if (e == 0) throw ShapeError("tensor extents must be positive");
  }
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  for (std::size_t e : shape_) {
    if (e == 0) throw ShapeError("tensor extents must be positive");
  }
  if (values_.size() != product(shape_)) {
    throw ShapeError("value count " + std::to_string(values_.size()) +
                     " does not match shape " + shape_string());
  }
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor({rows, cols}, std::move(values));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

std::size_t Tensor::rows() const {
  if (shape_.size() != 2) throw ShapeError("expected a rank-2 tensor, got " + shape_string());
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (shape_.size() != 2) throw ShapeError("expected a rank-2 tensor, got " + shape_string());
  return shape_[1];
}

double Tensor::item() const {
  if (values_.size() != 1) throw ShapeError("item() on non-scalar tensor " + shape_string());
  return values_[0];
}

bool Tensor::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

std::string Tensor::shape_string() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t k = 0; k < shape_.size(); ++k) os << (k ? "x" : "") << shape_[k];
  os << ']';
  return os.str();
}

const Tensor& Var::value() const { return tape->value(id); }
const Tensor& Var::grad() const { return tape->grad(id); }

Var Tape::leaf(Tensor value, bool requires_grad) {
  if (debug_checks_ && !value.all_finite()) throw DomainError("non-finite leaf value");
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward) {
  if (debug_checks_ && !value.all_finite()) {
    throw DomainError("non-finite value produced by op #" + std::to_string(nodes_.size()));
  }
  Node node;
  node.value = std::move(value);
  for (std::size_t in : inputs) {
    if (in >= nodes_.size()) throw UsageError("op input is not on this tape");
    node.requires_grad = node.requires_grad || nodes_[in].requires_grad;
  }
  node.inputs = std::move(inputs);
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

const Tensor& Tape::grad(std::size_t id) const {
  const Node& node = nodes_.at(id);
  if (node.grad.size() == 0) {
    throw UsageError("no gradient for node #" + std::to_string(id) +
                     " (call backward first, or the node does not require grad)");
  }
  return node.grad;
}

Tensor& Tape::grad_accumulator(std::size_t id) {
  Node& node = nodes_.at(id);
  if (node.grad.size() == 0) node.grad = Tensor(node.value.shape(), 0.0);
  return node.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw UsageError("loss does not belong to this tape");
  if (nodes_.at(loss.id).value.size() != 1) {
    throw UsageError("backward needs a scalar root, got shape " +
                     nodes_[loss.id].value.shape_string());
  }
  for (Node& node : nodes_) {
    if (node.requires_grad) {
      node.grad = Tensor(node.value.shape(), 0.0);
    } else {
      node.grad = Tensor();
    }
  }
  if (!nodes_[loss.id].requires_grad) return;
  nodes_[loss.id].grad[0] = 1.0;
  for (std::size_t k = loss.id + 1; k-- > 0;) {
    Node& node = nodes_[k];
    if (node.requires_grad && node.backward) node.backward(*this, k);
  }
}

AttentionMask AttentionMask::prefix(std::size_t n) const {
  if (n > n_) throw ShapeError("mask prefix larger than mask");
  AttentionMask out(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) out.set(i, j, allowed(i, j));
  }
  return out;
}

}  // namespace blockcast::tensorgrad
