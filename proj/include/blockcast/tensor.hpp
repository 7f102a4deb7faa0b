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

#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace blockcast::tensorgrad {

/// Dense row-major array of doubles. Most operations work on rank-2 tensors;
/// scalars are stored with shape {1, 1}.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> values);

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
  static Tensor scalar(double v) { return Tensor({1, 1}, {v}); }
  static Tensor identity(std::size_t n);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  double& operator[](std::size_t k) { return values_[k]; }
  double operator[](std::size_t k) const { return values_[k]; }
  double& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }
  double item() const;

  std::span<double> data() { return values_; }
  std::span<const double> data() const { return values_; }
  std::vector<double>& storage() { return values_; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;
  std::string shape_string() const;

  bool operator==(const Tensor&) const = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> values_;
};

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Tensor& grad() const;
};

/// Records operations in execution order and replays them in reverse to
/// accumulate gradients. Confined to one thread.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Appends an op node. Inputs must already be on this tape.
  Var record(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward);

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  const Tensor& grad(std::size_t id) const;
  /// Gradient accumulator for a node, allocated as zeros on first use.
  Tensor& grad_accumulator(std::size_t id);
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_.at(id).inputs; }

  /// Reverse sweep from a scalar root. Leaves with no path to the root keep a
  /// zero gradient.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

  /// When enabled every recorded value is checked for NaN/Inf and softmax rows
  /// with no permitted entries raise instead of returning zeros.
  void set_debug_checks(bool on) { debug_checks_ = on; }
  bool debug_checks() const { return debug_checks_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
  bool debug_checks_ = false;
};

// Boolean attention-permission matrix; row i lists the key positions query i
// may attend to. Declared here because softmax and attention consume it.
class AttentionMask {
 public:
  AttentionMask() = default;
  explicit AttentionMask(std::size_t n, bool fill = false) : n_(n), allow_(n * n, fill) {}

  std::size_t size() const { return n_; }
  bool allowed(std::size_t i, std::size_t j) const { return allow_[i * n_ + j] != 0; }
  void set(std::size_t i, std::size_t j, bool v) { allow_[i * n_ + j] = v ? 1 : 0; }

  /// Leading n x n sub-mask.
  AttentionMask prefix(std::size_t n) const;

  bool operator==(const AttentionMask&) const = default;

 private:
  std::size_t n_ = 0;
  std::vector<unsigned char> allow_;
};

// ---- Differentiable operations -------------------------------------------

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
/// Adds a 1 x n row to every row of an m x n matrix.
Var add_row(Var a, Var row);
Var tanh(Var a);
/// tanh-approximated GELU.
Var gelu(Var a);
/// Clamps values; gradient flows only where the input is strictly inside.
Var clamp(Var a, double lo, double hi);

Var sum(Var a);
Var mean(Var a);
/// Mean over rows of the squared row norm: (1/m) sum_r ||a_r||^2.
Var mean_row_sq_norm(Var a);

/// Softmax along axis 0 (columns) or 1 (rows) of a rank-2 tensor.
Var softmax(Var x, int axis = 1);
/// Row-wise softmax of a square score matrix with disallowed entries set to
/// -inf; fully masked rows produce zeros.
Var masked_softmax(Var x, const AttentionMask& mask);

/// Per-row normalization over columns followed by gain and bias (both 1 x n).
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);

/// Mean negative log-likelihood of integer targets under row-wise softmax.
Var cross_entropy_logits(Var logits, std::span<const std::size_t> targets);

/// Gathers rows of a table: out[r] = table[indices[r]].
Var gather_rows(Var table, std::span<const std::size_t> indices);

/// Multi-head scaled dot-product attention over `n_seqs` stacked sequences of
/// equal length L: q, k, v are (n_seqs*L) x E, heads split E evenly and every
/// sequence uses the same L x L mask.
Var attention(Var q, Var k, Var v, const AttentionMask& mask, std::size_t n_heads = 1,
              std::size_t n_seqs = 1);

/// Value of the input with no gradient path.
Var stop_gradient(Var a);
/// Forward value of `quantized`, gradient routed to `continuous` unchanged.
Var straight_through(Var continuous, Var quantized);

}  // namespace blockcast::tensorgrad
