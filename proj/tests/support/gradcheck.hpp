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

// Central finite-difference oracle. Independent of the tape: it only ever
// evaluates the forward function.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "blockcast/tensor.hpp"

namespace blockcast::testing {

using tensorgrad::Tape;
using tensorgrad::Tensor;
using tensorgrad::Var;

/// Builds the computation on a fresh tape from leaf variables and returns the
/// scalar root.
using GraphFn = std::function<Var(Tape&, const std::vector<Var>&)>;

inline double evaluate(const GraphFn& fn, const std::vector<Tensor>& inputs) {
  Tape tape;
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.push_back(tape.leaf(t));
  return fn(tape, vars).value().item();
}

inline std::vector<Tensor> analytic_gradients(const GraphFn& fn, const std::vector<Tensor>& inputs) {
  Tape tape;
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.push_back(tape.leaf(t));
  Var loss = fn(tape, vars);
  tape.backward(loss);
  std::vector<Tensor> grads;
  for (const auto& v : vars) grads.push_back(v.grad());
  return grads;
}

inline Tensor numerical_gradient(const GraphFn& fn, std::vector<Tensor> inputs, std::size_t which,
                                 double h = 1e-5) {
  Tensor grad(inputs[which].shape(), 0.0);
  for (std::size_t k = 0; k < grad.size(); ++k) {
    const double saved = inputs[which][k];
    inputs[which][k] = saved + h;
    const double up = evaluate(fn, inputs);
    inputs[which][k] = saved - h;
    const double down = evaluate(fn, inputs);
    inputs[which][k] = saved;
    grad[k] = (up - down) / (2.0 * h);
  }
  return grad;
}

/// ||a - b|| / max(||a||, ||b||, floor).
inline double relative_error(const Tensor& a, const Tensor& b, double floor = 1e-10) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    diff += (a[k] - b[k]) * (a[k] - b[k]);
    na += a[k] * a[k];
    nb += b[k] * b[k];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

/// Worst relative error over all inputs. Gradients whose norm sits below
/// `floor` are compared absolutely, since central differences carry ~1e-11
/// roundoff that would swamp an exactly-zero gradient.
inline double gradient_check(const GraphFn& fn, const std::vector<Tensor>& inputs,
                             double h = 1e-5, double floor = 1e-6) {
  const auto analytic = analytic_gradients(fn, inputs);
  double worst = 0.0;
  for (std::size_t w = 0; w < inputs.size(); ++w) {
    worst = std::max(worst, relative_error(analytic[w], numerical_gradient(fn, inputs, w, h), floor));
  }
  return worst;
}

inline Tensor random_tensor(std::mt19937_64& rng, std::size_t rows, std::size_t cols,
                            double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t({rows, cols});
  for (double& v : t.data()) v = dist(rng);
  return t;
}

/// Contracts a tensor-valued op with fixed random weights so every output
/// element contributes to the scalar being differentiated.
inline Var weighted_sum(Var out, const Tensor& weights) {
  Tape& tape = *out.tape;
  return tensorgrad::sum(tensorgrad::mul(out, tape.constant(weights)));
}

}  // namespace blockcast::testing
