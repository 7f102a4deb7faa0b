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

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "blockcast/tensor.hpp"

namespace blockcast::tensorgrad {

/// Named parameter tensors in a fixed insertion order. The order is the
/// serialization order and the order of `bind`.
class ParameterSet {
 public:
  Tensor& add(std::string name, Tensor value);

  Tensor& at(std::string_view name);
  const Tensor& at(std::string_view name) const;
  bool contains(std::string_view name) const;

  std::size_t size() const { return entries_.size(); }
  const std::string& name(std::size_t k) const { return entries_[k].first; }
  Tensor& tensor(std::size_t k) { return entries_[k].second; }
  const Tensor& tensor(std::size_t k) const { return entries_[k].second; }
  std::size_t index_of(std::string_view name) const;

  /// Places every tensor on the tape as a gradient-tracking leaf.
  std::vector<Var> bind(Tape& tape) const;

  std::size_t scalar_count() const;

  bool operator==(const ParameterSet&) const = default;

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

struct Checkpoint {
  ParameterSet params;
  std::map<std::string, std::string> meta;

  bool operator==(const Checkpoint&) const = default;
};

// Layout: magic line, `meta <key> <value>` lines, `param <name> f64 <rank>
// <extents...>` lines, `end`, then float64 little-endian payloads in
// parameter order.
void write_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// ---- Optimizer -----------------------------------------------------------

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t warmup_steps = 10000;
  std::size_t batch_size = 8;
};

struct OptimizerState {
  AdamConfig config;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::uint64_t step = 0;

  static OptimizerState for_params(const ParameterSet& params, const AdamConfig& config);
};

/// Linear ramp base_lr * min(1, step / warmup_steps), constant afterwards.
double warmup_lr(std::uint64_t step, double base_lr, std::size_t warmup_steps);

/// One bias-corrected Adam update with an explicit learning rate.
void adam_step(ParameterSet& params, std::span<const Tensor> grads, OptimizerState& state,
               double lr);
/// Same, with the learning rate taken from the warmup schedule at step+1.
double adam_step(ParameterSet& params, std::span<const Tensor> grads, OptimizerState& state);

/// Stores moments under `adam.m/<name>` and `adam.v/<name>` plus the step
/// counter, so a resumed run continues bit-identically.
void store_optimizer(Checkpoint& checkpoint, const OptimizerState& state,
                     const ParameterSet& params);
OptimizerState load_optimizer(const Checkpoint& checkpoint, const ParameterSet& params,
                              const AdamConfig& config);

/// Splits model parameters from optimizer entries written by store_optimizer.
ParameterSet model_parameters(const Checkpoint& checkpoint);

}  // namespace blockcast::tensorgrad
