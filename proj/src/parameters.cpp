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

#include "blockcast/parameters.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "blockcast/error.hpp"
#include "detail/binio.hpp"

namespace blockcast::tensorgrad {

namespace {

constexpr const char* kCheckpointMagic = "BLKCCKPT1";
constexpr std::string_view kMomentPrefix1 = "adam.m/";
constexpr std::string_view kMomentPrefix2 = "adam.v/";

}  // namespace

Tensor& ParameterSet::add(std::string name, Tensor value) {
  if (name.empty() || name.find_first_of(" \n\t") != std::string::npos) {
    throw ConfigError("parameter names must be non-empty and contain no whitespace");
  }
  if (contains(name)) throw ConfigError("duplicate parameter '" + name + "'");
  entries_.emplace_back(std::move(name), std::move(value));
  return entries_.back().second;
}

std::size_t ParameterSet::index_of(std::string_view name) const {
  for (std::size_t k = 0; k < entries_.size(); ++k) {
    if (entries_[k].first == name) return k;
  }
  throw ConfigError("unknown parameter '" + std::string(name) + "'");
}

Tensor& ParameterSet::at(std::string_view name) { return entries_[index_of(name)].second; }
const Tensor& ParameterSet::at(std::string_view name) const {
  return entries_[index_of(name)].second;
}

bool ParameterSet::contains(std::string_view name) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const auto& e) { return e.first == name; });
}

std::vector<Var> ParameterSet::bind(Tape& tape) const {
  std::vector<Var> vars;
  vars.reserve(entries_.size());
  for (const auto& e : entries_) vars.push_back(tape.leaf(e.second, true));
  return vars;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.second.size();
  return n;
}

void write_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << kCheckpointMagic << '\n';
  for (const auto& [key, value] : checkpoint.meta) {
    if (key.empty() || key.find_first_of(" \n") != std::string::npos ||
        value.find('\n') != std::string::npos) {
      throw ConfigError("checkpoint meta entries must be single-line with a space-free key");
    }
    out << "meta " << key << ' ' << value << '\n';
  }
  const ParameterSet& params = checkpoint.params;
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& shape = params.tensor(k).shape();
    out << "param " << params.name(k) << " f64 " << shape.size();
    for (std::size_t e : shape) out << ' ' << e;
    out << '\n';
  }
  out << "end\n";
  for (std::size_t k = 0; k < params.size(); ++k) {
    detail::write_le<double>(out, params.tensor(k).data());
  }
  if (!out) throw IoError("write failed for " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::string ctx = path.string();
  std::string line;
  if (!std::getline(in, line) || line != kCheckpointMagic) {
    throw HeaderError(ctx + ": not a checkpoint (bad magic)");
  }
  Checkpoint ckpt;
  std::vector<std::pair<std::string, std::vector<std::size_t>>> layout;
  while (true) {
    if (!std::getline(in, line)) throw HeaderError(ctx + ": header not terminated");
    if (line == "end") break;
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "meta") {
      std::string key;
      ls >> key;
      std::string value;
      std::getline(ls, value);
      if (!value.empty() && value.front() == ' ') value.erase(0, 1);
      ckpt.meta[key] = value;
    } else if (kind == "param") {
      std::string name, dtype;
      std::size_t rank = 0;
      if (!(ls >> name >> dtype >> rank)) throw HeaderError(ctx + ": malformed param line");
      if (dtype != "f64") throw HeaderError(ctx + ": unsupported dtype '" + dtype + "'");
      std::vector<std::size_t> shape(rank);
      for (auto& e : shape) {
        if (!(ls >> e) || e == 0) throw HeaderError(ctx + ": bad extents for " + name);
      }
      layout.emplace_back(name, shape);
    } else {
      throw HeaderError(ctx + ": unknown header line '" + line + "'");
    }
  }
  for (auto& [name, shape] : layout) {
    Tensor t(shape);
    if (!detail::read_le<double>(in, t.data())) {
      throw TruncationError(ctx + ": payload truncated in '" + name + "'");
    }
    ckpt.params.add(name, std::move(t));
  }
  if (!detail::at_eof(in)) throw DimensionError(ctx + ": trailing bytes after payload");
  return ckpt;
}

OptimizerState OptimizerState::for_params(const ParameterSet& params, const AdamConfig& config) {
  OptimizerState state;
  state.config = config;
  for (std::size_t k = 0; k < params.size(); ++k) {
    state.first_moment.emplace_back(params.tensor(k).shape(), 0.0);
    state.second_moment.emplace_back(params.tensor(k).shape(), 0.0);
  }
  return state;
}

double warmup_lr(std::uint64_t step, double base_lr, std::size_t warmup_steps) {
  if (warmup_steps < 1) throw ConfigError("warmup_steps must be >= 1");
  const double ramp = static_cast<double>(step) / static_cast<double>(warmup_steps);
  return base_lr * std::min(1.0, ramp);
}

void adam_step(ParameterSet& params, std::span<const Tensor> grads, OptimizerState& state,
               double lr) {
  if (grads.size() != params.size() || state.first_moment.size() != params.size()) {
    throw ShapeError("adam_step: parameter, gradient and moment counts differ");
  }
  const AdamConfig& c = state.config;
  state.step += 1;
  const double bias1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bias2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = params.tensor(k);
    Tensor& m = state.first_moment[k];
    Tensor& v = state.second_moment[k];
    const Tensor& g = grads[k];
    if (!p.same_shape(g) || !p.same_shape(m) || !p.same_shape(v)) {
      throw ShapeError("adam_step: shape mismatch for '" + params.name(k) + "'");
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bias1;
      const double v_hat = v[i] / bias2;
      p[i] -= lr * m_hat / (std::sqrt(v_hat) + c.eps);
    }
  }
}

double adam_step(ParameterSet& params, std::span<const Tensor> grads, OptimizerState& state) {
  const double lr = warmup_lr(state.step + 1, state.config.lr, state.config.warmup_steps);
  adam_step(params, grads, state, lr);
  return lr;
}

void store_optimizer(Checkpoint& checkpoint, const OptimizerState& state,
                     const ParameterSet& params) {
  for (std::size_t k = 0; k < params.size(); ++k) {
    checkpoint.params.add(std::string(kMomentPrefix1) + params.name(k), state.first_moment[k]);
    checkpoint.params.add(std::string(kMomentPrefix2) + params.name(k), state.second_moment[k]);
  }
  checkpoint.meta["step"] = std::to_string(state.step);
}

OptimizerState load_optimizer(const Checkpoint& checkpoint, const ParameterSet& params,
                              const AdamConfig& config) {
  OptimizerState state = OptimizerState::for_params(params, config);
  auto it = checkpoint.meta.find("step");
  if (it == checkpoint.meta.end()) return state;
  state.step = detail::parse_number<std::uint64_t>(it->second, "step");
  for (std::size_t k = 0; k < params.size(); ++k) {
    const std::string m_name = std::string(kMomentPrefix1) + params.name(k);
    const std::string v_name = std::string(kMomentPrefix2) + params.name(k);
    if (!checkpoint.params.contains(m_name) || !checkpoint.params.contains(v_name)) {
      throw HeaderError("checkpoint lacks optimizer moments for '" + params.name(k) + "'");
    }
    state.first_moment[k] = checkpoint.params.at(m_name);
    state.second_moment[k] = checkpoint.params.at(v_name);
  }
  return state;
}

ParameterSet model_parameters(const Checkpoint& checkpoint) {
  ParameterSet out;
  for (std::size_t k = 0; k < checkpoint.params.size(); ++k) {
    const std::string& name = checkpoint.params.name(k);
    if (name.starts_with(kMomentPrefix1) || name.starts_with(kMomentPrefix2)) continue;
    out.add(name, checkpoint.params.tensor(k));
  }
  return out;
}

}  // namespace blockcast::tensorgrad
