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
#include <string>
#include <utility>
#include <vector>

#include "blockcast/blockdynamics.hpp"
#include "blockcast/fieldio.hpp"
#include "blockcast/parameters.hpp"
#include "blockcast/vqtokenizer.hpp"

namespace blockcast::cli {

/// Everything a pipeline run depends on. Parsed from a flat `key = value`
/// file; blank lines and `#` comments are ignored.
struct RunConfig {
  std::uint64_t seed = 0;

  // grid and tokenizer
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t patch_size = 8;
  std::size_t codebook_size = 1024;
  std::size_t codebook_dim = 32;
  std::size_t latent_channels = 64;
  double beta = 0.25;

  // dynamics
  std::size_t n_layers = 2;
  std::size_t n_heads = 2;
  std::size_t embed_dim = 64;
  std::size_t max_frames = 9;
  std::size_t mlp_ratio = 4;
  dynamics::Mode mode = dynamics::Mode::kFrameLevel;

  // optimizer
  double lr = 1e-4;
  std::size_t warmup_steps = 10000;
  std::size_t batch_size = 8;
  std::size_t tokenizer_steps = 1000;
  std::size_t dynamics_steps = 1000;

  // task
  std::size_t context_len = 3;
  std::size_t horizon = 6;
  int step_minutes = 30;
  std::vector<double> thresholds{1.0, 2.0, 8.0};

  // synthetic data
  double data_max = 50.0;
  double filter_percentile = 50.0;
  double velocity_u = 8.0;
  double velocity_v = 0.0;
  int n_blobs = 3;
  double amplitude_min = 5.0;
  double amplitude_max = 40.0;
  double radius_min = 2.0;
  double radius_max = 5.0;
  double growth_rate = 1.0;

  // benchmark
  std::string hardware = "unspecified";
  std::size_t bench_repetitions = 50;
  std::size_t bench_warmup = 1;

  // paths, resolved against the output root
  std::filesystem::path out_dir = ".";
  std::filesystem::path data_dir = "data";
  std::filesystem::path checkpoint_dir = "checkpoints";
  std::filesystem::path report_dir = "reports";

  std::size_t tokens_per_frame() const { return (height / patch_size) * (width / patch_size); }
  std::size_t event_length() const { return context_len + horizon; }

  /// Throws ConfigError when settings contradict each other.
  void validate() const;

  vq::TokenizerConfig tokenizer_config() const;
  dynamics::DynamicsConfig dynamics_config(dynamics::Mode mode) const;
  tensorgrad::AdamConfig optimizer_config() const;
  AdvectionParams advection_params(std::uint64_t event_seed) const;

  std::filesystem::path resolve(const std::filesystem::path& p) const;
  std::filesystem::path data_path() const { return resolve(data_dir); }
  std::filesystem::path checkpoint_path() const { return resolve(checkpoint_dir); }
  std::filesystem::path report_path() const { return resolve(report_dir); }

  /// Every key with its effective value, in file order.
  std::vector<std::pair<std::string, std::string>> resolved() const;
};

/// Applies `key = value` assignments on top of `base`. Unknown or repeated
/// keys and malformed values raise ConfigError.
RunConfig parse_config(const std::string& text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});
/// Renders a config that parses back to the same values.
std::string render_config(const RunConfig& config);

}  // namespace blockcast::cli
