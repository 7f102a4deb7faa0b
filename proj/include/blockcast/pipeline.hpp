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
#include <string>
#include <vector>

#include "blockcast/blockdynamics.hpp"
#include "blockcast/config.hpp"
#include "blockcast/verification.hpp"
#include "blockcast/vqtokenizer.hpp"

namespace blockcast::cli {

// Artifact locations derived from a config.
std::filesystem::path manifest_path(const RunConfig& config, const std::string& split);
std::filesystem::path tokenizer_checkpoint(const RunConfig& config);
std::filesystem::path dynamics_checkpoint(const RunConfig& config, dynamics::Mode mode);

/// Seed of the `index`-th generated event of a split.
std::uint64_t event_seed(const RunConfig& config, const std::string& split, std::size_t index);

struct GenDataResult {
  std::filesystem::path manifest;
  std::size_t generated = 0;
  std::vector<std::filesystem::path> files;  // events kept by the filter
};

/// Generates `n_events` advection events with per-event seeds derived from
/// (seed, split, index), keeps those above the configured mean-rate
/// percentile and writes them with a manifest.
GenDataResult gen_data(const RunConfig& config, std::size_t n_events, const std::string& split = "train");

struct TrainResult {
  std::filesystem::path checkpoint;
  std::filesystem::path log;
  std::uint64_t first_step = 0;  // first step run by this call (1-based)
  std::uint64_t last_step = 0;
  double final_loss = 0.0;
};

/// Trains for the configured step count, or continues a saved run when
/// `resume` is set. Loss logs gain one CSV row per step.
TrainResult train_tokenizer(const RunConfig& config, bool resume = false, const std::string& split = "train");
TrainResult train_dynamics(const RunConfig& config, dynamics::Mode mode, bool resume = false,
                           const std::string& split = "train");

vq::Tokenizer load_tokenizer(const RunConfig& config);
dynamics::DynamicsModel load_dynamics(const RunConfig& config, dynamics::Mode mode);

/// Token frames of an event, one flat index vector per frame.
dynamics::TokenSequence tokenize_frames(const vq::Tokenizer& tokenizer, const EventSequence& event);

/// Context frames of `event` followed by `horizon` decoded forecast frames;
/// context_len is kept so the target span lines up with the observation.
EventSequence forecast_event(const RunConfig& config, const vq::Tokenizer& tokenizer,
                             const dynamics::InferenceModel<double>& model, const EventSequence& event,
                             dynamics::Mode mode, std::vector<vq::TokenGrid>* tokens = nullptr);

struct ForecastResult {
  std::filesystem::path manifest;
  std::vector<std::filesystem::path> events;
};

/// Forecasts every input event into `out_dir` as <stem>.evt plus a <stem>.tok
/// token dump, and writes forecast.manifest.
ForecastResult forecast(const RunConfig& config, const std::vector<std::filesystem::path>& inputs,
                        dynamics::Mode mode, const std::filesystem::path& out_dir);

/// Lead-time, percentile-bin and catchment (west/east halves) metrics for one
/// seed's forecasts.
verify::MetricReport evaluate_events(const RunConfig& config, std::span<const verify::EventForecast> events,
                                     std::uint64_t seed);

struct EvaluateResult {
  verify::MetricReport report;
  std::vector<verify::AggregateRow> summary;
  std::filesystem::path csv;
  std::filesystem::path json;
  std::filesystem::path summary_csv;
};

/// One forecast manifest per seed, each aligned entry-by-entry with the
/// observation manifest.
EvaluateResult evaluate(const RunConfig& config, const std::vector<std::filesystem::path>& forecast_manifests,
                        const std::vector<std::uint64_t>& seeds, const std::filesystem::path& obs_manifest);

struct BenchmarkResult {
  dynamics::BenchmarkReport dynamics_only;
  dynamics::TimingStats frame_end_to_end;
  dynamics::TimingStats token_end_to_end;
  double end_to_end_ratio = 0.0;
  bool shared_weights = false;
  std::filesystem::path report;
};

/// Times frame- and token-level rollouts (dynamics alone and with tokenizer
/// encode/decode) and writes benchmark.json.
BenchmarkResult benchmark(const RunConfig& config, std::size_t horizon, std::size_t repetitions,
                          const std::string& split = "train");

}  // namespace blockcast::cli
