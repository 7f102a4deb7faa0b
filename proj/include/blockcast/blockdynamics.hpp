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
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "blockcast/parameters.hpp"
#include "blockcast/tensor.hpp"

namespace blockcast::dynamics {

using tensorgrad::AttentionMask;
using tensorgrad::Tensor;
using tensorgrad::Var;

/// Flattened H' x W' token indices of one frame.
using TokenFrame = std::vector<std::uint16_t>;

enum class Mode {
  kFrameLevel,  // all tokens of the next frame from one forward pass
  kTokenLevel,  // one token per forward pass, raster order
};

std::string to_string(Mode mode);
Mode parse_mode(const std::string& text);

// ---- Masks -----------------------------------------------------------------

/// Attention permissions over n_frames * tokens_per_frame positions.
struct BlockMask {
  std::size_t n_frames = 0;
  std::size_t tokens_per_frame = 0;
  AttentionMask allow;

  std::size_t size() const { return allow.size(); }
  std::size_t frame_of(std::size_t position) const { return position / tokens_per_frame; }
};

/// Bidirectional within a frame, causal across frames:
/// allow[i][j] <=> frame_of(j) <= frame_of(i).
BlockMask build_block_causal_mask(std::size_t n_frames, std::size_t tokens_per_frame);

/// Lower-triangular allow[i][j] <=> j <= i (one token per "frame").
BlockMask build_token_causal_mask(std::size_t seq_len);

// ---- Model -----------------------------------------------------------------

struct DynamicsConfig {
  std::size_t n_layers = 2;
  std::size_t n_heads = 2;
  std::size_t embed_dim = 64;
  std::size_t vocab = 1024;
  std::size_t tokens_per_frame = 16;
  std::size_t max_frames = 9;
  std::size_t mlp_ratio = 4;
  Mode mode = Mode::kFrameLevel;
  std::uint64_t seed = 0;

  std::size_t block_size() const { return max_frames * tokens_per_frame; }
  void validate() const;

  /// 8 layers, 8 heads, width 1024, vocabulary 1024, 64 tokens per frame and
  /// a 576-token block (9 frames).
  static DynamicsConfig full_scale();
};

/// Token embedding, factorized spatial + temporal learned position
/// embeddings, pre-norm transformer blocks, and a linear output head.
class DynamicsModel {
 public:
  static DynamicsModel initialize(const DynamicsConfig& config);
  static DynamicsModel from_checkpoint(const tensorgrad::Checkpoint& checkpoint);
  tensorgrad::Checkpoint to_checkpoint() const;

  const DynamicsConfig& config() const { return config_; }
  tensorgrad::ParameterSet& params() { return params_; }
  const tensorgrad::ParameterSet& params() const { return params_; }

  /// Logits for `n_seqs` stacked sequences of flat tokens (positions run
  /// frame-major from 0). Rows follow the input order.
  Var forward_graph(const std::vector<Var>& bound, std::span<const std::uint16_t> tokens,
                    std::size_t n_seqs, const AttentionMask& mask) const;

  /// Reference forward at float64: logits of shape (T*N) x K. Frame mode row
  /// (t, i) scores token i of frame t+1; token mode row p scores token p+1.
  Tensor forward(std::span<const TokenFrame> frames, Mode mode) const;

 private:
  DynamicsConfig config_;
  tensorgrad::ParameterSet params_;
};

/// Tape-free forward pass for decoding, in float (benchmarks) or double.
template <typename Scalar>
class InferenceModel {
 public:
  explicit InferenceModel(const DynamicsModel& model);
  ~InferenceModel();
  InferenceModel(InferenceModel&&) noexcept;
  InferenceModel& operator=(InferenceModel&&) noexcept;

  const DynamicsConfig& config() const;

  /// Logits (row-major, rows x vocab) for the last `rows` positions of `tokens`.
  std::vector<Scalar> forward(std::span<const std::uint16_t> tokens, Mode mode,
                              std::size_t rows) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

extern template class InferenceModel<float>;
extern template class InferenceModel<double>;

// ---- Decoding --------------------------------------------------------------

struct DecodeOptions {
  bool greedy = true;
  double temperature = 1.0;
  std::uint64_t seed = 0;
};

/// Counts transformer forward passes made during decoding.
struct PassCounter {
  std::size_t forward_passes = 0;
};

/// One forward pass over the context; per-position argmax (or sample) of the
/// last frame's logits gives all N tokens of the next frame.
template <typename Scalar>
TokenFrame decode_next_frame(const InferenceModel<Scalar>& model,
                             std::span<const TokenFrame> context, PassCounter& counter,
                             const DecodeOptions& options = {}, std::mt19937_64* rng = nullptr);

/// N forward passes, appending one token at a time in raster order.
template <typename Scalar>
TokenFrame decode_next_frame_tokenwise(const InferenceModel<Scalar>& model,
                                       std::span<const TokenFrame> context, PassCounter& counter,
                                       const DecodeOptions& options = {},
                                       std::mt19937_64* rng = nullptr);

/// Autoregressive forecast of `horizon` frames after `context`.
template <typename Scalar>
std::vector<TokenFrame> rollout(const InferenceModel<Scalar>& model,
                                std::span<const TokenFrame> context, std::size_t horizon,
                                Mode mode, PassCounter& counter,
                                const DecodeOptions& options = {});

// ---- Training --------------------------------------------------------------

/// One tokenized event: T frames of N indices.
using TokenSequence = std::vector<TokenFrame>;

/// Teacher-forced mean cross-entropy over frames 2..T of every sequence.
Var sequence_loss(const DynamicsModel& model, const std::vector<Var>& bound,
                  std::span<const TokenSequence> batch, Mode mode);

/// Loss of the current parameters without recording gradients.
double evaluate_loss(const DynamicsModel& model, std::span<const TokenSequence> batch, Mode mode);

struct DynamicsTrainConfig {
  std::size_t steps = 1000;
  tensorgrad::AdamConfig optimizer;
  std::uint64_t seed = 0;
};

struct DynamicsStepLog {
  std::uint64_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
};

/// Adam on sequence_loss with batches drawn by (seed, step).
class DynamicsTrainer {
 public:
  DynamicsTrainer(DynamicsModel model, DynamicsTrainConfig config);
  DynamicsTrainer(DynamicsModel model, tensorgrad::OptimizerState state,
                  DynamicsTrainConfig config);

  DynamicsStepLog step(std::span<const TokenSequence> dataset);
  void train(std::span<const TokenSequence> dataset, std::size_t steps,
             const std::function<void(const DynamicsStepLog&)>& on_step = {});

  const DynamicsModel& model() const { return model_; }
  const tensorgrad::OptimizerState& optimizer() const { return state_; }
  tensorgrad::Checkpoint checkpoint() const;

 private:
  DynamicsModel model_;
  tensorgrad::OptimizerState state_;
  DynamicsTrainConfig config_;
};

/// Checks frame counts, widths and vocabulary against the model.
void validate_sequences(const DynamicsConfig& config, std::span<const TokenSequence> data);

// ---- Benchmark -------------------------------------------------------------

struct TimingStats {
  double mean_seconds = 0.0;
  std::optional<double> stddev_seconds;  // undefined for a single repetition
  std::size_t repetitions = 0;
};

struct BenchmarkReport {
  std::size_t horizon = 0;
  std::size_t tokens_per_frame = 0;
  std::size_t frame_passes = 0;
  std::size_t token_passes = 0;
  double pass_ratio = 0.0;
  TimingStats frame_timing;
  TimingStats token_timing;
  double wallclock_ratio = 0.0;
};

TimingStats summarize_timings(std::span<const double> seconds);

/// Times greedy rollouts in both modes after `warmup` untimed runs.
template <typename Scalar>
BenchmarkReport benchmark_decode(const InferenceModel<Scalar>& frame_model,
                                 const InferenceModel<Scalar>& token_model,
                                 std::span<const TokenFrame> context, std::size_t horizon,
                                 std::size_t repetitions, std::size_t warmup = 1);

}  // namespace blockcast::dynamics
