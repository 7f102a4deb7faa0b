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
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "blockcast/fieldio.hpp"
#include "blockcast/parameters.hpp"
#include "blockcast/tensor.hpp"

namespace blockcast::vq {

using tensorgrad::Tensor;
using tensorgrad::Var;

struct TokenizerConfig {
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t patch_size = 8;
  // Width of the patch projection and hidden MLP layers; plays the role of
  // the latent channel count, decoupled from the codebook width.
  std::size_t latent_channels = 64;
  std::size_t codebook_size = 1024;
  std::size_t codebook_dim = 32;
  double beta = 0.25;
  std::uint64_t seed = 0;

  std::size_t latent_height() const { return height / patch_size; }
  std::size_t latent_width() const { return width / patch_size; }
  std::size_t tokens_per_frame() const { return latent_height() * latent_width(); }
  std::size_t patch_pixels() const { return patch_size * patch_size; }

  /// Throws ShapeError / ConfigError on inconsistent settings.
  void validate() const;
};

/// H' x W' grid of codebook indices, row-major.
struct TokenGrid {
  std::size_t h_lat = 0;
  std::size_t w_lat = 0;
  std::vector<std::uint16_t> indices;

  std::size_t size() const { return indices.size(); }
  bool operator==(const TokenGrid&) const = default;
};

/// Latent vectors of one or more frames, one row per latent position.
struct LatentGrid {
  std::size_t h_lat = 0;
  std::size_t w_lat = 0;
  Tensor vectors;  // (h_lat * w_lat) x dim
};

struct Quantized {
  std::vector<std::size_t> indices;
  Tensor vectors;  // exact copies of codebook rows
};

/// Nearest codebook row (Euclidean) for every row of `latents`; ties resolve
/// to the lowest index.
Quantized quantize(const Tensor& latents, const Tensor& codebook);

struct VqLoss {
  Var total;
  Var recon;
  Var codebook_term;
  Var commit_term;
};

/// total = ||x - x_hat||^2 + beta ||sg[z_hat] - z_q||^2 + ||sg[z_q] - z_hat||^2.
/// The reconstruction term is a mean over pixels; the latent terms are means
/// over latent positions of squared vector norms.
VqLoss vqvae_loss(Var x, Var x_hat, Var z_hat, Var z_q, double beta);

/// Non-overlapping patches of each grid flattened into rows; grids are stacked
/// in order, patches in row-major latent order.
Tensor extract_patches(std::span<const Grid> grids, std::size_t patch_size);
std::vector<Grid> assemble_patches(const Tensor& patches, std::size_t height, std::size_t width,
                                   std::size_t patch_size);

class Tokenizer {
 public:
  static Tokenizer initialize(const TokenizerConfig& config);
  static Tokenizer from_checkpoint(const tensorgrad::Checkpoint& checkpoint);
  /// Model parameters plus config in the metadata.
  tensorgrad::Checkpoint to_checkpoint() const;

  const TokenizerConfig& config() const { return config_; }
  tensorgrad::ParameterSet& params() { return params_; }
  const tensorgrad::ParameterSet& params() const { return params_; }
  const Tensor& codebook() const { return params_.at("codebook"); }

  LatentGrid encode(const Grid& field) const;
  std::pair<TokenGrid, LatentGrid> quantize(const LatentGrid& z_hat) const;
  Grid decode(const LatentGrid& z_q) const;

  TokenGrid tokenize(const Grid& field) const;
  Grid detokenize(const TokenGrid& tokens) const;
  LatentGrid lookup(const TokenGrid& tokens) const;

  // Graph builders over bound parameter leaves (order of params()).
  Var encode_graph(const std::vector<Var>& bound, Var patches) const;
  Var decode_graph(const std::vector<Var>& bound, Var latents) const;

 private:
  TokenizerConfig config_;
  tensorgrad::ParameterSet params_;
};

std::vector<TokenGrid> tokenize_event(const EventSequence& event, const Tokenizer& tokenizer);
EventSequence detokenize_event(std::span<const TokenGrid> tokens, const Tokenizer& tokenizer,
                               std::size_t context_len, int step_minutes, double data_max);

/// Mean absolute per-pixel error of decode(quantize(encode(x))) over grids.
double reconstruction_error(const Tokenizer& tokenizer, std::span<const Grid> grids);

struct TokenizerStepLog {
  std::uint64_t step = 0;
  double lr = 0.0;
  double total = 0.0;
  double recon = 0.0;
  double codebook = 0.0;
  double commit = 0.0;
  std::size_t reseeded = 0;
};

struct TokenizerTrainConfig {
  std::size_t steps = 1000;
  tensorgrad::AdamConfig optimizer;
  std::uint64_t seed = 0;
};

/// Adam over vqvae_loss. Batches and dead-code re-seeding draw from RNGs keyed
/// by (seed, step), so a run resumed from a checkpoint continues the same
/// trajectory.
class TokenizerTrainer {
 public:
  TokenizerTrainer(Tokenizer tokenizer, TokenizerTrainConfig config);
  TokenizerTrainer(Tokenizer tokenizer, tensorgrad::OptimizerState state,
                   TokenizerTrainConfig config);

  /// Runs `steps` more updates; calls `on_step` after each.
  void train(std::span<const Grid> dataset, std::size_t steps,
             const std::function<void(const TokenizerStepLog&)>& on_step = {});
  TokenizerStepLog step(std::span<const Grid> dataset);

  const Tokenizer& tokenizer() const { return tokenizer_; }
  const tensorgrad::OptimizerState& optimizer() const { return state_; }
  tensorgrad::Checkpoint checkpoint() const;

 private:
  Tokenizer tokenizer_;
  tensorgrad::OptimizerState state_;
  TokenizerTrainConfig config_;
  std::vector<std::size_t> usage_;
  std::size_t usage_steps_ = 0;
};

// `.tok` container: magic, header (h_lat, w_lat, T, K), then uint16
// little-endian indices in time-major order.
void write_tokens(const std::filesystem::path& path, std::span<const TokenGrid> frames,
                  std::size_t codebook_size);
std::vector<TokenGrid> read_tokens(const std::filesystem::path& path,
                                   std::size_t* codebook_size = nullptr);

}  // namespace blockcast::vq
