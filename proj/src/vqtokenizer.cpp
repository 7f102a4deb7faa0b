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

#include "blockcast/vqtokenizer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <set>

#include "blockcast/error.hpp"
#include "detail/binio.hpp"
#include "detail/rng.hpp"

namespace blockcast::vq {

namespace tg = blockcast::tensorgrad;

namespace {

constexpr const char* kTokenMagic = "BLKCTOK1";
constexpr std::size_t kMaxCodebook = 65536;

enum Param : std::size_t {
  kEncProjW,
  kEncProjB,
  kEncHiddenW,
  kEncHiddenB,
  kEncOutW,
  kEncOutB,
  kCodebook,
  kDecInW,
  kDecInB,
  kDecHiddenW,
  kDecHiddenB,
  kDecOutW,
  kDecOutB,
  kParamCount,
};

const char* const kParamNames[kParamCount] = {
    "enc.proj.w", "enc.proj.b", "enc.hidden.w", "enc.hidden.b", "enc.out.w",
    "enc.out.b",  "codebook",   "dec.in.w",     "dec.in.b",     "dec.hidden.w",
    "dec.hidden.b", "dec.out.w", "dec.out.b"};

double squared_distance(const double* a, const double* b, std::size_t n) {
  double d = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double diff = a[k] - b[k];
    d += diff * diff;
  }
  return d;
}

// Re-jitters rows until no two are bit-identical.
void ensure_distinct_rows(Tensor& codebook, std::mt19937_64& rng) {
  const std::size_t dim = codebook.cols();
  std::normal_distribution<double> jitter(0.0, 1e-6);
  while (true) {
    std::set<std::vector<double>> seen;
    bool collided = false;
    for (std::size_t r = 0; r < codebook.rows(); ++r) {
      std::vector<double> row(codebook.data().begin() + static_cast<std::ptrdiff_t>(r * dim),
                              codebook.data().begin() + static_cast<std::ptrdiff_t>((r + 1) * dim));
      if (!seen.insert(row).second) {
        collided = true;
        for (std::size_t c = 0; c < dim; ++c) codebook.at(r, c) += jitter(rng);
      }
    }
    if (!collided) return;
  }
}

}  // namespace

void TokenizerConfig::validate() const {
  if (patch_size == 0) throw ConfigError("patch_size must be positive");
  if (height == 0 || width == 0) throw ShapeError("grid must be at least 1x1");
  if (height % patch_size != 0 || width % patch_size != 0) {
    throw ShapeError("grid " + std::to_string(height) + "x" + std::to_string(width) +
                     " is not divisible by patch_size " + std::to_string(patch_size));
  }
  if (codebook_size < 1 || codebook_size > kMaxCodebook) {
    throw ConfigError("codebook size must lie in [1, 65536]");
  }
  if (codebook_dim == 0 || latent_channels == 0) throw ConfigError("widths must be positive");
  if (!(beta > 0.0)) throw ConfigError("beta must be positive");
}

Quantized quantize(const Tensor& latents, const Tensor& codebook) {
  if (latents.cols() != codebook.cols()) {
    throw ShapeError("quantize: latent width " + std::to_string(latents.cols()) +
                     " does not match codebook width " + std::to_string(codebook.cols()));
  }
  const std::size_t dim = codebook.cols();
  Quantized out;
  out.indices.resize(latents.rows());
  out.vectors = Tensor(latents.shape());
  for (std::size_t r = 0; r < latents.rows(); ++r) {
    const double* z = latents.data().data() + r * dim;
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < codebook.rows(); ++k) {
      const double d = squared_distance(z, codebook.data().data() + k * dim, dim);
      if (d < best_d) {  // strict: lowest index wins ties
        best_d = d;
        best = k;
      }
    }
    out.indices[r] = best;
    std::copy_n(codebook.data().begin() + static_cast<std::ptrdiff_t>(best * dim), dim,
                out.vectors.data().begin() + static_cast<std::ptrdiff_t>(r * dim));
  }
  return out;
}

VqLoss vqvae_loss(Var x, Var x_hat, Var z_hat, Var z_q, double beta) {
  if (!(beta > 0.0)) throw ConfigError("beta must be positive");
  VqLoss loss;
  loss.recon = tg::mean(tg::mul(tg::sub(x, x_hat), tg::sub(x, x_hat)));
  loss.codebook_term = tg::scale(tg::mean_row_sq_norm(tg::sub(tg::stop_gradient(z_hat), z_q)), beta);
  loss.commit_term = tg::mean_row_sq_norm(tg::sub(tg::stop_gradient(z_q), z_hat));
  loss.total = tg::add(tg::add(loss.recon, loss.codebook_term), loss.commit_term);
  return loss;
}

Tensor extract_patches(std::span<const Grid> grids, std::size_t patch_size) {
  if (grids.empty()) throw InputError("no grids to patch");
  const std::size_t h = grids.front().height;
  const std::size_t w = grids.front().width;
  if (patch_size == 0 || h % patch_size != 0 || w % patch_size != 0) {
    throw ShapeError("grid is not divisible into patches of " + std::to_string(patch_size));
  }
  const std::size_t ph = h / patch_size, pw = w / patch_size;
  const std::size_t pixels = patch_size * patch_size;
  Tensor out({grids.size() * ph * pw, pixels});
  std::size_t row = 0;
  for (const Grid& g : grids) {
    if (g.height != h || g.width != w) throw ShapeError("grids differ in shape");
    for (std::size_t pi = 0; pi < ph; ++pi) {
      for (std::size_t pj = 0; pj < pw; ++pj, ++row) {
        for (std::size_t a = 0; a < patch_size; ++a) {
          for (std::size_t b = 0; b < patch_size; ++b) {
            out.at(row, a * patch_size + b) = g.at(pi * patch_size + a, pj * patch_size + b);
          }
        }
      }
    }
  }
  return out;
}

std::vector<Grid> assemble_patches(const Tensor& patches, std::size_t height, std::size_t width,
                                   std::size_t patch_size) {
  const std::size_t ph = height / patch_size, pw = width / patch_size;
  if (patches.cols() != patch_size * patch_size || patches.rows() % (ph * pw) != 0) {
    throw ShapeError("patch matrix " + patches.shape_string() + " does not tile " +
                     std::to_string(height) + "x" + std::to_string(width));
  }
  std::vector<Grid> grids(patches.rows() / (ph * pw), Grid{height, width, std::vector<double>(height * width)});
  std::size_t row = 0;
  for (Grid& g : grids) {
    for (std::size_t pi = 0; pi < ph; ++pi) {
      for (std::size_t pj = 0; pj < pw; ++pj, ++row) {
        for (std::size_t a = 0; a < patch_size; ++a) {
          for (std::size_t b = 0; b < patch_size; ++b) {
            g.values[(pi * patch_size + a) * width + pj * patch_size + b] =
                patches.at(row, a * patch_size + b);
          }
        }
      }
    }
  }
  return grids;
}

Tokenizer Tokenizer::initialize(const TokenizerConfig& config) {
  config.validate();
  Tokenizer t;
  t.config_ = config;
  std::mt19937_64 rng(detail::derive_seed(config.seed, 0x746f6b));
  const std::size_t p = config.patch_pixels();
  const std::size_t c = config.latent_channels;
  const std::size_t d = config.codebook_dim;
  auto& ps = t.params_;
  ps.add(kParamNames[kEncProjW], detail::fan_in_init(rng, p, c));
  ps.add(kParamNames[kEncProjB], Tensor({1, c}, 0.0));
  ps.add(kParamNames[kEncHiddenW], detail::fan_in_init(rng, c, c));
  ps.add(kParamNames[kEncHiddenB], Tensor({1, c}, 0.0));
  ps.add(kParamNames[kEncOutW], detail::fan_in_init(rng, c, d));
  ps.add(kParamNames[kEncOutB], Tensor({1, d}, 0.0));
  Tensor codebook = detail::normal_tensor(rng, config.codebook_size, d, 1.0 / std::sqrt(static_cast<double>(d)));
  ensure_distinct_rows(codebook, rng);
  ps.add(kParamNames[kCodebook], std::move(codebook));
  ps.add(kParamNames[kDecInW], detail::fan_in_init(rng, d, c));
  ps.add(kParamNames[kDecInB], Tensor({1, c}, 0.0));
  ps.add(kParamNames[kDecHiddenW], detail::fan_in_init(rng, c, c));
  ps.add(kParamNames[kDecHiddenB], Tensor({1, c}, 0.0));
  ps.add(kParamNames[kDecOutW], detail::fan_in_init(rng, c, p));
  ps.add(kParamNames[kDecOutB], Tensor({1, p}, 0.0));
  return t;
}

tg::Checkpoint Tokenizer::to_checkpoint() const {
  tg::Checkpoint ckpt;
  ckpt.params = params_;
  ckpt.meta["kind"] = "tokenizer";
  ckpt.meta["height"] = std::to_string(config_.height);
  ckpt.meta["width"] = std::to_string(config_.width);
  ckpt.meta["patch_size"] = std::to_string(config_.patch_size);
  ckpt.meta["latent_channels"] = std::to_string(config_.latent_channels);
  ckpt.meta["codebook_size"] = std::to_string(config_.codebook_size);
  ckpt.meta["codebook_dim"] = std::to_string(config_.codebook_dim);
  ckpt.meta["beta"] = detail::format_double(config_.beta);
  ckpt.meta["seed"] = std::to_string(config_.seed);
  return ckpt;
}

Tokenizer Tokenizer::from_checkpoint(const tg::Checkpoint& checkpoint) {
  const auto get = [&](const char* key) -> const std::string& {
    return detail::require_field(checkpoint.meta, key, "tokenizer checkpoint");
  };
  if (get("kind") != "tokenizer") throw ConfigError("checkpoint is not a tokenizer");
  TokenizerConfig cfg;
  cfg.height = detail::parse_number<std::size_t>(get("height"), "height");
  cfg.width = detail::parse_number<std::size_t>(get("width"), "width");
  cfg.patch_size = detail::parse_number<std::size_t>(get("patch_size"), "patch_size");
  cfg.latent_channels = detail::parse_number<std::size_t>(get("latent_channels"), "latent_channels");
  cfg.codebook_size = detail::parse_number<std::size_t>(get("codebook_size"), "codebook_size");
  cfg.codebook_dim = detail::parse_number<std::size_t>(get("codebook_dim"), "codebook_dim");
  cfg.beta = detail::parse_number<double>(get("beta"), "beta");
  cfg.seed = detail::parse_number<std::uint64_t>(get("seed"), "seed");
  Tokenizer t = initialize(cfg);
  const tg::ParameterSet loaded = tg::model_parameters(checkpoint);
  for (std::size_t k = 0; k < t.params_.size(); ++k) {
    const Tensor& src = loaded.at(t.params_.name(k));
    if (!src.same_shape(t.params_.tensor(k))) {
      throw ShapeError("tokenizer checkpoint: shape mismatch for " + t.params_.name(k));
    }
    t.params_.tensor(k) = src;
  }
  return t;
}

Var Tokenizer::encode_graph(const std::vector<Var>& p, Var patches) const {
  Var h = tg::add_row(tg::matmul(patches, p[kEncProjW]), p[kEncProjB]);
  h = tg::tanh(tg::add_row(tg::matmul(h, p[kEncHiddenW]), p[kEncHiddenB]));
  return tg::add_row(tg::matmul(h, p[kEncOutW]), p[kEncOutB]);
}

Var Tokenizer::decode_graph(const std::vector<Var>& p, Var latents) const {
  Var h = tg::tanh(tg::add_row(tg::matmul(latents, p[kDecInW]), p[kDecInB]));
  h = tg::tanh(tg::add_row(tg::matmul(h, p[kDecHiddenW]), p[kDecHiddenB]));
  return tg::clamp(tg::add_row(tg::matmul(h, p[kDecOutW]), p[kDecOutB]), 0.0, 1.0);
}

namespace {

std::vector<Var> constants(tg::Tape& tape, const tg::ParameterSet& params) {
  std::vector<Var> vars;
  for (std::size_t k = 0; k < params.size(); ++k) vars.push_back(tape.constant(params.tensor(k)));
  return vars;
}

}  // namespace

LatentGrid Tokenizer::encode(const Grid& field) const {
  if (field.height != config_.height || field.width != config_.width) {
    throw ShapeError("encode: field " + std::to_string(field.height) + "x" +
                     std::to_string(field.width) + " does not match tokenizer grid " +
                     std::to_string(config_.height) + "x" + std::to_string(config_.width));
  }
  tg::Tape tape;
  const auto p = constants(tape, params_);
  Var z = encode_graph(p, tape.constant(extract_patches(std::span(&field, 1), config_.patch_size)));
  return LatentGrid{config_.latent_height(), config_.latent_width(), z.value()};
}

std::pair<TokenGrid, LatentGrid> Tokenizer::quantize(const LatentGrid& z_hat) const {
  Quantized q = vq::quantize(z_hat.vectors, codebook());
  TokenGrid tokens{z_hat.h_lat, z_hat.w_lat, {}};
  tokens.indices.assign(q.indices.begin(), q.indices.end());
  return {std::move(tokens), LatentGrid{z_hat.h_lat, z_hat.w_lat, std::move(q.vectors)}};
}

Grid Tokenizer::decode(const LatentGrid& z_q) const {
  if (z_q.h_lat != config_.latent_height() || z_q.w_lat != config_.latent_width() ||
      z_q.vectors.rows() != config_.tokens_per_frame() ||
      z_q.vectors.cols() != config_.codebook_dim) {
    throw ShapeError("decode: latent grid does not match tokenizer configuration");
  }
  tg::Tape tape;
  const auto p = constants(tape, params_);
  Var x = decode_graph(p, tape.constant(z_q.vectors));
  return assemble_patches(x.value(), config_.height, config_.width, config_.patch_size).front();
}

LatentGrid Tokenizer::lookup(const TokenGrid& tokens) const {
  if (tokens.h_lat != config_.latent_height() || tokens.w_lat != config_.latent_width() ||
      tokens.indices.size() != config_.tokens_per_frame()) {
    throw ShapeError("token grid does not match tokenizer configuration");
  }
  const Tensor& cb = codebook();
  const std::size_t dim = cb.cols();
  Tensor vectors({tokens.size(), dim});
  for (std::size_t r = 0; r < tokens.size(); ++r) {
    const std::size_t k = tokens.indices[r];
    if (k >= cb.rows()) throw IndexError("token index " + std::to_string(k) + " >= codebook size");
    std::copy_n(cb.data().begin() + static_cast<std::ptrdiff_t>(k * dim), dim,
                vectors.data().begin() + static_cast<std::ptrdiff_t>(r * dim));
  }
  return LatentGrid{tokens.h_lat, tokens.w_lat, std::move(vectors)};
}

TokenGrid Tokenizer::tokenize(const Grid& field) const { return quantize(encode(field)).first; }

Grid Tokenizer::detokenize(const TokenGrid& tokens) const { return decode(lookup(tokens)); }

std::vector<TokenGrid> tokenize_event(const EventSequence& event, const Tokenizer& tokenizer) {
  std::vector<TokenGrid> out;
  out.reserve(event.length());
  for (const auto& frame : event.frames) {
    out.push_back(tokenizer.tokenize(normalize(frame, event.data_max)));
  }
  return out;
}

EventSequence detokenize_event(std::span<const TokenGrid> tokens, const Tokenizer& tokenizer,
                               std::size_t context_len, int step_minutes, double data_max) {
  EventSequence event;
  event.context_len = context_len;
  event.step_minutes = step_minutes;
  event.data_max = data_max;
  for (const auto& t : tokens) event.frames.push_back(denormalize(tokenizer.detokenize(t), data_max));
  return event;
}

double reconstruction_error(const Tokenizer& tokenizer, std::span<const Grid> grids) {
  if (grids.empty()) throw InputError("no grids to reconstruct");
  double err = 0.0;
  std::size_t count = 0;
  for (const Grid& g : grids) {
    const Grid r = tokenizer.detokenize(tokenizer.tokenize(g));
    for (std::size_t k = 0; k < g.values.size(); ++k) err += std::abs(r.values[k] - g.values[k]);
    count += g.values.size();
  }
  return err / static_cast<double>(count);
}

// ---- Training --------------------------------------------------------------

TokenizerTrainer::TokenizerTrainer(Tokenizer tokenizer, TokenizerTrainConfig config)
    : TokenizerTrainer(tokenizer, tg::OptimizerState::for_params(tokenizer.params(), config.optimizer),
                       config) {}

TokenizerTrainer::TokenizerTrainer(Tokenizer tokenizer, tg::OptimizerState state,
                                   TokenizerTrainConfig config)
    : tokenizer_(std::move(tokenizer)), state_(std::move(state)), config_(config) {
  if (config_.optimizer.batch_size == 0) throw ConfigError("batch_size must be positive");
  state_.config = config_.optimizer;
  usage_.assign(tokenizer_.config().codebook_size, 0);
}

tg::Checkpoint TokenizerTrainer::checkpoint() const {
  tg::Checkpoint ckpt = tokenizer_.to_checkpoint();
  tg::store_optimizer(ckpt, state_, tokenizer_.params());
  return ckpt;
}

void TokenizerTrainer::train(std::span<const Grid> dataset, std::size_t steps,
                             const std::function<void(const TokenizerStepLog&)>& on_step) {
  for (std::size_t s = 0; s < steps; ++s) {
    const TokenizerStepLog log = step(dataset);
    if (on_step) on_step(log);
  }
}

TokenizerStepLog TokenizerTrainer::step(std::span<const Grid> dataset) {
  if (dataset.empty()) throw InputError("tokenizer training needs a non-empty dataset");
  const TokenizerConfig& cfg = tokenizer_.config();
  const std::size_t batch = std::min(config_.optimizer.batch_size, dataset.size());
  const std::size_t steps_per_epoch = (dataset.size() + batch - 1) / batch;
  const std::uint64_t step_index = state_.step;
  const std::uint64_t epoch = step_index / steps_per_epoch;
  const std::size_t slot = static_cast<std::size_t>(step_index % steps_per_epoch);

  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 perm_rng(detail::derive_seed(config_.seed, 2 * epoch));
  std::shuffle(order.begin(), order.end(), perm_rng);
  std::vector<Grid> batch_grids;
  for (std::size_t k = slot * batch; k < std::min(dataset.size(), (slot + 1) * batch); ++k) {
    batch_grids.push_back(dataset[order[k]]);
  }

  tg::Tape tape;
  const auto bound = tokenizer_.params().bind(tape);
  Var patches = tape.constant(extract_patches(batch_grids, cfg.patch_size));
  Var z_hat = tokenizer_.encode_graph(bound, patches);
  const Quantized q = vq::quantize(z_hat.value(), tokenizer_.codebook());
  Var z_q = tg::gather_rows(bound[kCodebook], q.indices);
  Var x_hat = tokenizer_.decode_graph(bound, tg::straight_through(z_hat, z_q));
  const VqLoss loss = vqvae_loss(patches, x_hat, z_hat, z_q, cfg.beta);
  tape.backward(loss.total);

  std::vector<Tensor> grads;
  grads.reserve(bound.size());
  for (const Var& v : bound) grads.push_back(v.grad());

  TokenizerStepLog log;
  log.step = step_index + 1;
  log.total = loss.total.value().item();
  log.recon = loss.recon.value().item();
  log.codebook = loss.codebook_term.value().item();
  log.commit = loss.commit_term.value().item();
  log.lr = tg::adam_step(tokenizer_.params(), grads, state_);

  for (std::size_t idx : q.indices) ++usage_[idx];
  ++usage_steps_;
  if (slot + 1 == steps_per_epoch) {
    if (usage_steps_ >= steps_per_epoch) {
      // Dead codes restart at encoder outputs from this batch.
      std::mt19937_64 rng(detail::derive_seed(config_.seed, 2 * epoch + 1));
      std::uniform_int_distribution<std::size_t> pick(0, z_hat.value().rows() - 1);
      std::normal_distribution<double> jitter(0.0, 1e-3);
      Tensor& cb = tokenizer_.params().at("codebook");
      const std::size_t dim = cb.cols();
      for (std::size_t k = 0; k < usage_.size(); ++k) {
        if (usage_[k] != 0) continue;
        const std::size_t src = pick(rng);
        for (std::size_t c = 0; c < dim; ++c) {
          cb.at(k, c) = z_hat.value().at(src, c) + jitter(rng);
          state_.first_moment[kCodebook].at(k, c) = 0.0;
          state_.second_moment[kCodebook].at(k, c) = 0.0;
        }
        ++log.reseeded;
      }
    }
    std::fill(usage_.begin(), usage_.end(), 0);
    usage_steps_ = 0;
  }
  return log;
}

// ---- .tok container ----------------------------------------------------------

void write_tokens(const std::filesystem::path& path, std::span<const TokenGrid> frames,
                  std::size_t codebook_size) {
  if (frames.empty()) throw InputError("no token frames to write");
  if (codebook_size == 0 || codebook_size > kMaxCodebook) {
    throw ConfigError("codebook size must fit in uint16 indices");
  }
  const std::size_t h = frames.front().h_lat, w = frames.front().w_lat;
  for (const auto& f : frames) {
    if (f.h_lat != h || f.w_lat != w || f.indices.size() != h * w) {
      throw ShapeError("token frames differ in shape");
    }
    for (auto idx : f.indices) {
      if (idx >= codebook_size) throw IndexError("token index exceeds codebook size");
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << kTokenMagic << '\n'
      << "h_lat " << h << '\n'
      << "w_lat " << w << '\n'
      << "T " << frames.size() << '\n'
      << "K " << codebook_size << '\n'
      << "end\n";
  for (const auto& f : frames) detail::write_le<std::uint16_t>(out, f.indices);
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<TokenGrid> read_tokens(const std::filesystem::path& path, std::size_t* codebook_size) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::string ctx = path.string();
  std::string magic;
  if (!std::getline(in, magic) || magic != kTokenMagic) throw HeaderError(ctx + ": bad magic");
  const auto fields = detail::read_header_block(in, ctx);
  const auto get = [&](const char* key) {
    return detail::parse_number<std::size_t>(detail::require_field(fields, key, ctx), key);
  };
  const std::size_t h = get("h_lat"), w = get("w_lat"), t = get("T"), k = get("K");
  if (h == 0 || w == 0 || t == 0 || k == 0 || k > kMaxCodebook) {
    throw InvariantError(ctx + ": invalid token header");
  }
  std::vector<TokenGrid> frames(t, TokenGrid{h, w, std::vector<std::uint16_t>(h * w)});
  for (auto& f : frames) {
    if (!detail::read_le<std::uint16_t>(in, f.indices)) throw TruncationError(ctx + ": payload truncated");
    for (auto idx : f.indices) {
      if (idx >= k) throw InvariantError(ctx + ": token index exceeds K");
    }
  }
  if (!detail::at_eof(in)) throw DimensionError(ctx + ": trailing bytes after payload");
  if (codebook_size != nullptr) *codebook_size = k;
  return frames;
}

}  // namespace blockcast::vq
