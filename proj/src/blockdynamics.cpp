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

#include "blockcast/blockdynamics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "blockcast/error.hpp"
#include "detail/binio.hpp"
#include "detail/rng.hpp"

namespace blockcast::dynamics {

namespace tg = blockcast::tensorgrad;

std::string to_string(Mode mode) {
  return mode == Mode::kFrameLevel ? "frame_level" : "token_level";
}

Mode parse_mode(const std::string& text) {
  if (text == "frame_level" || text == "frame") return Mode::kFrameLevel;
  if (text == "token_level" || text == "token") return Mode::kTokenLevel;
  throw ConfigError("unknown decode mode '" + text + "' (expected frame_level or token_level)");
}

BlockMask build_block_causal_mask(std::size_t n_frames, std::size_t tokens_per_frame) {
  if (n_frames < 1 || tokens_per_frame < 1) {
    throw ConfigError("block mask needs at least one frame and one token per frame");
  }
  BlockMask mask{n_frames, tokens_per_frame, AttentionMask(n_frames * tokens_per_frame, false)};
  for (std::size_t i = 0; i < mask.size(); ++i) {
    // Row i may see every position up to the end of its own frame.
    const std::size_t frame_end = (mask.frame_of(i) + 1) * tokens_per_frame;
    for (std::size_t j = 0; j < frame_end; ++j) mask.allow.set(i, j, true);
  }
  return mask;
}

BlockMask build_token_causal_mask(std::size_t seq_len) {
  if (seq_len < 1) throw ConfigError("token mask needs a positive length");
  return build_block_causal_mask(seq_len, 1);
}

// ---- Config ------------------------------------------------------------------

void DynamicsConfig::validate() const {
  if (n_layers < 1 || n_heads < 1 || embed_dim < 1 || vocab < 1 || tokens_per_frame < 1 ||
      max_frames < 2 || mlp_ratio < 1) {
    throw ConfigError("dynamics config has a zero extent (max_frames must be >= 2)");
  }
  if (embed_dim % n_heads != 0) {
    throw ConfigError("embed_dim " + std::to_string(embed_dim) + " is not divisible by n_heads " +
                      std::to_string(n_heads));
  }
  if (vocab > 65536) throw ConfigError("vocabulary must fit uint16 token indices");
}

DynamicsConfig DynamicsConfig::full_scale() {
  DynamicsConfig c;
  c.n_layers = 8;
  c.n_heads = 8;
  c.embed_dim = 1024;
  c.vocab = 1024;
  c.tokens_per_frame = 64;
  c.max_frames = 576 / 64;
  return c;
}

// ---- Parameter layout --------------------------------------------------------

namespace {

constexpr std::size_t kTokEmb = 0;
constexpr std::size_t kPosSpatial = 1;
constexpr std::size_t kPosTemporal = 2;
constexpr std::size_t kLayerBase = 3;
constexpr std::size_t kPerLayer = 16;

enum LayerParam : std::size_t {
  kLn1G, kLn1B, kWq, kBq, kWk, kBk, kWv, kBv, kWo, kBo, kLn2G, kLn2B, kW1, kB1, kW2, kB2,
};

const char* const kLayerNames[kPerLayer] = {"ln1.g", "ln1.b", "attn.wq", "attn.bq",
                                            "attn.wk", "attn.bk", "attn.wv", "attn.bv",
                                            "attn.wo", "attn.bo", "ln2.g", "ln2.b",
                                            "mlp.w1", "mlp.b1", "mlp.w2", "mlp.b2"};

std::size_t layer_index(std::size_t layer, LayerParam p) { return kLayerBase + layer * kPerLayer + p; }
std::size_t final_index(const DynamicsConfig& c, std::size_t k) { return kLayerBase + c.n_layers * kPerLayer + k; }

constexpr std::size_t kLnFG = 0, kLnFB = 1, kHeadW = 2, kHeadB = 3;
constexpr double kInitStd = 0.02;
constexpr double kLnEps = 1e-5;

void check_tokens(const DynamicsConfig& c, std::span<const std::uint16_t> tokens) {
  for (auto t : tokens) {
    if (t >= c.vocab) {
      throw ConfigError("token " + std::to_string(t) + " outside vocabulary of " +
                        std::to_string(c.vocab));
    }
  }
}

}  // namespace

DynamicsModel DynamicsModel::initialize(const DynamicsConfig& config) {
  config.validate();
  DynamicsModel m;
  m.config_ = config;
  std::mt19937_64 rng(detail::derive_seed(config.seed, 0x64796e));
  const std::size_t e = config.embed_dim;
  const std::size_t hidden = e * config.mlp_ratio;
  const double resid_std = kInitStd / std::sqrt(2.0 * static_cast<double>(config.n_layers));
  auto& ps = m.params_;
  ps.add("tok_emb", detail::normal_tensor(rng, config.vocab, e, kInitStd));
  ps.add("pos.spatial", detail::normal_tensor(rng, config.tokens_per_frame, e, kInitStd));
  ps.add("pos.temporal", detail::normal_tensor(rng, config.max_frames, e, kInitStd));
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    const std::string pre = "layer" + std::to_string(l) + ".";
    const auto name = [&](LayerParam p) { return pre + kLayerNames[p]; };
    ps.add(name(kLn1G), Tensor({1, e}, 1.0));
    ps.add(name(kLn1B), Tensor({1, e}, 0.0));
    ps.add(name(kWq), detail::normal_tensor(rng, e, e, kInitStd));
    ps.add(name(kBq), Tensor({1, e}, 0.0));
    ps.add(name(kWk), detail::normal_tensor(rng, e, e, kInitStd));
    ps.add(name(kBk), Tensor({1, e}, 0.0));
    ps.add(name(kWv), detail::normal_tensor(rng, e, e, kInitStd));
    ps.add(name(kBv), Tensor({1, e}, 0.0));
    ps.add(name(kWo), detail::normal_tensor(rng, e, e, resid_std));
    ps.add(name(kBo), Tensor({1, e}, 0.0));
    ps.add(name(kLn2G), Tensor({1, e}, 1.0));
    ps.add(name(kLn2B), Tensor({1, e}, 0.0));
    ps.add(name(kW1), detail::normal_tensor(rng, e, hidden, kInitStd));
    ps.add(name(kB1), Tensor({1, hidden}, 0.0));
    ps.add(name(kW2), detail::normal_tensor(rng, hidden, e, resid_std));
    ps.add(name(kB2), Tensor({1, e}, 0.0));
  }
  ps.add("ln_f.g", Tensor({1, e}, 1.0));
  ps.add("ln_f.b", Tensor({1, e}, 0.0));
  ps.add("head.w", detail::normal_tensor(rng, e, config.vocab, kInitStd));
  ps.add("head.b", Tensor({1, config.vocab}, 0.0));
  return m;
}

tg::Checkpoint DynamicsModel::to_checkpoint() const {
  tg::Checkpoint ckpt;
  ckpt.params = params_;
  ckpt.meta["kind"] = "dynamics";
  ckpt.meta["n_layers"] = std::to_string(config_.n_layers);
  ckpt.meta["n_heads"] = std::to_string(config_.n_heads);
  ckpt.meta["embed_dim"] = std::to_string(config_.embed_dim);
  ckpt.meta["vocab"] = std::to_string(config_.vocab);
  ckpt.meta["tokens_per_frame"] = std::to_string(config_.tokens_per_frame);
  ckpt.meta["max_frames"] = std::to_string(config_.max_frames);
  ckpt.meta["mlp_ratio"] = std::to_string(config_.mlp_ratio);
  ckpt.meta["mode"] = to_string(config_.mode);
  ckpt.meta["seed"] = std::to_string(config_.seed);
  return ckpt;
}

DynamicsModel DynamicsModel::from_checkpoint(const tg::Checkpoint& checkpoint) {
  const auto get = [&](const char* key) -> const std::string& {
    return detail::require_field(checkpoint.meta, key, "dynamics checkpoint");
  };
  if (get("kind") != "dynamics") throw ConfigError("checkpoint is not a dynamics model");
  DynamicsConfig c;
  const auto size = [&](const char* key) { return detail::parse_number<std::size_t>(get(key), key); };
  c.n_layers = size("n_layers");
  c.n_heads = size("n_heads");
  c.embed_dim = size("embed_dim");
  c.vocab = size("vocab");
  c.tokens_per_frame = size("tokens_per_frame");
  c.max_frames = size("max_frames");
  c.mlp_ratio = size("mlp_ratio");
  c.mode = parse_mode(get("mode"));
  c.seed = detail::parse_number<std::uint64_t>(get("seed"), "seed");
  DynamicsModel m = initialize(c);
  const tg::ParameterSet loaded = tg::model_parameters(checkpoint);
  for (std::size_t k = 0; k < m.params_.size(); ++k) {
    const Tensor& src = loaded.at(m.params_.name(k));
    if (!src.same_shape(m.params_.tensor(k))) {
      throw ShapeError("dynamics checkpoint: shape mismatch for " + m.params_.name(k));
    }
    m.params_.tensor(k) = src;
  }
  return m;
}

Var DynamicsModel::forward_graph(const std::vector<Var>& p, std::span<const std::uint16_t> tokens,
                                 std::size_t n_seqs, const AttentionMask& mask) const {
  const DynamicsConfig& c = config_;
  if (n_seqs == 0 || tokens.empty() || tokens.size() % n_seqs != 0) {
    throw ShapeError("forward: token count is not a multiple of the sequence count");
  }
  const std::size_t len = tokens.size() / n_seqs;
  if (len > c.block_size()) {
    throw ConfigError("sequence of " + std::to_string(len) + " tokens exceeds block size " +
                      std::to_string(c.block_size()));
  }
  check_tokens(c, tokens);
  std::vector<std::size_t> ids(tokens.begin(), tokens.end());
  std::vector<std::size_t> spatial(tokens.size()), temporal(tokens.size());
  for (std::size_t k = 0; k < tokens.size(); ++k) {
    const std::size_t pos = k % len;
    spatial[k] = pos % c.tokens_per_frame;
    temporal[k] = pos / c.tokens_per_frame;
  }
  Var x = tg::add(tg::add(tg::gather_rows(p[kTokEmb], ids), tg::gather_rows(p[kPosSpatial], spatial)),
                  tg::gather_rows(p[kPosTemporal], temporal));
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const auto P = [&](LayerParam which) { return p[layer_index(l, which)]; };
    Var h = tg::layer_norm(x, P(kLn1G), P(kLn1B), kLnEps);
    Var q = tg::add_row(tg::matmul(h, P(kWq)), P(kBq));
    Var k = tg::add_row(tg::matmul(h, P(kWk)), P(kBk));
    Var v = tg::add_row(tg::matmul(h, P(kWv)), P(kBv));
    Var a = tg::attention(q, k, v, mask, c.n_heads, n_seqs);
    x = tg::add(x, tg::add_row(tg::matmul(a, P(kWo)), P(kBo)));
    Var h2 = tg::layer_norm(x, P(kLn2G), P(kLn2B), kLnEps);
    Var m = tg::gelu(tg::add_row(tg::matmul(h2, P(kW1)), P(kB1)));
    x = tg::add(x, tg::add_row(tg::matmul(m, P(kW2)), P(kB2)));
  }
  x = tg::layer_norm(x, p[final_index(c, kLnFG)], p[final_index(c, kLnFB)], kLnEps);
  return tg::add_row(tg::matmul(x, p[final_index(c, kHeadW)]), p[final_index(c, kHeadB)]);
}

namespace {

std::vector<std::uint16_t> flatten(const DynamicsConfig& c, std::span<const TokenFrame> frames) {
  std::vector<std::uint16_t> flat;
  flat.reserve(frames.size() * c.tokens_per_frame);
  for (const auto& f : frames) {
    if (f.size() != c.tokens_per_frame) {
      throw ShapeError("frame has " + std::to_string(f.size()) + " tokens, model expects " +
                       std::to_string(c.tokens_per_frame));
    }
    flat.insert(flat.end(), f.begin(), f.end());
  }
  return flat;
}

AttentionMask mask_for(Mode mode, std::size_t len, std::size_t tokens_per_frame) {
  if (mode == Mode::kTokenLevel) return build_token_causal_mask(len).allow;
  const std::size_t frames = (len + tokens_per_frame - 1) / tokens_per_frame;
  return build_block_causal_mask(frames, tokens_per_frame).allow.prefix(len);
}

}  // namespace

Tensor DynamicsModel::forward(std::span<const TokenFrame> frames, Mode mode) const {
  if (frames.empty()) throw ShapeError("forward needs at least one frame");
  if (frames.size() > config_.max_frames) {
    throw ConfigError(std::to_string(frames.size()) + " frames exceed max_frames " +
                      std::to_string(config_.max_frames));
  }
  const auto flat = flatten(config_, frames);
  tg::Tape tape;
  std::vector<Var> consts;
  for (std::size_t k = 0; k < params_.size(); ++k) consts.push_back(tape.constant(params_.tensor(k)));
  return forward_graph(consts, flat, 1, mask_for(mode, flat.size(), config_.tokens_per_frame)).value();
}

// ---- Inference -----------------------------------------------------------------

template <typename Scalar>
struct InferenceModel<Scalar>::Impl {
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Row = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

  struct Layer {
    Row ln1_g, ln1_b, bq, bk, bv, bo, ln2_g, ln2_b, b1, b2;
    Mat wq, wk, wv, wo, w1, w2;
  };

  DynamicsConfig config;
  Mat tok_emb, pos_spatial, pos_temporal, head_w;
  Row lnf_g, lnf_b, head_b;
  std::vector<Layer> layers;
  BlockMask block_mask;
  BlockMask token_mask;

  static Mat to_mat(const Tensor& t) {
    Mat m(t.rows(), t.cols());
    for (std::size_t r = 0; r < t.rows(); ++r)
      for (std::size_t c = 0; c < t.cols(); ++c) m(r, c) = static_cast<Scalar>(t.at(r, c));
    return m;
  }
  static Row to_row(const Tensor& t) { return to_mat(t).row(0); }

  static void layer_norm(Mat& x, const Row& g, const Row& b) {
    const auto n = static_cast<Scalar>(x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const Scalar mu = x.row(r).sum() / n;
      x.row(r).array() -= mu;
      const Scalar var = x.row(r).squaredNorm() / n;
      x.row(r) *= Scalar(1) / std::sqrt(var + static_cast<Scalar>(kLnEps));
      x.row(r) = x.row(r).cwiseProduct(g) + b;
    }
  }

  static void gelu(Mat& x) {
    const auto c = static_cast<Scalar>(std::sqrt(2.0 / std::numbers::pi));
    const auto k = static_cast<Scalar>(0.044715);
    x = x.unaryExpr([c, k](Scalar v) {
      return Scalar(0.5) * v * (Scalar(1) + std::tanh(c * (v + k * v * v * v)));
    });
  }
};

template <typename Scalar>
InferenceModel<Scalar>::InferenceModel(const DynamicsModel& model) : impl_(std::make_unique<Impl>()) {
  const DynamicsConfig& c = model.config();
  const tg::ParameterSet& ps = model.params();
  Impl& m = *impl_;
  m.config = c;
  m.tok_emb = Impl::to_mat(ps.tensor(kTokEmb));
  m.pos_spatial = Impl::to_mat(ps.tensor(kPosSpatial));
  m.pos_temporal = Impl::to_mat(ps.tensor(kPosTemporal));
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const auto T = [&](LayerParam which) -> const Tensor& { return ps.tensor(layer_index(l, which)); };
    typename Impl::Layer layer;
    layer.ln1_g = Impl::to_row(T(kLn1G));
    layer.ln1_b = Impl::to_row(T(kLn1B));
    layer.wq = Impl::to_mat(T(kWq));
    layer.bq = Impl::to_row(T(kBq));
    layer.wk = Impl::to_mat(T(kWk));
    layer.bk = Impl::to_row(T(kBk));
    layer.wv = Impl::to_mat(T(kWv));
    layer.bv = Impl::to_row(T(kBv));
    layer.wo = Impl::to_mat(T(kWo));
    layer.bo = Impl::to_row(T(kBo));
    layer.ln2_g = Impl::to_row(T(kLn2G));
    layer.ln2_b = Impl::to_row(T(kLn2B));
    layer.w1 = Impl::to_mat(T(kW1));
    layer.b1 = Impl::to_row(T(kB1));
    layer.w2 = Impl::to_mat(T(kW2));
    layer.b2 = Impl::to_row(T(kB2));
    m.layers.push_back(std::move(layer));
  }
  m.lnf_g = Impl::to_row(ps.tensor(final_index(c, kLnFG)));
  m.lnf_b = Impl::to_row(ps.tensor(final_index(c, kLnFB)));
  m.head_w = Impl::to_mat(ps.tensor(final_index(c, kHeadW)));
  m.head_b = Impl::to_row(ps.tensor(final_index(c, kHeadB)));
  m.block_mask = build_block_causal_mask(c.max_frames, c.tokens_per_frame);
  m.token_mask = build_token_causal_mask(c.block_size());
}

template <typename Scalar>
InferenceModel<Scalar>::~InferenceModel() = default;
template <typename Scalar>
InferenceModel<Scalar>::InferenceModel(InferenceModel&&) noexcept = default;
template <typename Scalar>
InferenceModel<Scalar>& InferenceModel<Scalar>::operator=(InferenceModel&&) noexcept = default;

template <typename Scalar>
const DynamicsConfig& InferenceModel<Scalar>::config() const {
  return impl_->config;
}

template <typename Scalar>
std::vector<Scalar> InferenceModel<Scalar>::forward(std::span<const std::uint16_t> tokens, Mode mode,
                                                    std::size_t rows) const {
  using Mat = typename Impl::Mat;
  const Impl& m = *impl_;
  const DynamicsConfig& c = m.config;
  const auto len = static_cast<Eigen::Index>(tokens.size());
  if (tokens.empty() || tokens.size() > c.block_size()) {
    throw ConfigError("inference sequence length must lie in [1, " + std::to_string(c.block_size()) + "]");
  }
  if (rows < 1 || rows > tokens.size()) throw ShapeError("requested logits rows out of range");
  check_tokens(c, tokens);
  // Masks are prefix-consistent, so the leading len x len block applies.
  const AttentionMask& mask = mode == Mode::kFrameLevel ? m.block_mask.allow : m.token_mask.allow;

  Mat x(len, c.embed_dim);
  for (Eigen::Index p = 0; p < len; ++p) {
    const auto up = static_cast<std::size_t>(p);
    x.row(p) = m.tok_emb.row(tokens[up]) +
               m.pos_spatial.row(static_cast<Eigen::Index>(up % c.tokens_per_frame)) +
               m.pos_temporal.row(static_cast<Eigen::Index>(up / c.tokens_per_frame));
  }
  const auto head_dim = static_cast<Eigen::Index>(c.embed_dim / c.n_heads);
  const Scalar inv_sqrt = Scalar(1) / std::sqrt(static_cast<Scalar>(head_dim));
  Mat h, q, k, v, attn(len, c.embed_dim), scores(len, len);
  for (const auto& layer : m.layers) {
    h = x;
    Impl::layer_norm(h, layer.ln1_g, layer.ln1_b);
    q.noalias() = h * layer.wq;
    q.rowwise() += layer.bq;
    k.noalias() = h * layer.wk;
    k.rowwise() += layer.bk;
    v.noalias() = h * layer.wv;
    v.rowwise() += layer.bv;
    for (std::size_t head = 0; head < c.n_heads; ++head) {
      const auto c0 = static_cast<Eigen::Index>(head) * head_dim;
      scores.noalias() = q.middleCols(c0, head_dim) * k.middleCols(c0, head_dim).transpose();
      for (Eigen::Index i = 0; i < len; ++i) {
        Scalar mx = -std::numeric_limits<Scalar>::infinity();
        for (Eigen::Index j = 0; j < len; ++j) {
          if (mask.allowed(static_cast<std::size_t>(i), static_cast<std::size_t>(j))) {
            mx = std::max(mx, scores(i, j) * inv_sqrt);
          }
        }
        Scalar z = 0;
        for (Eigen::Index j = 0; j < len; ++j) {
          const bool ok = mask.allowed(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
          scores(i, j) = ok ? std::exp(scores(i, j) * inv_sqrt - mx) : Scalar(0);
          z += scores(i, j);
        }
        scores.row(i) /= z;
      }
      attn.middleCols(c0, head_dim).noalias() = scores * v.middleCols(c0, head_dim);
    }
    x.noalias() += attn * layer.wo;
    x.rowwise() += layer.bo;
    h = x;
    Impl::layer_norm(h, layer.ln2_g, layer.ln2_b);
    Mat hidden = h * layer.w1;
    hidden.rowwise() += layer.b1;
    Impl::gelu(hidden);
    x.noalias() += hidden * layer.w2;
    x.rowwise() += layer.b2;
  }
  Mat tail = x.bottomRows(static_cast<Eigen::Index>(rows));
  Impl::layer_norm(tail, m.lnf_g, m.lnf_b);
  Mat logits = tail * m.head_w;
  logits.rowwise() += m.head_b;
  return std::vector<Scalar>(logits.data(), logits.data() + logits.size());
}

template class InferenceModel<float>;
template class InferenceModel<double>;

// ---- Decoding ------------------------------------------------------------------

namespace {

template <typename Scalar>
std::uint16_t choose(const Scalar* logits, std::size_t vocab, const DecodeOptions& options,
                     std::mt19937_64& rng) {
  if (options.greedy) {
    // lowest index among equal maxima
    return static_cast<std::uint16_t>(std::max_element(logits, logits + vocab) - logits);
  }
  if (!(options.temperature > 0.0)) throw ConfigError("sampling temperature must be positive");
  const Scalar mx = *std::max_element(logits, logits + vocab);
  std::vector<double> weights(vocab);
  for (std::size_t k = 0; k < vocab; ++k) {
    weights[k] = std::exp((static_cast<double>(logits[k]) - static_cast<double>(mx)) / options.temperature);
  }
  std::discrete_distribution<std::size_t> dist(weights.begin(), weights.end());
  return static_cast<std::uint16_t>(dist(rng));
}

void check_context(const DynamicsConfig& c, std::span<const TokenFrame> context) {
  if (context.empty()) throw HorizonError("decoding needs at least one context frame");
  if (context.size() >= c.max_frames) {
    throw HorizonError("context of " + std::to_string(context.size()) +
                       " frames leaves no room below max_frames " + std::to_string(c.max_frames));
  }
}

}  // namespace

template <typename Scalar>
TokenFrame decode_next_frame(const InferenceModel<Scalar>& model, std::span<const TokenFrame> context,
                             PassCounter& counter, const DecodeOptions& options, std::mt19937_64* rng) {
  const DynamicsConfig& c = model.config();
  check_context(c, context);
  std::mt19937_64 local(options.seed);
  std::mt19937_64& gen = rng ? *rng : local;
  const auto flat = flatten(c, context);
  const auto logits = model.forward(flat, Mode::kFrameLevel, c.tokens_per_frame);
  ++counter.forward_passes;
  TokenFrame next(c.tokens_per_frame);
  for (std::size_t i = 0; i < c.tokens_per_frame; ++i) {
    next[i] = choose(logits.data() + i * c.vocab, c.vocab, options, gen);
  }
  return next;
}

template <typename Scalar>
TokenFrame decode_next_frame_tokenwise(const InferenceModel<Scalar>& model,
                                       std::span<const TokenFrame> context, PassCounter& counter,
                                       const DecodeOptions& options, std::mt19937_64* rng) {
  const DynamicsConfig& c = model.config();
  check_context(c, context);
  std::mt19937_64 local(options.seed);
  std::mt19937_64& gen = rng ? *rng : local;
  auto flat = flatten(c, context);
  TokenFrame next;
  next.reserve(c.tokens_per_frame);
  for (std::size_t i = 0; i < c.tokens_per_frame; ++i) {
    const auto logits = model.forward(flat, Mode::kTokenLevel, 1);
    ++counter.forward_passes;
    const std::uint16_t token = choose(logits.data(), c.vocab, options, gen);
    next.push_back(token);
    flat.push_back(token);
  }
  return next;
}

template <typename Scalar>
std::vector<TokenFrame> rollout(const InferenceModel<Scalar>& model, std::span<const TokenFrame> context,
                                std::size_t horizon, Mode mode, PassCounter& counter,
                                const DecodeOptions& options) {
  const DynamicsConfig& c = model.config();
  if (context.empty()) throw HorizonError("rollout needs at least one context frame");
  if (context.size() + horizon > c.max_frames) {
    throw HorizonError("context " + std::to_string(context.size()) + " + horizon " +
                       std::to_string(horizon) + " exceeds max_frames " + std::to_string(c.max_frames));
  }
  std::mt19937_64 rng(options.seed);
  std::vector<TokenFrame> frames(context.begin(), context.end());
  std::vector<TokenFrame> predicted;
  for (std::size_t step = 0; step < horizon; ++step) {
    TokenFrame next = mode == Mode::kFrameLevel
                          ? decode_next_frame(model, frames, counter, options, &rng)
                          : decode_next_frame_tokenwise(model, frames, counter, options, &rng);
    frames.push_back(next);
    predicted.push_back(std::move(next));
  }
  return predicted;
}

#define BLOCKCAST_INSTANTIATE_DECODE(S)                                                              \
  template TokenFrame decode_next_frame<S>(const InferenceModel<S>&, std::span<const TokenFrame>,   \
                                           PassCounter&, const DecodeOptions&, std::mt19937_64*);   \
  template TokenFrame decode_next_frame_tokenwise<S>(const InferenceModel<S>&,                      \
                                                     std::span<const TokenFrame>, PassCounter&,     \
                                                     const DecodeOptions&, std::mt19937_64*);       \
  template std::vector<TokenFrame> rollout<S>(const InferenceModel<S>&, std::span<const TokenFrame>, \
                                              std::size_t, Mode, PassCounter&, const DecodeOptions&);
BLOCKCAST_INSTANTIATE_DECODE(float)
BLOCKCAST_INSTANTIATE_DECODE(double)
#undef BLOCKCAST_INSTANTIATE_DECODE

// ---- Training ------------------------------------------------------------------

void validate_sequences(const DynamicsConfig& config, std::span<const TokenSequence> data) {
  for (const auto& seq : data) {
    if (seq.size() < 2) throw InputError("training sequences need at least two frames");
    if (seq.size() > config.max_frames) {
      throw ConfigError("sequence of " + std::to_string(seq.size()) + " frames exceeds max_frames " +
                        std::to_string(config.max_frames));
    }
    if (seq.size() != data.front().size()) throw InputError("training sequences differ in length");
    for (const auto& frame : seq) {
      if (frame.size() != config.tokens_per_frame) {
        throw ConfigError("frame width " + std::to_string(frame.size()) +
                          " does not match tokens_per_frame " + std::to_string(config.tokens_per_frame));
      }
      check_tokens(config, frame);
    }
  }
}

Var sequence_loss(const DynamicsModel& model, const std::vector<Var>& bound,
                  std::span<const TokenSequence> batch, Mode mode) {
  const DynamicsConfig& c = model.config();
  if (batch.empty()) throw InputError("empty training batch");
  validate_sequences(c, batch);
  const std::size_t n = c.tokens_per_frame;
  const std::size_t t = batch.front().size();
  std::vector<std::uint16_t> inputs;
  std::vector<std::size_t> targets;
  if (mode == Mode::kFrameLevel) {
    // Frames 1..T-1 predict frames 2..T position by position.
    for (const auto& seq : batch) {
      for (std::size_t f = 0; f + 1 < t; ++f) inputs.insert(inputs.end(), seq[f].begin(), seq[f].end());
      for (std::size_t f = 1; f < t; ++f) targets.insert(targets.end(), seq[f].begin(), seq[f].end());
    }
    Var logits = model.forward_graph(bound, inputs, batch.size(), build_block_causal_mask(t - 1, n).allow);
    return tg::cross_entropy_logits(logits, targets);
  }
  // Token level: position p predicts p+1; only targets inside frames 2..T count.
  const std::size_t len = t * n - 1;
  std::vector<std::size_t> rows;
  for (std::size_t s = 0; s < batch.size(); ++s) {
    std::vector<std::uint16_t> flat;
    for (const auto& frame : batch[s]) flat.insert(flat.end(), frame.begin(), frame.end());
    inputs.insert(inputs.end(), flat.begin(), flat.end() - 1);
    for (std::size_t p = n - 1; p < len; ++p) {
      rows.push_back(s * len + p);
      targets.push_back(flat[p + 1]);
    }
  }
  Var logits = model.forward_graph(bound, inputs, batch.size(), build_token_causal_mask(len).allow);
  return tg::cross_entropy_logits(tg::gather_rows(logits, rows), targets);
}

double evaluate_loss(const DynamicsModel& model, std::span<const TokenSequence> batch, Mode mode) {
  tg::Tape tape;
  std::vector<Var> consts;
  for (std::size_t k = 0; k < model.params().size(); ++k) consts.push_back(tape.constant(model.params().tensor(k)));
  return sequence_loss(model, consts, batch, mode).value().item();
}

DynamicsTrainer::DynamicsTrainer(DynamicsModel model, DynamicsTrainConfig config)
    : DynamicsTrainer(model, tg::OptimizerState::for_params(model.params(), config.optimizer), config) {}

DynamicsTrainer::DynamicsTrainer(DynamicsModel model, tg::OptimizerState state, DynamicsTrainConfig config)
    : model_(std::move(model)), state_(std::move(state)), config_(config) {
  if (config_.optimizer.batch_size == 0) throw ConfigError("batch_size must be positive");
  state_.config = config_.optimizer;
}

tg::Checkpoint DynamicsTrainer::checkpoint() const {
  tg::Checkpoint ckpt = model_.to_checkpoint();
  tg::store_optimizer(ckpt, state_, model_.params());
  return ckpt;
}

DynamicsStepLog DynamicsTrainer::step(std::span<const TokenSequence> dataset) {
  if (dataset.empty()) throw InputError("dynamics training needs a non-empty dataset");
  validate_sequences(model_.config(), dataset);
  const std::size_t batch = std::min(config_.optimizer.batch_size, dataset.size());
  const std::size_t steps_per_epoch = (dataset.size() + batch - 1) / batch;
  const std::uint64_t step_index = state_.step;
  const std::uint64_t epoch = step_index / steps_per_epoch;
  const std::size_t slot = static_cast<std::size_t>(step_index % steps_per_epoch);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(detail::derive_seed(config_.seed, epoch));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<TokenSequence> chosen;
  for (std::size_t k = slot * batch; k < std::min(dataset.size(), (slot + 1) * batch); ++k) {
    chosen.push_back(dataset[order[k]]);
  }

  tg::Tape tape;
  const auto bound = model_.params().bind(tape);
  Var loss = sequence_loss(model_, bound, chosen, model_.config().mode);
  tape.backward(loss);
  std::vector<Tensor> grads;
  grads.reserve(bound.size());
  for (const Var& v : bound) grads.push_back(v.grad());
  DynamicsStepLog log;
  log.step = step_index + 1;
  log.loss = loss.value().item();
  log.lr = tg::adam_step(model_.params(), grads, state_);
  return log;
}

void DynamicsTrainer::train(std::span<const TokenSequence> dataset, std::size_t steps,
                            const std::function<void(const DynamicsStepLog&)>& on_step) {
  for (std::size_t s = 0; s < steps; ++s) {
    const auto log = step(dataset);
    if (on_step) on_step(log);
  }
}

// ---- Benchmark -----------------------------------------------------------------

TimingStats summarize_timings(std::span<const double> seconds) {
  TimingStats stats;
  stats.repetitions = seconds.size();
  if (seconds.empty()) return stats;
  stats.mean_seconds = std::accumulate(seconds.begin(), seconds.end(), 0.0) / static_cast<double>(seconds.size());
  if (seconds.size() > 1) {
    double ss = 0.0;
    for (double s : seconds) ss += (s - stats.mean_seconds) * (s - stats.mean_seconds);
    stats.stddev_seconds = std::sqrt(ss / static_cast<double>(seconds.size() - 1));
  }
  return stats;
}

template <typename Scalar>
BenchmarkReport benchmark_decode(const InferenceModel<Scalar>& frame_model,
                                 const InferenceModel<Scalar>& token_model,
                                 std::span<const TokenFrame> context, std::size_t horizon,
                                 std::size_t repetitions, std::size_t warmup) {
  const DynamicsConfig& a = frame_model.config();
  const DynamicsConfig& b = token_model.config();
  if (a.n_layers != b.n_layers || a.n_heads != b.n_heads || a.embed_dim != b.embed_dim ||
      a.vocab != b.vocab || a.tokens_per_frame != b.tokens_per_frame || a.max_frames != b.max_frames ||
      a.mlp_ratio != b.mlp_ratio) {
    throw ConfigError("benchmark models must share every setting except the decode mode");
  }
  if (repetitions == 0) throw ConfigError("benchmark needs at least one repetition");
  using clock = std::chrono::steady_clock;
  const auto timed = [&](const InferenceModel<Scalar>& model, Mode mode, PassCounter& counter) {
    const auto t0 = clock::now();
    rollout(model, context, horizon, mode, counter);
    return std::chrono::duration<double>(clock::now() - t0).count();
  };
  for (std::size_t w = 0; w < warmup; ++w) {
    PassCounter scratch;
    timed(frame_model, Mode::kFrameLevel, scratch);
    timed(token_model, Mode::kTokenLevel, scratch);
  }
  BenchmarkReport report;
  report.horizon = horizon;
  report.tokens_per_frame = a.tokens_per_frame;
  std::vector<double> frame_times, token_times;
  for (std::size_t r = 0; r < repetitions; ++r) {
    PassCounter fc, tc;
    frame_times.push_back(timed(frame_model, Mode::kFrameLevel, fc));
    token_times.push_back(timed(token_model, Mode::kTokenLevel, tc));
    report.frame_passes = fc.forward_passes;
    report.token_passes = tc.forward_passes;
  }
  report.pass_ratio = report.frame_passes == 0
                          ? 0.0
                          : static_cast<double>(report.token_passes) / static_cast<double>(report.frame_passes);
  report.frame_timing = summarize_timings(frame_times);
  report.token_timing = summarize_timings(token_times);
  report.wallclock_ratio = report.frame_timing.mean_seconds > 0.0
                               ? report.token_timing.mean_seconds / report.frame_timing.mean_seconds
                               : 0.0;
  return report;
}

template BenchmarkReport benchmark_decode<float>(const InferenceModel<float>&, const InferenceModel<float>&,
                                                 std::span<const TokenFrame>, std::size_t, std::size_t,
                                                 std::size_t);
template BenchmarkReport benchmark_decode<double>(const InferenceModel<double>&, const InferenceModel<double>&,
                                                  std::span<const TokenFrame>, std::size_t, std::size_t,
                                                  std::size_t);

}  // namespace blockcast::dynamics
