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

#include <doctest.h>

#include <cmath>
#include <random>

#include "blockcast/blockdynamics.hpp"
#include "blockcast/error.hpp"
#include "support/gradcheck.hpp"
#include "support/tempdir.hpp"

using namespace blockcast;
using namespace blockcast::dynamics;
using blockcast::tensorgrad::Checkpoint;
using blockcast::tensorgrad::Tape;
using blockcast::tensorgrad::read_checkpoint;
using blockcast::tensorgrad::write_checkpoint;

namespace {

DynamicsConfig tiny(std::size_t n = 4, std::size_t frames = 5, std::uint64_t seed = 1) {
  DynamicsConfig c;
  c.n_layers = 2;
  c.n_heads = 2;
  c.embed_dim = 16;
  c.vocab = 32;
  c.tokens_per_frame = n;
  c.max_frames = frames;
  c.seed = seed;
  return c;
}

TokenSequence random_sequence(std::mt19937_64& rng, std::size_t frames, std::size_t n, std::size_t vocab) {
  std::uniform_int_distribution<int> d(0, static_cast<int>(vocab) - 1);
  TokenSequence s(frames, TokenFrame(n));
  for (auto& f : s)
    for (auto& t : f) t = static_cast<std::uint16_t>(d(rng));
  return s;
}

bool rows_equal(const Tensor& a, const Tensor& b, std::size_t row) {
  for (std::size_t c = 0; c < a.cols(); ++c)
    if (a.at(row, c) != b.at(row, c)) return false;
  return true;
}

// Random weights with enough spread that perturbations propagate visibly.
DynamicsModel scrambled(const DynamicsConfig& c, std::uint64_t seed) {
  DynamicsModel m = DynamicsModel::initialize(c);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, 0.5);
  for (std::size_t k = 0; k < m.params().size(); ++k)
    for (double& v : m.params().tensor(k).data()) v = d(rng);
  return m;
}

}  // namespace

TEST_CASE("block mask examples") {
  const auto one = build_block_causal_mask(1, 3);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) CHECK(one.allow.allowed(i, j));

  const auto two = build_block_causal_mask(2, 2);
  const char* rows[] = {"1100", "1100", "1111", "1111"};
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) CHECK(two.allow.allowed(i, j) == (rows[i][j] == '1'));

  const auto tok1 = build_token_causal_mask(1);
  CHECK(tok1.size() == 1);
  CHECK(tok1.allow.allowed(0, 0));
  const auto tok3 = build_token_causal_mask(3);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) CHECK(tok3.allow.allowed(i, j) == (j <= i));
  CHECK_THROWS_AS(build_block_causal_mask(0, 2), ConfigError);
}

TEST_CASE("block mask agrees with the frame predicate exhaustively") {
  for (std::size_t t = 1; t <= 6; ++t) {
    for (std::size_t n = 1; n <= 16; ++n) {
      const auto m = build_block_causal_mask(t, n);
      REQUIRE(m.size() == t * n);
      std::size_t mismatches = 0;
      for (std::size_t i = 0; i < t * n; ++i)
        for (std::size_t j = 0; j < t * n; ++j) mismatches += m.allow.allowed(i, j) != (j / n <= i / n);
      CHECK(mismatches == 0);
    }
    CHECK(build_block_causal_mask(t * 3, 1).allow == build_token_causal_mask(t * 3).allow);
  }
}

TEST_CASE("frame mode is causal across frames and bidirectional within") {
  const DynamicsConfig c = tiny(4, 4);
  std::mt19937_64 rng(42);
  std::size_t bidirectional_hits = 0, probes = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const DynamicsModel m = scrambled(c, 1000 + trial);
    const TokenSequence s = random_sequence(rng, 4, 4, c.vocab);
    const Tensor base = m.forward(s, Mode::kFrameLevel);
    std::uniform_int_distribution<std::size_t> frame(1, 3), pos(0, 3);
    const std::size_t u = frame(rng), j = pos(rng);
    TokenSequence p = s;
    p[u][j] = static_cast<std::uint16_t>((p[u][j] + 1 + rng() % (c.vocab - 1)) % c.vocab);
    const Tensor moved = m.forward(p, Mode::kFrameLevel);
    for (std::size_t row = 0; row < u * 4; ++row) CHECK(rows_equal(base, moved, row));
    for (std::size_t i = 0; i < 4; ++i) {
      if (i == j) continue;
      ++probes;
      bidirectional_hits += !rows_equal(base, moved, u * 4 + i);
    }
  }
  CHECK(bidirectional_hits == probes);
}

TEST_CASE("token mode is causal per position") {
  const DynamicsConfig c = tiny(4, 4);
  std::mt19937_64 rng(43);
  for (int trial = 0; trial < 100; ++trial) {
    const DynamicsModel m = scrambled(c, 2000 + trial);
    const TokenSequence s = random_sequence(rng, 4, 4, c.vocab);
    const Tensor base = m.forward(s, Mode::kTokenLevel);
    const std::size_t q = 1 + rng() % 15;
    TokenSequence p = s;
    auto& tok = p[q / 4][q % 4];
    tok = static_cast<std::uint16_t>((tok + 1) % c.vocab);
    const Tensor moved = m.forward(p, Mode::kTokenLevel);
    for (std::size_t row = 0; row < q; ++row) CHECK(rows_equal(base, moved, row));
    CHECK_FALSE(rows_equal(base, moved, q));
  }
}

TEST_CASE("forward validates its input") {
  const DynamicsModel m = DynamicsModel::initialize(tiny(4, 3));
  std::mt19937_64 rng(1);
  CHECK_THROWS_AS(m.forward(random_sequence(rng, 4, 4, 32), Mode::kFrameLevel), ConfigError);
  TokenSequence s = random_sequence(rng, 2, 4, 32);
  s[1][0] = 40;
  CHECK_THROWS_AS(m.forward(s, Mode::kFrameLevel), ConfigError);
  CHECK_THROWS_AS(m.forward(random_sequence(rng, 2, 3, 32), Mode::kFrameLevel), ShapeError);
  DynamicsConfig bad = tiny();
  bad.n_heads = 3;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK(parse_mode("token_level") == Mode::kTokenLevel);
  CHECK_THROWS_AS(parse_mode("sideways"), ConfigError);
}

TEST_CASE("inference forward matches the reference graph") {
  for (Mode mode : {Mode::kFrameLevel, Mode::kTokenLevel}) {
    const DynamicsConfig c = tiny(4, 5);
    const DynamicsModel m = scrambled(c, 7);
    std::mt19937_64 rng(3);
    const TokenSequence s = random_sequence(rng, 3, 4, c.vocab);
    const Tensor ref = m.forward(s, mode);
    std::vector<std::uint16_t> flat;
    for (const auto& f : s) flat.insert(flat.end(), f.begin(), f.end());
    const auto d = InferenceModel<double>(m).forward(flat, mode, 5);
    const auto f = InferenceModel<float>(m).forward(flat, mode, 5);
    for (std::size_t r = 0; r < 5; ++r) {
      for (std::size_t k = 0; k < c.vocab; ++k) {
        const double want = ref.at(12 - 5 + r, k);
        CHECK(std::abs(d[r * c.vocab + k] - want) <= 1e-10 * (1.0 + std::abs(want)));
        CHECK(std::abs(f[r * c.vocab + k] - want) <= 1e-3 * (1.0 + std::abs(want)));
      }
    }
  }
}

TEST_CASE("decode pass counts") {
  const DynamicsConfig c = tiny(4, 9);
  const DynamicsModel m = DynamicsModel::initialize(c);
  const InferenceModel<float> im(m);
  std::mt19937_64 rng(5);
  const TokenSequence ctx = random_sequence(rng, 3, 4, c.vocab);

  PassCounter pc;
  decode_next_frame(im, std::span(ctx), pc);
  CHECK(pc.forward_passes == 1);
  decode_next_frame_tokenwise(im, std::span(ctx), pc);
  CHECK(pc.forward_passes == 5);

  PassCounter frame, token;
  CHECK(rollout(im, std::span(ctx), 6, Mode::kFrameLevel, frame).size() == 6);
  CHECK(rollout(im, std::span(ctx), 6, Mode::kTokenLevel, token).size() == 6);
  CHECK(frame.forward_passes == 6);
  CHECK(token.forward_passes == 24);

  PassCounter none;
  CHECK(rollout(im, std::span(ctx), 0, Mode::kFrameLevel, none).empty());
  CHECK(none.forward_passes == 0);
  CHECK_THROWS_AS(rollout(im, std::span(ctx), 7, Mode::kFrameLevel, none), HorizonError);
  const TokenSequence full = random_sequence(rng, 9, 4, c.vocab);
  CHECK_THROWS_AS(decode_next_frame(im, std::span(full), none), HorizonError);
  CHECK_THROWS_AS(decode_next_frame(im, std::span<const TokenFrame>(), none), HorizonError);
}

TEST_CASE("token rollout at full-scale frame width costs 6N passes") {
  DynamicsConfig c = tiny(64, 9);
  c.embed_dim = 8;
  c.vocab = 16;
  const InferenceModel<float> im(DynamicsModel::initialize(c));
  std::mt19937_64 rng(6);
  const TokenSequence ctx = random_sequence(rng, 3, 64, c.vocab);
  PassCounter frame, token;
  rollout(im, std::span(ctx), 6, Mode::kFrameLevel, frame);
  rollout(im, std::span(ctx), 6, Mode::kTokenLevel, token);
  CHECK(frame.forward_passes == 6);
  CHECK(token.forward_passes == 384);
}

TEST_CASE("one token per frame makes both decoders agree") {
  const DynamicsConfig c = tiny(1, 8);
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    const InferenceModel<double> im(scrambled(c, 300 + trial));
    const TokenSequence ctx = random_sequence(rng, 3, 1, c.vocab);
    PassCounter a, b;
    CHECK(rollout(im, std::span(ctx), 5, Mode::kFrameLevel, a) ==
          rollout(im, std::span(ctx), 5, Mode::kTokenLevel, b));
    CHECK(a.forward_passes == b.forward_passes);
  }
}

TEST_CASE("greedy and seeded sampling are deterministic") {
  const DynamicsConfig c = tiny(4, 9);
  const InferenceModel<float> im(scrambled(c, 11));
  std::mt19937_64 rng(12);
  const TokenSequence ctx = random_sequence(rng, 3, 4, c.vocab);
  PassCounter pc;
  CHECK(rollout(im, std::span(ctx), 6, Mode::kFrameLevel, pc) ==
        rollout(im, std::span(ctx), 6, Mode::kFrameLevel, pc));
  DecodeOptions sample;
  sample.greedy = false;
  sample.temperature = 1.5;
  sample.seed = 77;
  const auto s1 = rollout(im, std::span(ctx), 6, Mode::kTokenLevel, pc, sample);
  CHECK(s1 == rollout(im, std::span(ctx), 6, Mode::kTokenLevel, pc, sample));
  sample.temperature = 0.0;
  CHECK_THROWS_AS(rollout(im, std::span(ctx), 1, Mode::kFrameLevel, pc, sample), ConfigError);
}

TEST_CASE("initial loss is close to ln K") {
  for (Mode mode : {Mode::kFrameLevel, Mode::kTokenLevel}) {
    DynamicsConfig c = tiny(4, 6);
    c.vocab = 256;
    c.mode = mode;
    const DynamicsModel m = DynamicsModel::initialize(c);
    std::mt19937_64 rng(13);
    std::vector<TokenSequence> batch;
    for (int b = 0; b < 4; ++b) batch.push_back(random_sequence(rng, 6, 4, c.vocab));
    const double loss = evaluate_loss(m, batch, mode);
    CHECK(std::abs(loss - std::log(256.0)) <= 0.05 * std::log(256.0));
  }
}

TEST_CASE("full model loss gradient matches finite differences") {
  for (Mode mode : {Mode::kFrameLevel, Mode::kTokenLevel}) {
    DynamicsConfig c = tiny(2, 3);
    c.embed_dim = 4;
    c.vocab = 5;
    c.mlp_ratio = 2;
    const DynamicsModel m = scrambled(c, 21);
    std::mt19937_64 rng(14);
    const std::vector<TokenSequence> batch{random_sequence(rng, 3, 2, c.vocab), random_sequence(rng, 3, 2, c.vocab)};
    std::vector<Tensor> inputs;
    for (std::size_t k = 0; k < m.params().size(); ++k) inputs.push_back(m.params().tensor(k));
    blockcast::testing::GraphFn fn = [&](Tape&, const std::vector<Var>& v) {
      return sequence_loss(m, v, batch, mode);
    };
    CHECK(blockcast::testing::gradient_check(fn, inputs) <= 1e-4);
  }
}

TEST_CASE("overfitting one event decreases loss and memorizes the next frame") {
  DynamicsConfig c = tiny(4, 4);
  c.embed_dim = 32;
  std::mt19937_64 rng(15);
  const std::vector<TokenSequence> data{random_sequence(rng, 4, 4, c.vocab)};
  DynamicsTrainConfig tc;
  tc.optimizer.lr = 3e-3;
  tc.optimizer.warmup_steps = 1;
  tc.optimizer.batch_size = 1;
  DynamicsTrainer trainer(DynamicsModel::initialize(c), tc);
  std::vector<double> losses;
  trainer.train(data, 200, [&](const DynamicsStepLog& log) { losses.push_back(log.loss); });
  std::size_t increases = 0;
  for (std::size_t k = 1; k < losses.size(); ++k) increases += losses[k] >= losses[k - 1];
  CHECK(increases == 0);
  CHECK(losses.back() < 0.05 * losses.front());

  const InferenceModel<double> im(trainer.model());
  PassCounter pc;
  const auto pred = rollout(im, std::span(data[0]).first(1), 3, Mode::kFrameLevel, pc);
  CHECK(pred[0] == data[0][1]);
  CHECK(pred == TokenSequence(data[0].begin() + 1, data[0].end()));
}

TEST_CASE("training is deterministic and resumable") {
  const DynamicsConfig c = tiny(4, 4);
  std::mt19937_64 rng(16);
  std::vector<TokenSequence> data;
  for (int k = 0; k < 5; ++k) data.push_back(random_sequence(rng, 4, 4, c.vocab));
  DynamicsTrainConfig tc;
  tc.optimizer.lr = 1e-3;
  tc.optimizer.warmup_steps = 3;
  tc.optimizer.batch_size = 2;
  tc.seed = 4;
  const DynamicsModel init = DynamicsModel::initialize(c);
  std::vector<double> a, b;
  DynamicsTrainer ta(init, tc), tb(init, tc);
  ta.train(data, 10, [&](const DynamicsStepLog& l) { a.push_back(l.loss); });
  tb.train(data, 10, [&](const DynamicsStepLog& l) { b.push_back(l.loss); });
  CHECK(a == b);

  DynamicsTrainer first(init, tc);
  first.train(data, 4);
  blockcast::testing::TempDir dir;
  write_checkpoint(first.checkpoint(), dir.path() / "dyn.ckpt");
  const Checkpoint ck = read_checkpoint(dir.path() / "dyn.ckpt");
  const DynamicsModel restored = DynamicsModel::from_checkpoint(ck);
  CHECK(restored.params() == first.model().params());
  DynamicsTrainer resumed(restored, tensorgrad::load_optimizer(ck, restored.params(), tc.optimizer), tc);
  resumed.train(data, 6);
  CHECK(resumed.model().params() == ta.model().params());

  std::vector<TokenSequence> wrong = data;
  wrong[0][1][0] = 99;
  CHECK_THROWS_AS(ta.step(wrong), ConfigError);
}

TEST_CASE("benchmark reports exact pass ratio") {
  DynamicsConfig c = tiny(16, 9);
  const DynamicsModel fm = DynamicsModel::initialize(c);
  c.mode = Mode::kTokenLevel;
  const DynamicsModel tm = DynamicsModel::initialize(c);
  const InferenceModel<float> f(fm), t(tm);
  std::mt19937_64 rng(17);
  const TokenSequence ctx = random_sequence(rng, 3, 16, c.vocab);
  const auto r = benchmark_decode(f, t, std::span(ctx), 6, 3);
  CHECK(r.frame_passes == 6);
  CHECK(r.token_passes == 96);
  CHECK(r.pass_ratio == 16.0);
  CHECK(r.frame_timing.repetitions == 3);
  CHECK(r.frame_timing.stddev_seconds.has_value());
  const auto single = benchmark_decode(f, t, std::span(ctx), 1, 1, 0);
  CHECK_FALSE(single.token_timing.stddev_seconds.has_value());

  DynamicsConfig other = tiny(16, 9);
  other.embed_dim = 32;
  const InferenceModel<float> o{DynamicsModel::initialize(other)};
  CHECK_THROWS_AS(benchmark_decode(f, o, std::span(ctx), 6, 1), ConfigError);
}
