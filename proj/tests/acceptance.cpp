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

// Acceptance run: one PASS/FAIL line per criterion, tolerances fixed below.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "blockcast/blockdynamics.hpp"
#include "blockcast/error.hpp"
#include "blockcast/fieldio.hpp"
#include "blockcast/pipeline.hpp"
#include "blockcast/verification.hpp"
#include "blockcast/vqtokenizer.hpp"
#include "support/gradcheck.hpp"
#include "support/metric_oracles.hpp"
#include "support/tempdir.hpp"

using namespace blockcast;
using namespace blockcast::dynamics;
using blockcast::tensorgrad::Tape;
using blockcast::tensorgrad::Tensor;
using blockcast::tensorgrad::Var;
using blockcast::testing::GraphFn;
using blockcast::testing::random_tensor;
using blockcast::testing::weighted_sum;
namespace fs = std::filesystem;

namespace {

// Tolerances and budgets.
constexpr int kTrials = 100;
constexpr int kMetricInstances = 200;
constexpr double kGradTol = 1e-4;
constexpr double kRealTol = 1e-12;
constexpr double kVqTol = 1e-12;
constexpr double kZrTol = 1e-9;
constexpr double kWallclockRatioMin = 4.0;
constexpr std::size_t kBenchReps = 50;
constexpr double kTokenizerErrorMax = 0.05;
constexpr std::size_t kTokenizerStepBudget = 5000;
constexpr std::size_t kDynamicsStepBudget = 20000;
constexpr double kCrossEntropyFraction = 0.5;
constexpr std::size_t kHeldOutEvents = 20;
constexpr double kMaskSeconds = 60, kGradSeconds = 300, kMetricSeconds = 60, kLearnSeconds = 1800;

using clock_type = std::chrono::steady_clock;

double seconds_since(clock_type::time_point t0) {
  return std::chrono::duration<double>(clock_type::now() - t0).count();
}

struct Outcome {
  bool pass = true;
  std::ostringstream detail;
  void require(bool ok, const std::string& what) {
    if (!ok) {
      if (!pass) detail << "; ";
      detail << "failed: " << what;
      pass = false;
    }
  }
};

std::string mean_std(const std::vector<double>& xs) {
  const double n = static_cast<double>(xs.size());
  const double m = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  char buf[64];
  if (xs.size() > 1) {
    std::snprintf(buf, sizeof(buf), "%.4g +- %.2g", m, std::sqrt(ss / (n - 1)));
  } else {
    std::snprintf(buf, sizeof(buf), "%.4g", m);
  }
  return buf;
}

DynamicsConfig small_dynamics(std::size_t n, std::size_t frames) {
  DynamicsConfig c;
  c.n_layers = 2;
  c.n_heads = 2;
  c.embed_dim = 16;
  c.vocab = 32;
  c.tokens_per_frame = n;
  c.max_frames = frames;
  c.seed = 1;
  return c;
}

DynamicsModel scrambled(const DynamicsConfig& c, std::uint64_t seed) {
  DynamicsModel m = DynamicsModel::initialize(c);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, 0.5);
  for (std::size_t k = 0; k < m.params().size(); ++k)
    for (double& v : m.params().tensor(k).data()) v = d(rng);
  return m;
}

TokenSequence random_sequence(std::mt19937_64& rng, std::size_t frames, std::size_t n, std::size_t vocab) {
  TokenSequence s(frames, TokenFrame(n));
  for (auto& f : s)
    for (auto& t : f) t = static_cast<std::uint16_t>(rng() % vocab);
  return s;
}

bool same_row(const Tensor& a, const Tensor& b, std::size_t row) {
  for (std::size_t c = 0; c < a.cols(); ++c)
    if (a.at(row, c) != b.at(row, c)) return false;
  return true;
}

// ---------------------------------------------------------------------------

Outcome masks() {
  Outcome o;
  const auto t0 = clock_type::now();
  std::size_t mismatches = 0;
  for (std::size_t t = 1; t <= 6; ++t)
    for (std::size_t n = 1; n <= 16; ++n) {
      const auto m = build_block_causal_mask(t, n);
      for (std::size_t i = 0; i < t * n; ++i)
        for (std::size_t j = 0; j < t * n; ++j) mismatches += m.allow.allowed(i, j) != (j / n <= i / n);
    }
  o.require(mismatches == 0, "mask predicate");

  const std::size_t n = 4, frames = 4;
  const DynamicsConfig c = small_dynamics(n, frames);
  std::mt19937_64 rng(42);
  std::size_t leaks = 0, blind = 0, token_leaks = 0, token_blind = 0;
  for (int trial = 0; trial < kTrials; ++trial) {
    const DynamicsModel m = scrambled(c, 1000 + trial);
    const TokenSequence s = random_sequence(rng, frames, n, c.vocab);

    const Tensor base = m.forward(s, Mode::kFrameLevel);
    const std::size_t u = 1 + rng() % (frames - 1), j = rng() % n;
    TokenSequence p = s;
    p[u][j] = static_cast<std::uint16_t>((p[u][j] + 1) % c.vocab);
    const Tensor moved = m.forward(p, Mode::kFrameLevel);
    for (std::size_t row = 0; row < u * n; ++row) leaks += !same_row(base, moved, row);
    for (std::size_t i = 0; i < n; ++i) blind += i != j && same_row(base, moved, u * n + i);

    const Tensor tbase = m.forward(s, Mode::kTokenLevel);
    const std::size_t q = 1 + rng() % (frames * n - 1);
    TokenSequence tp = s;
    tp[q / n][q % n] = static_cast<std::uint16_t>((tp[q / n][q % n] + 1) % c.vocab);
    const Tensor tmoved = m.forward(tp, Mode::kTokenLevel);
    for (std::size_t row = 0; row < q; ++row) token_leaks += !same_row(tbase, tmoved, row);
    token_blind += same_row(tbase, tmoved, q);
  }
  o.require(leaks == 0 && token_leaks == 0, "causality");
  o.require(blind == 0 && token_blind == 0, "in-frame visibility");
  const double secs = seconds_since(t0);
  o.require(secs < kMaskSeconds, "runtime");
  o.detail << (o.pass ? "" : "; ") << "exhaustive T<=6 N<=16, " << kTrials << " trials per mode, " << secs << " s";
  return o;
}

Outcome decode_cost() {
  Outcome o;
  DynamicsConfig c;
  c.n_layers = 2;
  c.n_heads = 2;
  c.embed_dim = 64;
  c.vocab = 256;
  c.tokens_per_frame = 16;
  c.max_frames = 9;
  c.seed = 5;
  const DynamicsModel m = DynamicsModel::initialize(c);
  const InferenceModel<float> inf(m);
  std::mt19937_64 rng(3);
  const TokenSequence ctx = random_sequence(rng, 3, c.tokens_per_frame, c.vocab);
  const auto r = benchmark_decode(inf, inf, std::span<const TokenFrame>(ctx), 6, kBenchReps, 1);
  o.require(r.frame_passes == 6, "frame passes");
  o.require(r.token_passes == 6 * c.tokens_per_frame, "token passes");
  o.require(r.pass_ratio == static_cast<double>(c.tokens_per_frame), "pass ratio");
  o.require(r.wallclock_ratio >= kWallclockRatioMin, "wall-clock ratio");
  o.detail << (o.pass ? "" : "; ") << "passes " << r.frame_passes << " vs " << r.token_passes << " (ratio "
           << r.pass_ratio << "), wall-clock ratio " << r.wallclock_ratio << " over " << kBenchReps << " reps";
  return o;
}

Outcome gradients() {
  Outcome o;
  const auto t0 = clock_type::now();
  std::mt19937_64 rng(77);
  std::vector<std::pair<std::string, double>> worst;
  const auto suite = [&](const std::string& name, const std::function<double()>& instance) {
    double w = 0.0;
    for (int k = 0; k < kTrials; ++k) w = std::max(w, instance());
    worst.emplace_back(name, w);
    o.require(w <= kGradTol, name);
  };
  std::uniform_int_distribution<std::size_t> dim(1, 6);

  suite("matmul", [&] {
    const std::size_t m = dim(rng), k = dim(rng), n = dim(rng);
    const Tensor w = random_tensor(rng, m, n);
    GraphFn fn = [&](Tape&, const std::vector<Var>& v) { return weighted_sum(matmul(v[0], v[1]), w); };
    return testing::gradient_check(fn, {random_tensor(rng, m, k), random_tensor(rng, k, n)});
  });
  suite("softmax", [&] {
    const std::size_t r = dim(rng), c = dim(rng) + 1;
    const int axis = static_cast<int>(rng() % 2);
    const Tensor w = random_tensor(rng, r, c);
    GraphFn fn = [&](Tape&, const std::vector<Var>& v) { return weighted_sum(softmax(v[0], axis), w); };
    return testing::gradient_check(fn, {random_tensor(rng, r, c, -3, 3)});
  });
  suite("layer_norm", [&] {
    const std::size_t r = dim(rng), c = dim(rng) + 1;
    const Tensor w = random_tensor(rng, r, c);
    GraphFn fn = [&](Tape&, const std::vector<Var>& v) { return weighted_sum(layer_norm(v[0], v[1], v[2]), w); };
    return testing::gradient_check(fn, {random_tensor(rng, r, c), random_tensor(rng, 1, c), random_tensor(rng, 1, c)});
  });
  suite("cross_entropy", [&] {
    const std::size_t r = dim(rng), c = dim(rng) + 1;
    std::vector<std::size_t> targets(r);
    for (auto& t : targets) t = rng() % c;
    GraphFn fn = [&](Tape&, const std::vector<Var>& v) { return cross_entropy_logits(v[0], targets); };
    return testing::gradient_check(fn, {random_tensor(rng, r, c, -4, 4)});
  });
  suite("attention", [&] {
    const std::size_t n = dim(rng), heads = 1 + rng() % 2, d = heads * (1 + rng() % 3);
    tensorgrad::AttentionMask mask(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) mask.set(i, j, j <= i || rng() % 2 == 0);
    const Tensor w = random_tensor(rng, n, d);
    GraphFn fn = [&](Tape&, const std::vector<Var>& v) {
      return weighted_sum(attention(v[0], v[1], v[2], mask, heads), w);
    };
    return testing::gradient_check(fn, {random_tensor(rng, n, d), random_tensor(rng, n, d), random_tensor(rng, n, d)});
  });
  suite("vq_straight_through", [&] {
    // Decoder weights see an ordinary graph; latents see the pass-through rule.
    const std::size_t rows = dim(rng), d = dim(rng), out = dim(rng);
    const Tensor zhat = random_tensor(rng, rows, d), zq = random_tensor(rng, rows, d);
    const Tensor dec = random_tensor(rng, d, out), target = random_tensor(rng, rows, out);
    const double beta = 0.25;
    GraphFn full = [&](Tape& t, const std::vector<Var>& v) {
      Var xh = matmul(straight_through(t.constant(zhat), t.constant(zq)), v[0]);
      return vq::vqvae_loss(t.constant(target), xh, t.constant(zhat), t.constant(zq), beta).total;
    };
    double e = testing::gradient_check(full, {dec});

    Tape tape;
    Var zh = tape.leaf(zhat), q = tape.leaf(zq);
    Var xh = matmul(straight_through(zh, q), tape.constant(dec));
    tape.backward(vq::vqvae_loss(tape.constant(target), xh, zh, q, beta).total);
    GraphFn recon = [&](Tape& t, const std::vector<Var>& v) {
      Var diff = sub(matmul(v[0], t.constant(dec)), t.constant(target));
      return mean(mul(diff, diff));
    };
    Tensor expected_zh = testing::numerical_gradient(recon, {zq}, 0);
    Tensor expected_q({rows, d});
    const double per_row = 1.0 / static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < d; ++c) {
        expected_zh.at(r, c) += 2.0 * (zhat.at(r, c) - zq.at(r, c)) * per_row;
        expected_q.at(r, c) = beta * 2.0 * (zq.at(r, c) - zhat.at(r, c)) * per_row;
      }
    e = std::max(e, testing::relative_error(zh.grad(), expected_zh, 1e-6));
    return std::max(e, testing::relative_error(q.grad(), expected_q, 1e-6));
  });
  suite("full_model_loss", [&] {
    const Mode mode = rng() % 2 ? Mode::kFrameLevel : Mode::kTokenLevel;
    DynamicsConfig c = small_dynamics(1 + rng() % 3, 3);
    c.embed_dim = 4;
    c.vocab = 5;
    c.mlp_ratio = 2;
    const DynamicsModel m = scrambled(c, rng());
    const std::vector<TokenSequence> batch{random_sequence(rng, 3, c.tokens_per_frame, c.vocab),
                                           random_sequence(rng, 3, c.tokens_per_frame, c.vocab)};
    std::vector<Tensor> inputs;
    for (std::size_t k = 0; k < m.params().size(); ++k) inputs.push_back(m.params().tensor(k));
    GraphFn fn = [&](Tape&, const std::vector<Var>& v) { return sequence_loss(m, v, batch, mode); };
    return testing::gradient_check(fn, inputs);
  });
  const double secs = seconds_since(t0);
  o.require(secs < kGradSeconds, "runtime");
  if (!o.pass) o.detail << "; ";
  o.detail << "worst rel err:";
  for (const auto& [name, w] : worst) o.detail << ' ' << name << '=' << w;
  o.detail << ", " << secs << " s";
  return o;
}

Outcome metrics() {
  Outcome o;
  const auto t0 = clock_type::now();
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::size_t> T(1, 6), S(2, 32);
  std::size_t count_err = 0, real_err = 0, roc_err = 0;
  for (int trial = 0; trial < kMetricInstances; ++trial) {
    const std::size_t t = T(rng), h = S(rng), w = S(rng);
    const bool integer = trial % 2 == 0;
    const auto p = testing::random_frames(rng, t, h, w, 10.0, integer);
    const auto q = testing::random_frames(rng, t, h, w, 10.0, integer);
    real_err += std::abs(verify::mse(p, q) - testing::naive_mse(p, q)) > kRealTol;
    real_err += std::abs(verify::mae(p, q) - testing::naive_mae(p, q)) > kRealTol;
    real_err += std::abs(verify::pcc(p, q) - testing::naive_pcc(p, q)) > kRealTol;

    const double tau = integer ? static_cast<double>(1 + rng() % 8) : 1.0 + 8.0 * (rng() % 1000) / 1000.0;
    const auto table = verify::contingency(p, q, tau);
    const auto want = testing::naive_counts(p, q, tau);
    count_err += table.tp != want.tp || table.fp != want.fp || table.fn != want.fn || table.tn != want.tn;
    const auto ratio = [](std::uint64_t a, std::uint64_t b) {
      return b == 0 ? std::nullopt : std::optional<double>(double(a) / double(b));
    };
    const auto same = [&](std::optional<double> got, std::optional<double> exp) {
      return got.has_value() == exp.has_value() && (!got || std::abs(*got - *exp) <= kRealTol);
    };
    real_err += !same(verify::csi(table), ratio(want.tp, want.tp + want.fp + want.fn));
    real_err += !same(verify::far(table), ratio(want.fp, want.tp + want.fp));
    real_err += !same(verify::pod(table), ratio(want.tp, want.tp + want.fn));
    real_err += !same(verify::pofd(table), ratio(want.fp, want.fp + want.tn));

    if (want.tp + want.fn == 0 || want.fp + want.tn == 0) continue;
    const std::vector<double> gammas{0.0, 2.5, 5.0, 7.5, 11.0};
    const auto curve = verify::roc_curve(p, q, tau, gammas);
    std::vector<double> xs{0.0}, ys{0.0};
    std::vector<std::pair<double, double>> pts;
    for (double g : gammas) {
      std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
      for (std::size_t f = 0; f < t; ++f)
        for (std::size_t i = 0; i < h; ++i)
          for (std::size_t j = 0; j < w; ++j) {
            const bool yhat = p[f].at(i, j) >= g, y = q[f].at(i, j) >= tau;
            tp += yhat && y;
            fp += yhat && !y;
            fn += !yhat && y;
            tn += !yhat && !y;
          }
      pts.emplace_back(double(fp) / double(fp + tn), double(tp) / double(tp + fn));
    }
    std::sort(pts.begin(), pts.end());
    for (const auto& [x, y] : pts) {
      xs.push_back(x);
      ys.push_back(y);
      bool found = false;
      for (const auto& c : curve.points) found |= c.pofd == x && c.pod == y;
      roc_err += !found;
    }
    xs.push_back(1.0);
    ys.push_back(1.0);
    roc_err += std::abs(verify::auc(curve) - testing::naive_trapezoid(xs, ys)) > kRealTol;
  }
  o.require(count_err == 0, "contingency counts");
  o.require(real_err == 0, "real-valued scores");
  o.require(roc_err == 0, "roc/auc");

  const verify::RocCurve diag{{{0, 0}, {0.3, 0.3}, {0.7, 0.7}, {1, 1}}};
  const verify::RocCurve perfect{{{0, 0}, {0, 1}, {1, 1}}};
  o.require(verify::auc(diag) == 0.5, "diagonal auc");
  o.require(verify::auc(perfect) == 1.0, "perfect auc");
  const verify::ContingencyTable witness{1, 1, 0, 8};
  o.require(*verify::far(witness) == 0.5 && std::abs(*verify::pofd(witness) - 1.0 / 9.0) < 1e-15,
            "FAR/POFD witness");
  const double secs = seconds_since(t0);
  o.require(secs < kMetricSeconds, "runtime");
  o.detail << (o.pass ? "" : "; ") << kMetricInstances << " instances up to 6x32x32, " << secs << " s";
  return o;
}

Outcome vq_suite() {
  Outcome o;
  std::mt19937_64 rng(31);
  std::size_t wrong = 0, ties_checked = 0;
  for (int trial = 0; trial < kTrials; ++trial) {
    const std::size_t k = 1 + rng() % 40, d = 1 + rng() % 8, n = 1 + rng() % 30;
    Tensor cb = random_tensor(rng, k, d);
    // Duplicate rows force exact ties.
    if (k > 2) {
      const std::size_t a = rng() % k, b = rng() % k;
      for (std::size_t c = 0; c < d; ++c) cb.at(std::max(a, b), c) = cb.at(std::min(a, b), c);
    }
    Tensor x = random_tensor(rng, n, d);
    for (std::size_t r = 0; r < n; r += 3) {
      const std::size_t pick = rng() % k;
      for (std::size_t c = 0; c < d; ++c) x.at(r, c) = cb.at(pick, c);
    }
    const auto qz = vq::quantize(x, cb);
    for (std::size_t r = 0; r < n; ++r) {
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      std::size_t at_best = 0;
      for (std::size_t e = 0; e < k; ++e) {
        double dist = 0.0;
        for (std::size_t c = 0; c < d; ++c) dist += (x.at(r, c) - cb.at(e, c)) * (x.at(r, c) - cb.at(e, c));
        if (dist < best_d) {
          best_d = dist;
          best = e;
          at_best = 1;
        } else if (dist == best_d) {
          ++at_best;
        }
      }
      ties_checked += at_best > 1;
      wrong += qz.indices[r] != best;
      for (std::size_t c = 0; c < d; ++c) wrong += qz.vectors.at(r, c) != cb.at(best, c);
    }
  }
  o.require(wrong == 0, "nearest-neighbor scan");
  o.require(ties_checked > 0, "tie coverage");

  Tape tape;
  Var x = tape.constant(Tensor::matrix(1, 4, {0.1, 0.2, 0.3, 0.4}));
  Var zq = tape.constant(Tensor::matrix(1, 2, {0.5, -0.5}));
  const auto zero = vq::vqvae_loss(x, x, zq, zq, 0.25);
  o.require(zero.total.value().item() == 0.0, "zero case");
  Var zhat = tape.constant(Tensor::matrix(1, 2, {0.7, -0.5}));
  const auto hand = vq::vqvae_loss(x, x, zhat, zq, 0.25);
  o.require(std::abs(hand.total.value().item() - 0.05) <= kVqTol, "hand case 0.05");

  std::size_t bad = 0;
  for (int trial = 0; trial < kTrials; ++trial) {
    Tape t;
    const std::size_t r = 1 + rng() % 5, c = 1 + rng() % 6, lat = 1 + rng() % 5, d = 1 + rng() % 4;
    const auto l = vq::vqvae_loss(t.constant(random_tensor(rng, r, c)), t.constant(random_tensor(rng, r, c)),
                                  t.constant(random_tensor(rng, lat, d)), t.constant(random_tensor(rng, lat, d)),
                                  0.25);
    const double a = l.recon.value().item(), b = l.codebook_term.value().item(), m = l.commit_term.value().item();
    bad += a < 0 || b < 0 || m < 0 || std::abs(l.total.value().item() - (a + b + m)) > kVqTol;
  }
  o.require(bad == 0, "component consistency");
  o.detail << (o.pass ? "" : "; ") << kTrials << " quantize instances (" << ties_checked
           << " tied rows), hand case error " << std::abs(hand.total.value().item() - 0.05);
  return o;
}

Outcome learnability() {
  Outcome o;
  const auto t0 = clock_type::now();
  const cli::RunConfig base = cli::load_config(fs::path(BLOCKCAST_SOURCE_DIR) / "configs" / "smoke.cfg");
  o.require(base.tokenizer_steps <= kTokenizerStepBudget, "tokenizer step budget");
  o.require(base.dynamics_steps <= kDynamicsStepBudget, "dynamics step budget");
  o.require(base.tokens_per_frame() == 16 && base.height == 32 && base.width == 32, "toy geometry");
  std::vector<double> tok_err, ce_ratio, model_mse, persist_mse;
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    testing::TempDir dir;
    cli::RunConfig c = base;
    c.seed = seed;
    c.out_dir = dir.path();
    cli::gen_data(c, 400, "train");
    const auto held = cli::gen_data(c, 2 * kHeldOutEvents, "test");
    o.require(held.files.size() == kHeldOutEvents, "held-out size");
    cli::train_tokenizer(c, false, "train");
    cli::train_dynamics(c, Mode::kFrameLevel, false, "train");

    const vq::Tokenizer tokenizer = cli::load_tokenizer(c);
    std::vector<Grid> fields;
    std::vector<EventSequence> test_events;
    for (const auto& p : held.files) {
      test_events.push_back(read_event(p));
      for (const auto& f : test_events.back().frames) fields.push_back(normalize(f, c.data_max));
    }
    tok_err.push_back(vq::reconstruction_error(tokenizer, fields));

    std::vector<TokenSequence> train_seqs;
    for (const auto& p : read_manifest(cli::manifest_path(c, "train")))
      train_seqs.push_back(cli::tokenize_frames(tokenizer, read_event(p)));
    const DynamicsModel init = DynamicsModel::initialize(c.dynamics_config(Mode::kFrameLevel));
    const DynamicsModel trained = cli::load_dynamics(c, Mode::kFrameLevel);
    ce_ratio.push_back(evaluate_loss(trained, train_seqs, Mode::kFrameLevel) /
                       evaluate_loss(init, train_seqs, Mode::kFrameLevel));

    const InferenceModel<double> inf(trained);
    double mm = 0.0, pm = 0.0;
    for (const auto& ev : test_events) {
      const EventSequence pred = cli::forecast_event(c, tokenizer, inf, ev, Mode::kFrameLevel, nullptr);
      const std::size_t lead1 = c.context_len;
      mm += verify::mse(std::span(pred.frames).subspan(lead1, 1), std::span(ev.frames).subspan(lead1, 1));
      pm += verify::mse(std::span(ev.frames).subspan(lead1 - 1, 1), std::span(ev.frames).subspan(lead1, 1));
    }
    model_mse.push_back(mm / static_cast<double>(test_events.size()));
    persist_mse.push_back(pm / static_cast<double>(test_events.size()));
    o.require(tok_err.back() <= kTokenizerErrorMax, "tokenizer error (seed " + std::to_string(seed) + ")");
    o.require(ce_ratio.back() < kCrossEntropyFraction, "cross-entropy drop (seed " + std::to_string(seed) + ")");
    o.require(model_mse.back() < persist_mse.back(), "beats persistence (seed " + std::to_string(seed) + ")");
  }
  const double secs = seconds_since(t0);
  o.require(secs <= kLearnSeconds, "runtime");
  o.detail << (o.pass ? "" : "; ") << "3 seeds: tokenizer error " << mean_std(tok_err) << " after "
           << base.tokenizer_steps << " steps; CE final/init " << mean_std(ce_ratio) << " after "
           << base.dynamics_steps << " steps; lead+1 MSE model " << mean_std(model_mse) << " vs persistence "
           << mean_std(persist_mse) << " (mm/h)^2; " << secs << " s";
  return o;
}

std::string fingerprint(const fs::path& root) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::string out;
  for (const auto& f : files) out += fs::relative(f, root).string() + '\n' + testing::slurp(f);
  return out;
}

Outcome round_trips() {
  Outcome o;
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> logr(-3.0, 3.0);
  double worst = 0.0;
  for (int k = 0; k < 10000; ++k) {
    const double r = std::pow(10.0, logr(rng));
    worst = std::max(worst, std::abs(reflectivity_to_rate(rate_to_reflectivity(r)) - r) / r);
  }
  o.require(worst <= kZrTol, "Z-R inversion");

  testing::TempDir dir;
  std::size_t evt_bad = 0;
  for (int trial = 0; trial < 20; ++trial) {
    AdvectionParams p;
    p.seed = 500 + trial;
    p.velocity_u = 1.5;
    p.velocity_v = -0.5;
    const EventSequence e = generate_advection_event(p, 5, 12, 20, 2, 30, 50.0);
    const fs::path a = dir / "a.evt", b = dir / "b.evt";
    write_event(e, a);
    const EventSequence back = read_event(a);
    write_event(back, b);
    evt_bad += !(back == e) || testing::slurp(a) != testing::slurp(b);
    for (std::size_t f = 0; f < e.length(); ++f)
      evt_bad += std::memcmp(e.frames[f].values().data(), back.frames[f].values().data(),
                             e.frames[f].values().size() * sizeof(float)) != 0;
  }
  o.require(evt_bad == 0, ".evt bit-exact");

  DynamicsConfig dc = small_dynamics(4, 5);
  const auto ck = scrambled(dc, 12).to_checkpoint();
  tensorgrad::write_checkpoint(ck, dir / "m.ckpt");
  const auto back = tensorgrad::read_checkpoint(dir / "m.ckpt");
  tensorgrad::write_checkpoint(back, dir / "m2.ckpt");
  o.require(back == ck && testing::slurp(dir / "m.ckpt") == testing::slurp(dir / "m2.ckpt"), "checkpoint bit-exact");

  const auto pipeline = [](const fs::path& out) {
    cli::RunConfig c = cli::parse_config(
        "height = 16\nwidth = 16\npatch_size = 4\ncodebook_size = 32\ncodebook_dim = 4\nlatent_channels = 8\n"
        "n_layers = 1\nembed_dim = 16\nlr = 0.001\nwarmup_steps = 5\ntokenizer_steps = 20\ndynamics_steps = 10\n");
    c.seed = 17;
    c.out_dir = out;
    cli::gen_data(c, 16, "train");
    cli::gen_data(c, 8, "test");
    cli::train_tokenizer(c, false, "train");
    std::vector<fs::path> forecasts;
    for (Mode mode : {Mode::kFrameLevel, Mode::kTokenLevel}) {
      cli::train_dynamics(c, mode, false, "train");
      forecasts.push_back(cli::forecast(c, read_manifest(cli::manifest_path(c, "test")), mode,
                                        out / ("fc_" + to_string(mode)))
                              .manifest);
    }
    cli::evaluate(c, forecasts, {0, 1}, cli::manifest_path(c, "test"));
    return fingerprint(out);
  };
  const fs::path run = dir / "run";
  const std::string first = pipeline(run);
  fs::remove_all(run);
  const std::string second = pipeline(run);
  o.require(first == second, "end-to-end determinism");
  o.detail << (o.pass ? "" : "; ") << "Z-R worst rel err " << worst << ", 20 events, pipeline outputs "
           << first.size() << " bytes identical across runs";
  return o;
}

Outcome stratification() {
  Outcome o;
  const auto bins = verify::default_percentile_bins();
  const std::vector<std::pair<double, double>> printed{{0, 20}, {20, 40}, {40, 60}, {60, 80}, {80, 95}};
  bool edges = bins.size() == printed.size();
  for (std::size_t k = 0; edges && k < bins.size(); ++k)
    edges = bins[k].lo == printed[k].first && bins[k].hi == printed[k].second;
  o.require(edges, "bin edges");

  std::mt19937_64 rng(88);
  const std::vector<double> taus{1.0, 2.0, 8.0};
  std::size_t partition_bad = 0, oracle_bad = 0;
  std::set<int> leads;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t h = 8 + rng() % 17, w = 8 + rng() % 17;
    const auto p = testing::random_frames(rng, 6, h, w, 10.0, trial % 2 == 0);
    const auto q = testing::random_frames(rng, 6, h, w, 10.0, trial % 2 == 0);
    verify::Mask a{"a", h, w, std::vector<std::uint8_t>(h * w)}, b{"b", h, w, std::vector<std::uint8_t>(h * w)};
    for (std::size_t k = 0; k < h * w; ++k) {
      a.cells[k] = rng() % 2;
      b.cells[k] = !a.cells[k];
    }
    const std::vector<verify::Mask> masks{a, b};
    const auto cells = verify::evaluate_catchments(p, q, masks, taus, 30);
    for (const auto& cell : cells) {
      leads.insert(cell.lead_min);
      const std::size_t k = static_cast<std::size_t>(cell.lead_min / 30 - 1);
      const auto& m = cell.region == "a" ? a : b;
      const auto want = testing::naive_counts({p[k]}, {q[k]}, cell.tau, &m.cells);
      oracle_bad += cell.table.tp != want.tp || cell.table.fp != want.fp || cell.table.fn != want.fn ||
                    cell.table.tn != want.tn;
      if (cell.region != "a") continue;
      verify::ContingencyTable sum = cell.table;
      for (const auto& other : cells)
        if (other.region == "b" && other.lead_min == cell.lead_min && other.tau == cell.tau) sum += other.table;
      partition_bad += sum.total() != h * w || !(sum == verify::contingency(std::span(p).subspan(k, 1), std::span(q).subspan(k, 1), cell.tau));
    }
    partition_bad += a.count() + b.count() != h * w;
  }
  o.require(partition_bad == 0, "pixel partition");
  o.require(oracle_bad == 0, "catchment oracle");
  o.require(leads == std::set<int>{30, 60, 90, 120, 150, 180}, "lead coverage");
  o.detail << (o.pass ? "" : "; ") << "edges p0-20..p80-95, 20 mask pairs, tau {1,2,8}, leads 30-180";
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"block-causal masks", masks},       {"decode cost", decode_cost},
      {"gradient suite", gradients},       {"metric oracles", metrics},
      {"vector quantization", vq_suite},   {"learnability", learnability},
      {"round trips", round_trips},        {"stratification", stratification},
  };
  int failures = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    Outcome out;
    try {
      out = criteria[k].second();
    } catch (const std::exception& e) {
      out.pass = false;
      out.detail << "exception: " << e.what();
    }
    failures += !out.pass;
    std::printf("%s [%zu] %s: %s\n", out.pass ? "PASS" : "FAIL", k + 1, criteria[k].first.c_str(),
                out.detail.str().c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
