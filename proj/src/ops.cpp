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

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>

#include "blockcast/error.hpp"
#include "blockcast/tensor.hpp"

namespace blockcast::tensorgrad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

MapC view(const Tensor& t) { return MapC(t.data().data(), t.rows(), t.cols()); }
Map view(Tensor& t) { return Map(t.data().data(), t.rows(), t.cols()); }

Tape& same_tape(Var a, Var b) {
  if (a.tape == nullptr || a.tape != b.tape) throw UsageError("operands live on different tapes");
  return *a.tape;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                     b.shape_string());
  }
}

// Adds `g` into the accumulator of input `id` when that input needs a gradient.
template <typename Fn>
void accumulate(Tape& tape, std::size_t id, Fn&& fn) {
  if (tape.requires_grad(id)) fn(tape.grad_accumulator(id));
}

template <typename F, typename DF>
Var elementwise(Var a, F f, DF df) {
  Tape& tape = *a.tape;
  const Tensor& x = a.value();
  Tensor out(x.shape());
  for (std::size_t k = 0; k < x.size(); ++k) out[k] = f(x[k]);
  return tape.record(std::move(out), {a.id}, [a_id = a.id, df](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& xin = t.value(a_id);
    const Tensor& y = t.value(self);
    accumulate(t, a_id, [&](Tensor& ga) {
      for (std::size_t k = 0; k < g.size(); ++k) ga[k] += g[k] * df(xin[k], y[k]);
    });
  });
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& tape = same_tape(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.cols() != y.rows()) {
    throw ShapeError("matmul: inner extents differ " + x.shape_string() + " x " +
                     y.shape_string());
  }
  Tensor out({x.rows(), y.cols()});
  view(out).noalias() = view(x) * view(y);
  return tape.record(std::move(out), {a.id, b.id}, [a_id = a.id, b_id = b.id](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    accumulate(t, a_id, [&](Tensor& ga) { view(ga).noalias() += view(g) * view(t.value(b_id)).transpose(); });
    accumulate(t, b_id, [&](Tensor& gb) { view(gb).noalias() += view(t.value(a_id)).transpose() * view(g); });
  });
}

Var add(Var a, Var b) {
  Tape& tape = same_tape(a, b);
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  for (std::size_t k = 0; k < out.size(); ++k) out[k] += b.value()[k];
  return tape.record(std::move(out), {a.id, b.id}, [a_id = a.id, b_id = b.id](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    for (std::size_t id : {a_id, b_id}) {
      accumulate(t, id, [&](Tensor& gi) { for (std::size_t k = 0; k < g.size(); ++k) gi[k] += g[k]; });
    }
  });
}

Var sub(Var a, Var b) {
  Tape& tape = same_tape(a, b);
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  for (std::size_t k = 0; k < out.size(); ++k) out[k] -= b.value()[k];
  return tape.record(std::move(out), {a.id, b.id}, [a_id = a.id, b_id = b.id](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    accumulate(t, a_id, [&](Tensor& ga) { for (std::size_t k = 0; k < g.size(); ++k) ga[k] += g[k]; });
    accumulate(t, b_id, [&](Tensor& gb) { for (std::size_t k = 0; k < g.size(); ++k) gb[k] -= g[k]; });
  });
}

Var mul(Var a, Var b) {
  Tape& tape = same_tape(a, b);
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  for (std::size_t k = 0; k < out.size(); ++k) out[k] *= b.value()[k];
  return tape.record(std::move(out), {a.id, b.id}, [a_id = a.id, b_id = b.id](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& x = t.value(a_id);
    const Tensor& y = t.value(b_id);
    accumulate(t, a_id, [&](Tensor& ga) { for (std::size_t k = 0; k < g.size(); ++k) ga[k] += g[k] * y[k]; });
    accumulate(t, b_id, [&](Tensor& gb) { for (std::size_t k = 0; k < g.size(); ++k) gb[k] += g[k] * x[k]; });
  });
}

Var scale(Var a, double s) {
  return elementwise(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_row(Var a, Var row) {
  Tape& tape = same_tape(a, row);
  const Tensor& x = a.value();
  const Tensor& r = row.value();
  if (r.rows() != 1 || r.cols() != x.cols()) {
    throw ShapeError("add_row: bias " + r.shape_string() + " does not fit " + x.shape_string());
  }
  Tensor out = x;
  view(out).rowwise() += view(r).row(0);
  return tape.record(std::move(out), {a.id, row.id}, [a_id = a.id, r_id = row.id](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    accumulate(t, a_id, [&](Tensor& ga) { view(ga) += view(g); });
    accumulate(t, r_id, [&](Tensor& gr) { view(gr).row(0) += view(g).colwise().sum(); });
  });
}

Var tanh(Var a) {
  return elementwise(a, [](double x) { return std::tanh(x); },
                     [](double, double y) { return 1.0 - y * y; });
}

Var gelu(Var a) {
  static const double c = std::sqrt(2.0 / std::numbers::pi);
  constexpr double k = 0.044715;
  return elementwise(
      a,
      [](double x) { return 0.5 * x * (1.0 + std::tanh(c * (x + k * x * x * x))); },
      [](double x, double) {
        const double th = std::tanh(c * (x + k * x * x * x));
        return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * c * (1.0 + 3.0 * k * x * x);
      });
}

Var clamp(Var a, double lo, double hi) {
  return elementwise(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Var sum(Var a) {
  Tape& tape = *a.tape;
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return tape.record(Tensor::scalar(s), {a.id}, [a_id = a.id](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    accumulate(t, a_id, [&](Tensor& ga) { for (double& v : ga.data()) v += g; });
  });
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var mean_row_sq_norm(Var a) {
  Tape& tape = *a.tape;
  const Tensor& x = a.value();
  const double m = static_cast<double>(x.rows());
  double s = 0.0;
  for (double v : x.data()) s += v * v;
  return tape.record(Tensor::scalar(s / m), {a.id}, [a_id = a.id, m](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    const Tensor& xin = t.value(a_id);
    accumulate(t, a_id, [&](Tensor& ga) {
      for (std::size_t k = 0; k < xin.size(); ++k) ga[k] += g * 2.0 * xin[k] / m;
    });
  });
}

namespace {

// dx = y * (g - <g, y>) along each softmax lane.
void softmax_backward(const Tensor& y, const Tensor& g, Tensor& gx, std::size_t lanes,
                      std::size_t lane_len, std::size_t lane_stride, std::size_t elem_stride) {
  for (std::size_t l = 0; l < lanes; ++l) {
    const std::size_t base = l * lane_stride;
    double dot = 0.0;
    for (std::size_t e = 0; e < lane_len; ++e) {
      const std::size_t k = base + e * elem_stride;
      dot += g[k] * y[k];
    }
    for (std::size_t e = 0; e < lane_len; ++e) {
      const std::size_t k = base + e * elem_stride;
      gx[k] += y[k] * (g[k] - dot);
    }
  }
}

}  // namespace

Var softmax(Var x, int axis) {
  Tape& tape = *x.tape;
  const Tensor& in = x.value();
  if (axis != 0 && axis != 1) throw ShapeError("softmax axis must be 0 or 1");
  const std::size_t rows = in.rows();
  const std::size_t cols = in.cols();
  // Lanes run along `axis`.
  const std::size_t lanes = axis == 1 ? rows : cols;
  const std::size_t lane_len = axis == 1 ? cols : rows;
  const std::size_t lane_stride = axis == 1 ? cols : 1;
  const std::size_t elem_stride = axis == 1 ? 1 : cols;
  Tensor out(in.shape());
  for (std::size_t l = 0; l < lanes; ++l) {
    const std::size_t base = l * lane_stride;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t e = 0; e < lane_len; ++e) mx = std::max(mx, in[base + e * elem_stride]);
    double z = 0.0;
    for (std::size_t e = 0; e < lane_len; ++e) {
      const std::size_t k = base + e * elem_stride;
      out[k] = std::exp(in[k] - mx);
      z += out[k];
    }
    for (std::size_t e = 0; e < lane_len; ++e) out[base + e * elem_stride] /= z;
  }
  return tape.record(std::move(out), {x.id},
                     [x_id = x.id, lanes, lane_len, lane_stride, elem_stride](Tape& t, std::size_t self) {
                       accumulate(t, x_id, [&](Tensor& gx) {
                         softmax_backward(t.value(self), t.grad(self), gx, lanes, lane_len,
                                          lane_stride, elem_stride);
                       });
                     });
}

namespace {

// Row-wise masked softmax into `out` (rows x n). Returns false if some row has
// no permitted entry; that row is left as zeros.
bool masked_softmax_rows(const double* in, double* out, std::size_t rows, std::size_t n,
                         const AttentionMask& mask, std::size_t row_offset = 0) {
  bool ok = true;
  for (std::size_t i = 0; i < rows; ++i) {
    const double* src = in + i * n;
    double* dst = out + i * n;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (mask.allowed(i + row_offset, j)) mx = std::max(mx, src[j]);
    }
    if (mx == -std::numeric_limits<double>::infinity()) {
      std::fill(dst, dst + n, 0.0);
      ok = false;
      continue;
    }
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      dst[j] = mask.allowed(i + row_offset, j) ? std::exp(src[j] - mx) : 0.0;
      z += dst[j];
    }
    for (std::size_t j = 0; j < n; ++j) dst[j] /= z;
  }
  return ok;
}

}  // namespace

Var masked_softmax(Var x, const AttentionMask& mask) {
  Tape& tape = *x.tape;
  const Tensor& in = x.value();
  if (in.rows() != mask.size() || in.cols() != mask.size()) {
    throw ShapeError("masked_softmax: scores " + in.shape_string() + " vs mask of size " +
                     std::to_string(mask.size()));
  }
  Tensor out(in.shape());
  const bool ok = masked_softmax_rows(in.data().data(), out.data().data(), in.rows(), in.cols(), mask);
  if (!ok && tape.debug_checks()) throw DomainError("masked_softmax: row with no permitted entry");
  const std::size_t n = in.cols();
  return tape.record(std::move(out), {x.id}, [x_id = x.id, n](Tape& t, std::size_t self) {
    accumulate(t, x_id, [&](Tensor& gx) {
      softmax_backward(t.value(self), t.grad(self), gx, n, n, n, 1);
    });
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  Tape& tape = same_tape(x, gain);
  same_tape(x, bias);
  if (!(eps > 0.0)) throw ConfigError("layer_norm eps must be positive");
  const Tensor& in = x.value();
  const std::size_t rows = in.rows();
  const std::size_t cols = in.cols();
  const Tensor& gv = gain.value();
  const Tensor& bv = bias.value();
  if (gv.rows() != 1 || gv.cols() != cols || !bv.same_shape(gv)) {
    throw ShapeError("layer_norm: gain/bias must be 1 x " + std::to_string(cols));
  }
  auto normalized = std::make_shared<Tensor>(in.shape());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  Tensor out(in.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    double mu = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mu += in.at(r, c);
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) var += (in.at(r, c) - mu) * (in.at(r, c) - mu);
    var /= static_cast<double>(cols);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t c = 0; c < cols; ++c) {
      const double xh = (in.at(r, c) - mu) * is;
      normalized->at(r, c) = xh;
      out.at(r, c) = xh * gv[c] + bv[c];
    }
  }
  return tape.record(
      std::move(out), {x.id, gain.id, bias.id},
      [x_id = x.id, g_id = gain.id, b_id = bias.id, normalized, inv_std](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& gv2 = t.value(g_id);
        const std::size_t rows2 = g.rows();
        const std::size_t cols2 = g.cols();
        accumulate(t, g_id, [&](Tensor& gg) {
          for (std::size_t r = 0; r < rows2; ++r)
            for (std::size_t c = 0; c < cols2; ++c) gg[c] += g.at(r, c) * normalized->at(r, c);
        });
        accumulate(t, b_id, [&](Tensor& gb) {
          for (std::size_t r = 0; r < rows2; ++r)
            for (std::size_t c = 0; c < cols2; ++c) gb[c] += g.at(r, c);
        });
        accumulate(t, x_id, [&](Tensor& gx) {
          const double n = static_cast<double>(cols2);
          for (std::size_t r = 0; r < rows2; ++r) {
            double mean_d = 0.0;
            double mean_dx = 0.0;
            for (std::size_t c = 0; c < cols2; ++c) {
              const double d = g.at(r, c) * gv2[c];
              mean_d += d;
              mean_dx += d * normalized->at(r, c);
            }
            mean_d /= n;
            mean_dx /= n;
            for (std::size_t c = 0; c < cols2; ++c) {
              const double d = g.at(r, c) * gv2[c];
              gx.at(r, c) += (*inv_std)[r] * (d - mean_d - normalized->at(r, c) * mean_dx);
            }
          }
        });
      });
}

Var cross_entropy_logits(Var logits, std::span<const std::size_t> targets) {
  Tape& tape = *logits.tape;
  const Tensor& in = logits.value();
  const std::size_t n = in.rows();
  const std::size_t vocab = in.cols();
  if (targets.size() != n) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(n) + " rows");
  }
  auto probs = std::make_shared<Tensor>(in.shape());
  auto tgt = std::make_shared<std::vector<std::size_t>>(targets.begin(), targets.end());
  double loss = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    if (targets[r] >= vocab) {
      throw IndexError("cross_entropy: target " + std::to_string(targets[r]) +
                       " outside vocabulary of " + std::to_string(vocab));
    }
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < vocab; ++c) mx = std::max(mx, in.at(r, c));
    double z = 0.0;
    for (std::size_t c = 0; c < vocab; ++c) {
      probs->at(r, c) = std::exp(in.at(r, c) - mx);
      z += probs->at(r, c);
    }
    for (std::size_t c = 0; c < vocab; ++c) probs->at(r, c) /= z;
    loss += (mx + std::log(z)) - in.at(r, targets[r]);
  }
  loss /= static_cast<double>(n);
  return tape.record(Tensor::scalar(loss), {logits.id}, [l_id = logits.id, probs, tgt](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    accumulate(t, l_id, [&](Tensor& gl) {
      const std::size_t n2 = probs->rows();
      const double s = g / static_cast<double>(n2);
      for (std::size_t r = 0; r < n2; ++r) {
        for (std::size_t c = 0; c < probs->cols(); ++c) gl.at(r, c) += s * probs->at(r, c);
        gl.at(r, (*tgt)[r]) -= s;
      }
    });
  });
}

Var gather_rows(Var table, std::span<const std::size_t> indices) {
  Tape& tape = *table.tape;
  const Tensor& tab = table.value();
  const std::size_t width = tab.cols();
  if (indices.empty()) throw ShapeError("gather_rows: no indices");
  Tensor out({indices.size(), width});
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= tab.rows()) {
      throw IndexError("gather_rows: index " + std::to_string(indices[r]) + " >= " +
                       std::to_string(tab.rows()));
    }
    std::copy_n(tab.data().begin() + static_cast<std::ptrdiff_t>(indices[r] * width), width,
                out.data().begin() + static_cast<std::ptrdiff_t>(r * width));
  }
  auto idx = std::make_shared<std::vector<std::size_t>>(indices.begin(), indices.end());
  return tape.record(std::move(out), {table.id}, [t_id = table.id, idx, width](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    accumulate(t, t_id, [&](Tensor& gt) {
      for (std::size_t r = 0; r < idx->size(); ++r) {
        for (std::size_t c = 0; c < width; ++c) gt[(*idx)[r] * width + c] += g[r * width + c];
      }
    });
  });
}

Var attention(Var q, Var k, Var v, const AttentionMask& mask, std::size_t n_heads,
              std::size_t n_seqs) {
  Tape& tape = same_tape(q, k);
  same_tape(q, v);
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();
  if (!qv.same_shape(kv) || !qv.same_shape(vv)) throw ShapeError("attention: q, k, v shapes differ");
  if (n_heads == 0 || n_seqs == 0) throw ShapeError("attention: heads and sequences must be positive");
  const std::size_t embed = qv.cols();
  if (embed % n_heads != 0) throw ShapeError("attention: embed width not divisible by heads");
  if (qv.rows() % n_seqs != 0) throw ShapeError("attention: rows not divisible by sequences");
  const std::size_t len = qv.rows() / n_seqs;
  if (mask.size() != len) {
    throw ShapeError("attention: mask size " + std::to_string(mask.size()) +
                     " does not match sequence length " + std::to_string(len));
  }
  const std::size_t head_dim = embed / n_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));

  // Attention weights kept for the backward pass, one len x len block per
  // (sequence, head).
  auto weights = std::make_shared<std::vector<RowMat>>(n_seqs * n_heads);
  Tensor out(qv.shape());
  const MapC Q = view(qv), K = view(kv), V = view(vv);
  Map O = view(out);
  RowMat scores(len, len);
  bool ok = true;
  for (std::size_t s = 0; s < n_seqs; ++s) {
    for (std::size_t h = 0; h < n_heads; ++h) {
      const auto r0 = static_cast<Eigen::Index>(s * len);
      const auto c0 = static_cast<Eigen::Index>(h * head_dim);
      const auto L = static_cast<Eigen::Index>(len);
      const auto D = static_cast<Eigen::Index>(head_dim);
      scores.noalias() = Q.block(r0, c0, L, D) * K.block(r0, c0, L, D).transpose();
      scores *= inv_sqrt;
      RowMat& p = (*weights)[s * n_heads + h];
      p.resize(L, L);
      ok = masked_softmax_rows(scores.data(), p.data(), len, len, mask) && ok;
      O.block(r0, c0, L, D).noalias() = p * V.block(r0, c0, L, D);
    }
  }
  if (!ok && tape.debug_checks()) throw DomainError("attention: query row with no permitted key");

  return tape.record(
      std::move(out), {q.id, k.id, v.id},
      [q_id = q.id, k_id = k.id, v_id = v.id, weights, n_seqs, n_heads, len, head_dim,
       inv_sqrt](Tape& t, std::size_t self) {
        const MapC G = view(t.grad(self));
        const MapC Qb = view(t.value(q_id)), Kb = view(t.value(k_id)), Vb = view(t.value(v_id));
        const bool need_q = t.requires_grad(q_id);
        const bool need_k = t.requires_grad(k_id);
        const bool need_v = t.requires_grad(v_id);
        Tensor* gq = need_q ? &t.grad_accumulator(q_id) : nullptr;
        Tensor* gk = need_k ? &t.grad_accumulator(k_id) : nullptr;
        Tensor* gv = need_v ? &t.grad_accumulator(v_id) : nullptr;
        const auto L = static_cast<Eigen::Index>(len);
        const auto D = static_cast<Eigen::Index>(head_dim);
        RowMat dp(L, L), ds(L, L);
        for (std::size_t s = 0; s < n_seqs; ++s) {
          for (std::size_t h = 0; h < n_heads; ++h) {
            const auto r0 = static_cast<Eigen::Index>(s * len);
            const auto c0 = static_cast<Eigen::Index>(h * head_dim);
            const RowMat& p = (*weights)[s * n_heads + h];
            const auto g_blk = G.block(r0, c0, L, D);
            if (gv) view(*gv).block(r0, c0, L, D).noalias() += p.transpose() * g_blk;
            if (!gq && !gk) continue;
            dp.noalias() = g_blk * Vb.block(r0, c0, L, D).transpose();
            const Eigen::VectorXd row_dot = (dp.array() * p.array()).rowwise().sum();
            ds = (p.array() * (dp.colwise() - row_dot).array()).matrix() * inv_sqrt;
            if (gq) view(*gq).block(r0, c0, L, D).noalias() += ds * Kb.block(r0, c0, L, D);
            if (gk) view(*gk).block(r0, c0, L, D).noalias() += ds.transpose() * Qb.block(r0, c0, L, D);
          }
        }
      });
}

Var stop_gradient(Var a) { return a.tape->constant(a.value()); }

Var straight_through(Var continuous, Var quantized) {
  Tape& tape = same_tape(continuous, quantized);
  require_same_shape(continuous.value(), quantized.value(), "straight_through");
  return tape.record(quantized.value(), {continuous.id}, [c_id = continuous.id](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    accumulate(t, c_id, [&](Tensor& gc) { for (std::size_t k = 0; k < g.size(); ++k) gc[k] += g[k]; });
  });
}

}  // namespace blockcast::tensorgrad
