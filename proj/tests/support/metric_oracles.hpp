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

// Naive per-pixel reference implementations, written without reference to
// the library code paths.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "blockcast/fieldio.hpp"

namespace blockcast::testing {

struct NaiveCounts {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

inline NaiveCounts naive_counts(const std::vector<RadarField>& p, const std::vector<RadarField>& o, double tau,
                                const std::vector<std::uint8_t>* mask = nullptr) {
  NaiveCounts c;
  for (std::size_t t = 0; t < p.size(); ++t)
    for (std::size_t i = 0; i < p[t].height(); ++i)
      for (std::size_t j = 0; j < p[t].width(); ++j) {
        if (mask && !(*mask)[i * p[t].width() + j]) continue;
        const bool yhat = p[t].at(i, j) >= tau;
        const bool y = o[t].at(i, j) >= tau;
        if (yhat && y) c.tp++;
        if (yhat && !y) c.fp++;
        if (!yhat && y) c.fn++;
        if (!yhat && !y) c.tn++;
      }
  return c;
}

inline double naive_mse(const std::vector<RadarField>& p, const std::vector<RadarField>& o) {
  double s = 0;
  double n = 0;
  for (std::size_t t = 0; t < p.size(); ++t)
    for (std::size_t i = 0; i < p[t].height(); ++i)
      for (std::size_t j = 0; j < p[t].width(); ++j) {
        s += (double(p[t].at(i, j)) - o[t].at(i, j)) * (double(p[t].at(i, j)) - o[t].at(i, j));
        n += 1;
      }
  return s / n;
}

inline double naive_mae(const std::vector<RadarField>& p, const std::vector<RadarField>& o) {
  double s = 0;
  double n = 0;
  for (std::size_t t = 0; t < p.size(); ++t)
    for (std::size_t i = 0; i < p[t].height(); ++i)
      for (std::size_t j = 0; j < p[t].width(); ++j) {
        s += std::fabs(double(p[t].at(i, j)) - o[t].at(i, j));
        n += 1;
      }
  return s / n;
}

inline double naive_pcc(const std::vector<RadarField>& p, const std::vector<RadarField>& o) {
  std::vector<double> x, y;
  for (std::size_t t = 0; t < p.size(); ++t)
    for (std::size_t i = 0; i < p[t].height(); ++i)
      for (std::size_t j = 0; j < p[t].width(); ++j) {
        x.push_back(p[t].at(i, j));
        y.push_back(o[t].at(i, j));
      }
  double mx = 0, my = 0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    mx += x[k];
    my += y[k];
  }
  mx /= double(x.size());
  my /= double(y.size());
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    sxy += (x[k] - mx) * (y[k] - my);
    sxx += (x[k] - mx) * (x[k] - mx);
    syy += (y[k] - my) * (y[k] - my);
  }
  return sxy / (std::sqrt(sxx) * std::sqrt(syy));
}

/// Trapezoid sum written as sum of rectangles plus triangles.
inline double naive_trapezoid(const std::vector<double>& xs, const std::vector<double>& ys) {
  double a = 0;
  for (std::size_t k = 0; k + 1 < xs.size(); ++k) {
    const double w = xs[k + 1] - xs[k];
    a += w * std::min(ys[k], ys[k + 1]) + 0.5 * w * std::fabs(ys[k + 1] - ys[k]);
  }
  return a;
}

inline std::vector<RadarField> random_frames(std::mt19937_64& rng, std::size_t t, std::size_t h, std::size_t w,
                                             double hi = 10.0, bool integer = false) {
  std::uniform_real_distribution<double> u(0.0, hi);
  std::vector<RadarField> out;
  for (std::size_t k = 0; k < t; ++k) {
    RadarField f(h, w);
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        const double v = u(rng);
        f.set(i, j, static_cast<float>(integer ? std::floor(v) : v));
      }
    out.push_back(std::move(f));
  }
  return out;
}

}  // namespace blockcast::testing
