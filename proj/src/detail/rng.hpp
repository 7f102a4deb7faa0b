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

#include <cmath>
#include <cstdint>
#include <random>

#include "blockcast/tensor.hpp"

namespace blockcast::detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Independent stream for (seed, stream id).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(seed ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
}

inline tensorgrad::Tensor normal_tensor(std::mt19937_64& rng, std::size_t rows, std::size_t cols,
                                        double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  tensorgrad::Tensor t({rows, cols});
  for (double& v : t.data()) v = dist(rng);
  return t;
}

/// Scaled-normal init with std 1/sqrt(fan_in).
inline tensorgrad::Tensor fan_in_init(std::mt19937_64& rng, std::size_t fan_in,
                                      std::size_t fan_out) {
  return normal_tensor(rng, fan_in, fan_out, 1.0 / std::sqrt(static_cast<double>(fan_in)));
}

}  // namespace blockcast::detail
