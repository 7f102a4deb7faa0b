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

#include "blockcast/fieldio.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <string>

#include "blockcast/error.hpp"
#include "detail/binio.hpp"

namespace blockcast {

namespace {

constexpr double kZrCoefficient = 200.0;
constexpr double kZrExponent = 1.6;
constexpr const char* kEventMagic = "BLKCEVT1";

void check_value(float v) {
  if (!std::isfinite(v) || v < 0.0f) {
    throw DomainError("precipitation rate must be finite and non-negative, got " +
                      std::to_string(v));
  }
}

}  // namespace

RadarField::RadarField(std::size_t height, std::size_t width, float fill)
    : RadarField(height, width, std::vector<float>(height * width, fill)) {}

RadarField::RadarField(std::size_t height, std::size_t width, std::vector<float> values)
    : height_(height), width_(width), values_(std::move(values)) {
  if (height_ == 0 || width_ == 0) throw ShapeError("radar field needs H, W >= 1");
  if (values_.size() != height_ * width_) {
    throw ShapeError("radar field value count does not match H*W");
  }
  std::for_each(values_.begin(), values_.end(), check_value);
}

void RadarField::set(std::size_t i, std::size_t j, float v) {
  check_value(v);
  values_[i * width_ + j] = v;
}

std::span<const RadarField> EventSequence::context() const {
  return std::span<const RadarField>(frames).first(context_len);
}

std::span<const RadarField> EventSequence::target() const {
  return std::span<const RadarField>(frames).subspan(context_len);
}

void EventSequence::validate() const {
  if (frames.empty()) throw InvariantError("event has no frames");
  if (context_len < 1 || context_len >= frames.size()) {
    throw InvariantError("context length must satisfy 1 <= T_c < T (T_c=" +
                         std::to_string(context_len) + ", T=" + std::to_string(frames.size()) +
                         ")");
  }
  if (step_minutes <= 0) throw InvariantError("step_minutes must be positive");
  for (const auto& f : frames) {
    if (f.height() != frames.front().height() || f.width() != frames.front().width()) {
      throw InvariantError("event frames differ in shape");
    }
  }
}

void AdvectionParams::validate() const {
  if (n_blobs < 1) throw ConfigError("n_blobs must be positive");
  if (blob_amplitude.first < 0.0 || blob_amplitude.second < blob_amplitude.first) {
    throw ConfigError("blob_amplitude range must be non-negative and ordered");
  }
  if (blob_radius.first <= 0.0 || blob_radius.second < blob_radius.first) {
    throw ConfigError("blob_radius range must be positive and ordered");
  }
  if (!(growth_rate >= 0.0) || !std::isfinite(growth_rate)) {
    throw ConfigError("growth_rate must be finite and non-negative");
  }
}

double reflectivity_to_rate(double z) {
  if (!(z >= 0.0)) throw DomainError("reflectivity must be non-negative");
  return std::pow(z / kZrCoefficient, 1.0 / kZrExponent);
}

double rate_to_reflectivity(double r) {
  if (!(r >= 0.0)) throw DomainError("precipitation rate must be non-negative");
  return kZrCoefficient * std::pow(r, kZrExponent);
}

Grid normalize(const RadarField& field, double data_max) {
  if (!(data_max > 0.0)) throw ConfigError("data_max must be positive");
  Grid grid{field.height(), field.width(), {}};
  grid.values.reserve(field.size());
  for (float v : field.values()) grid.values.push_back(std::clamp(v / data_max, 0.0, 1.0));
  return grid;
}

RadarField denormalize(const Grid& grid, double data_max) {
  if (!(data_max > 0.0)) throw ConfigError("data_max must be positive");
  std::vector<float> values;
  values.reserve(grid.values.size());
  for (double v : grid.values) values.push_back(static_cast<float>(std::max(v, 0.0) * data_max));
  return RadarField(grid.height, grid.width, std::move(values));
}

namespace {

std::vector<double> advect_grid(const std::vector<double>& src, std::size_t h, std::size_t w,
                                double u, double v, double growth) {
  // Destination (i, j) samples the source at (i - v, j - u).
  const double sy = -v;
  const double sx = -u;
  const double fy_floor = std::floor(sy);
  const double fx_floor = std::floor(sx);
  const double fy = sy - fy_floor;
  const double fx = sx - fx_floor;
  const auto wrap = [](long long k, std::size_t n) {
    long long m = k % static_cast<long long>(n);
    return static_cast<std::size_t>(m < 0 ? m + static_cast<long long>(n) : m);
  };
  const auto oy = static_cast<long long>(fy_floor);
  const auto ox = static_cast<long long>(fx_floor);

  std::vector<double> dst(h * w);
  for (std::size_t i = 0; i < h; ++i) {
    const std::size_t r0 = wrap(static_cast<long long>(i) + oy, h);
    const std::size_t r1 = wrap(static_cast<long long>(i) + oy + 1, h);
    for (std::size_t j = 0; j < w; ++j) {
      const std::size_t c0 = wrap(static_cast<long long>(j) + ox, w);
      const std::size_t c1 = wrap(static_cast<long long>(j) + ox + 1, w);
      const double a00 = src[r0 * w + c0];
      const double a01 = src[r0 * w + c1];
      const double a10 = src[r1 * w + c0];
      const double a11 = src[r1 * w + c1];
      // lerp form keeps uniform fields bit-identical
      const double top = a00 + fx * (a01 - a00);
      const double bottom = a10 + fx * (a11 - a10);
      dst[i * w + j] = (top + fy * (bottom - top)) * growth;
    }
  }
  return dst;
}

RadarField to_field(const std::vector<double>& values, std::size_t h, std::size_t w) {
  std::vector<float> out(values.size());
  std::transform(values.begin(), values.end(), out.begin(),
                 [](double x) { return static_cast<float>(std::max(x, 0.0)); });
  return RadarField(h, w, std::move(out));
}

}  // namespace

RadarField advect(const RadarField& field, double u, double v, double growth) {
  std::vector<double> src(field.values().begin(), field.values().end());
  return to_field(advect_grid(src, field.height(), field.width(), u, v, growth), field.height(),
                  field.width());
}

EventSequence generate_advection_event(const AdvectionParams& params, std::size_t n_frames,
                                       std::size_t height, std::size_t width,
                                       std::size_t context_len, int step_minutes,
                                       double data_max) {
  params.validate();
  if (n_frames < 2) throw ConfigError("an event needs at least 2 frames");
  if (height == 0 || width == 0) throw ShapeError("grid must be at least 1x1");

  std::mt19937_64 rng(params.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto draw = [&](std::pair<double, double> range) {
    return range.first + (range.second - range.first) * unit(rng);
  };

  std::vector<double> grid(height * width, 0.0);
  for (int b = 0; b < params.n_blobs; ++b) {
    const double ci = unit(rng) * static_cast<double>(height);
    const double cj = unit(rng) * static_cast<double>(width);
    const double amp = draw(params.blob_amplitude);
    const double radius = draw(params.blob_radius);
    for (std::size_t i = 0; i < height; ++i) {
      double di = std::abs(static_cast<double>(i) - ci);
      di = std::min(di, static_cast<double>(height) - di);
      for (std::size_t j = 0; j < width; ++j) {
        double dj = std::abs(static_cast<double>(j) - cj);
        dj = std::min(dj, static_cast<double>(width) - dj);
        grid[i * width + j] += amp * std::exp(-(di * di + dj * dj) / (2.0 * radius * radius));
      }
    }
  }

  EventSequence event;
  event.context_len = context_len;
  event.step_minutes = step_minutes;
  event.data_max = data_max;
  event.seed = params.seed;
  event.frames.reserve(n_frames);
  event.frames.push_back(to_field(grid, height, width));
  for (std::size_t t = 1; t < n_frames; ++t) {
    grid = advect_grid(grid, height, width, params.velocity_u, params.velocity_v,
                       params.growth_rate);
    event.frames.push_back(to_field(grid, height, width));
  }
  event.validate();
  return event;
}

double event_mean_rate(const EventSequence& event) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& f : event.frames) {
    for (float v : f.values()) sum += v;
    count += f.size();
  }
  return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

double nearest_rank_percentile(std::span<const double> values, double percentile) {
  if (values.empty()) throw InputError("percentile of an empty set");
  if (!(percentile >= 0.0 && percentile <= 100.0)) {
    throw ConfigError("percentile must lie in [0, 100]");
  }
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const auto n = static_cast<double>(sorted.size());
  auto rank = static_cast<std::size_t>(std::ceil(percentile / 100.0 * n));
  rank = std::clamp<std::size_t>(rank, 1, sorted.size());
  return sorted[rank - 1];
}

std::vector<std::size_t> filter_event_indices(std::span<const EventSequence> events,
                                              double percentile) {
  if (events.empty()) throw InputError("cannot filter an empty event list");
  std::vector<double> means;
  means.reserve(events.size());
  for (const auto& e : events) means.push_back(event_mean_rate(e));
  const double threshold = nearest_rank_percentile(means, percentile);
  std::vector<std::size_t> kept;
  for (std::size_t k = 0; k < means.size(); ++k) {
    if (means[k] > threshold) kept.push_back(k);
  }
  return kept;
}

std::vector<EventSequence> filter_events(std::span<const EventSequence> events,
                                         double percentile) {
  std::vector<EventSequence> out;
  for (std::size_t k : filter_event_indices(events, percentile)) out.push_back(events[k]);
  return out;
}

void write_event(const EventSequence& event, const std::filesystem::path& path) {
  event.validate();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << kEventMagic << '\n'
      << "H " << event.height() << '\n'
      << "W " << event.width() << '\n'
      << "T " << event.length() << '\n'
      << "T_c " << event.context_len << '\n'
      << "step_minutes " << event.step_minutes << '\n'
      << "data_max " << detail::format_double(event.data_max) << '\n'
      << "seed " << event.seed << '\n'
      << "end\n";
  for (const auto& f : event.frames) detail::write_le<float>(out, f.values());
  if (!out) throw IoError("write failed for " + path.string());
}

EventSequence read_event(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::string ctx = path.string();
  std::string magic;
  if (!std::getline(in, magic) || magic != kEventMagic) {
    throw HeaderError(ctx + ": not an event file (bad magic)");
  }
  const auto fields = detail::read_header_block(in, ctx);
  const auto get_size = [&](const char* key) {
    return detail::parse_number<std::size_t>(detail::require_field(fields, key, ctx), key);
  };
  const std::size_t h = get_size("H");
  const std::size_t w = get_size("W");
  const std::size_t t = get_size("T");
  EventSequence event;
  event.context_len = get_size("T_c");
  event.step_minutes =
      detail::parse_number<int>(detail::require_field(fields, "step_minutes", ctx), "step_minutes");
  event.data_max =
      detail::parse_number<double>(detail::require_field(fields, "data_max", ctx), "data_max");
  event.seed =
      detail::parse_number<std::uint64_t>(detail::require_field(fields, "seed", ctx), "seed");

  if (h == 0 || w == 0 || t == 0) throw InvariantError(ctx + ": H, W, T must be positive");
  if (event.context_len < 1 || event.context_len >= t) {
    throw InvariantError(ctx + ": header requires 1 <= T_c < T");
  }
  if (event.step_minutes <= 0) throw InvariantError(ctx + ": step_minutes must be positive");

  event.frames.reserve(t);
  std::vector<float> buffer(h * w);
  for (std::size_t k = 0; k < t; ++k) {
    if (!detail::read_le<float>(in, buffer)) {
      throw TruncationError(ctx + ": payload truncated at frame " + std::to_string(k));
    }
    try {
      event.frames.emplace_back(h, w, buffer);
    } catch (const DomainError& e) {
      throw InvariantError(ctx + ": " + e.what());
    }
  }
  if (!detail::at_eof(in)) throw DimensionError(ctx + ": payload longer than T*H*W floats");
  return event;
}

std::vector<std::filesystem::path> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::vector<std::filesystem::path> entries;
  std::string line;
  const auto base = path.parent_path();
  while (std::getline(in, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto last = line.find_last_not_of(" \t\r");
    std::filesystem::path entry = line.substr(first, last - first + 1);
    entries.push_back(entry.is_absolute() ? entry : base / entry);
  }
  return entries;
}

void write_manifest(const std::filesystem::path& path,
                    std::span<const std::filesystem::path> entries) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open manifest " + path.string() + " for writing");
  out << "# blockcast event manifest\n";
  for (const auto& e : entries) out << e.generic_string() << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace blockcast
