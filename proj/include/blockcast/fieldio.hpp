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
#include <span>
#include <utility>
#include <vector>

namespace blockcast {

/// Precipitation rate grid in mm/h, row-major, stored as float32 so that the
/// on-disk container round-trips bit-exactly.
class RadarField {
 public:
  RadarField() = default;
  RadarField(std::size_t height, std::size_t width, float fill = 0.0f);
  RadarField(std::size_t height, std::size_t width, std::vector<float> values);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t size() const { return values_.size(); }

  float at(std::size_t i, std::size_t j) const { return values_[i * width_ + j]; }
  void set(std::size_t i, std::size_t j, float v);

  std::span<const float> values() const { return values_; }

  bool operator==(const RadarField&) const = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<float> values_;
};

/// Double-precision grid in the unit interval, the tokenizer's input domain.
struct Grid {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;

  double at(std::size_t i, std::size_t j) const { return values[i * width + j]; }
};

struct EventSequence {
  std::vector<RadarField> frames;
  std::size_t context_len = 1;
  int step_minutes = 30;
  // Dataset-level normalization scale recorded with the event.
  double data_max = 1.0;
  std::uint64_t seed = 0;

  std::size_t length() const { return frames.size(); }
  std::size_t height() const { return frames.empty() ? 0 : frames.front().height(); }
  std::size_t width() const { return frames.empty() ? 0 : frames.front().width(); }

  std::span<const RadarField> context() const;
  std::span<const RadarField> target() const;

  /// Throws InvariantError when frames disagree in shape or the split is invalid.
  void validate() const;

  bool operator==(const EventSequence&) const = default;
};

struct AdvectionParams {
  double velocity_u = 1.0;  // columns per frame
  double velocity_v = 0.0;  // rows per frame
  int n_blobs = 3;
  std::pair<double, double> blob_amplitude{2.0, 20.0};
  std::pair<double, double> blob_radius{2.0, 5.0};
  double growth_rate = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

// Z = 200 R^1.6 with Z the linear reflectivity factor.
double reflectivity_to_rate(double z);
double rate_to_reflectivity(double r);

Grid normalize(const RadarField& field, double data_max);
RadarField denormalize(const Grid& grid, double data_max);

/// Shifts `field` by (u, v) pixels with periodic wrap and bilinear sub-pixel
/// interpolation, then scales by `growth`.
RadarField advect(const RadarField& field, double u, double v, double growth);

EventSequence generate_advection_event(const AdvectionParams& params, std::size_t n_frames,
                                       std::size_t height, std::size_t width,
                                       std::size_t context_len = 3, int step_minutes = 30,
                                       double data_max = 50.0);

double event_mean_rate(const EventSequence& event);

/// Nearest-rank percentile: the ceil(p/100 * n)-th smallest value (rank >= 1).
double nearest_rank_percentile(std::span<const double> values, double percentile);

/// Indices of events whose mean rate strictly exceeds the given percentile of
/// all event means.
std::vector<std::size_t> filter_event_indices(std::span<const EventSequence> events,
                                              double percentile);
std::vector<EventSequence> filter_events(std::span<const EventSequence> events,
                                         double percentile);

void write_event(const EventSequence& event, const std::filesystem::path& path);
EventSequence read_event(const std::filesystem::path& path);

/// One path per line; blank lines and `#` comments are skipped. Relative
/// entries resolve against the manifest's directory.
std::vector<std::filesystem::path> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path,
                    std::span<const std::filesystem::path> entries);

}  // namespace blockcast
