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

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "blockcast/fieldio.hpp"

namespace blockcast::verify {

// ---- Continuous scores -------------------------------------------------------
// All scores pool every pixel of every frame; shapes must match exactly.

double mse(std::span<const RadarField> pred, std::span<const RadarField> obs);
double mae(std::span<const RadarField> pred, std::span<const RadarField> obs);
/// Throws UndefinedError when either side has zero variance.
double pcc(std::span<const RadarField> pred, std::span<const RadarField> obs);

// ---- Categorical scores ------------------------------------------------------

/// Boolean raster over an H x W grid, row-major.
struct Mask {
  std::string name;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> cells;

  std::size_t count() const;
  static Mask full(std::string name, std::size_t height, std::size_t width);
  /// Rows [r0, r1) x columns [c0, c1).
  static Mask rectangle(std::string name, std::size_t height, std::size_t width, std::size_t r0,
                        std::size_t r1, std::size_t c0, std::size_t c1);
};

/// 1 where value >= tau.
std::vector<std::uint8_t> binarize(const RadarField& field, double tau);

struct ContingencyTable {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t tn = 0;

  std::uint64_t total() const { return tp + fp + fn + tn; }
  ContingencyTable& operator+=(const ContingencyTable& other);
  bool operator==(const ContingencyTable&) const = default;
};

/// Counts over all frames, optionally restricted to the cells of `mask`.
ContingencyTable contingency(std::span<const RadarField> pred, std::span<const RadarField> obs,
                             double tau, const Mask* mask = nullptr);

// Empty optional marks a zero denominator.
std::optional<double> csi(const ContingencyTable& t);
std::optional<double> far(const ContingencyTable& t);
std::optional<double> pod(const ContingencyTable& t);
std::optional<double> pofd(const ContingencyTable& t);

// ---- ROC -----------------------------------------------------------------------

struct RocPoint {
  double pofd = 0.0;
  double pod = 0.0;
  bool operator==(const RocPoint&) const = default;
};

/// Points ordered by POFD, anchored at (0,0) and (1,1).
struct RocCurve {
  std::vector<RocPoint> points;
};

/// Sweeps decision thresholds over per-pixel scores (score >= gamma is a
/// forecast event) against observations binarized at tau_event. With no
/// gammas the distinct score values are used. Throws UndefinedError when the
/// observations lack either events or non-events.
RocCurve roc_curve(std::span<const RadarField> scores, std::span<const RadarField> obs,
                   double tau_event, std::span<const double> gammas = {},
                   const Mask* mask = nullptr);

/// Trapezoidal area under POD(POFD).
double auc(const RocCurve& curve);

// ---- Reports -------------------------------------------------------------------

struct MetricRow {
  int lead_min = 0;
  std::optional<double> threshold;  // empty for continuous scores
  std::string stratum = "all";
  std::uint64_t seed = 0;
  std::string metric;
  std::optional<double> value;  // empty when undefined

  bool operator==(const MetricRow&) const = default;
};

struct MetricReport {
  std::vector<MetricRow> rows;

  void append(const MetricReport& other);
  /// Lead times strictly increase within each series and bounded scores
  /// stay in range; throws InvariantError otherwise.
  void validate() const;
  bool operator==(const MetricReport&) const = default;
};

/// Key/value pairs written ahead of the rows (as `# key = value` lines in CSV,
/// a "provenance" object in JSON) and ignored when reading.
using Provenance = std::vector<std::pair<std::string, std::string>>;

void write_csv(const MetricReport& report, const std::filesystem::path& path,
               const Provenance& provenance = {});
MetricReport read_csv(const std::filesystem::path& path);
std::string to_json(const MetricReport& report, const Provenance& provenance = {});
MetricReport from_json(const std::string& text);
void write_json(const MetricReport& report, const std::filesystem::path& path,
                const Provenance& provenance = {});


// ---- Stratification ------------------------------------------------------------

/// Scores each forecast frame on its own; frame k sits at lead (k+1)*step.
/// Continuous rows: mse, mae, pcc. Per threshold: csi, far, pod, pofd, auc.
MetricReport stratify_by_lead_time(std::span<const RadarField> pred, std::span<const RadarField> obs,
                                   int step_minutes, std::span<const double> taus,
                                   std::uint64_t seed = 0, const std::string& stratum = "all");

/// Half-open percentile interval [lo, hi).
struct PercentileBin {
  double lo = 0.0;
  double hi = 0.0;
  std::string label() const;
};

/// 0-20, 20-40, 40-60, 60-80 and 80-95.
std::vector<PercentileBin> default_percentile_bins();
void validate_bins(std::span<const PercentileBin> bins);

/// 100 * (number of strictly smaller values) / n for each value: the lowest
/// percentile whose nearest-rank value equals it.
std::vector<double> percentile_ranks(std::span<const double> values);

/// Event indices per bin; events outside every bin are dropped.
std::vector<std::vector<std::size_t>> assign_percentile_bins(std::span<const double> event_means,
                                                             std::span<const PercentileBin> bins);

struct EventForecast {
  EventSequence observed;              // full event, context and target
  std::vector<RadarField> forecast;    // one frame per target frame
};

/// Lead-time metrics with frame k of every event pooled at lead (k+1)*step.
MetricReport stratify_events_by_lead_time(std::span<const EventForecast> events,
                                          std::span<const double> taus, std::uint64_t seed = 0,
                                          const std::string& stratum = "all");

/// Per-bin lead-time metrics pooled over the events of each bin, binned by
/// the percentile of each observed event's mean rate. Every bin also gets an
/// n_events row (lead 0); empty bins carry only that row.
MetricReport stratify_by_percentile_bin(std::span<const EventForecast> events,
                                        std::span<const PercentileBin> bins,
                                        std::span<const double> taus, std::uint64_t seed = 0);

struct CatchmentCell {
  std::string region;
  int lead_min = 0;
  double tau = 0.0;
  ContingencyTable table;
  std::optional<double> auc;  // empty for an empty mask or a one-class region
};

/// Contingency and ROC AUC per region, threshold and lead.
std::vector<CatchmentCell> evaluate_catchments(std::span<const RadarField> pred,
                                               std::span<const RadarField> obs,
                                               std::span<const Mask> masks,
                                               std::span<const double> taus, int step_minutes);
/// As above with frame k of every event pooled per lead.
std::vector<CatchmentCell> evaluate_catchments(std::span<const EventForecast> events,
                                               std::span<const Mask> masks,
                                               std::span<const double> taus);
MetricReport catchment_report(std::span<const CatchmentCell> cells, std::uint64_t seed = 0);

// ---- Seed aggregation ----------------------------------------------------------

struct AggregateRow {
  int lead_min = 0;
  std::optional<double> threshold;
  std::string stratum;
  std::string metric;
  std::optional<double> mean;
  std::optional<double> stddev;  // sample deviation; needs two defined values
  std::size_t n_defined = 0;
  std::size_t n_undefined = 0;
};

/// Groups rows by everything but the seed.
std::vector<AggregateRow> aggregate_seeds(const MetricReport& report);

/// Seed summary as CSV: lead_min, threshold, stratum, metric, mean, std,
/// n_defined, n_undefined (blank mean/std when undefined).
void write_summary_csv(std::span<const AggregateRow> rows, const std::filesystem::path& path,
                       const Provenance& provenance = {});

}  // namespace blockcast::verify
