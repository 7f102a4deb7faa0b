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

#include "blockcast/verification.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <tuple>

#include <json.hpp>

#include "blockcast/error.hpp"
#include "detail/binio.hpp"

namespace blockcast::verify {

namespace {

void check_shapes(std::span<const RadarField> pred, std::span<const RadarField> obs) {
  if (pred.size() != obs.size()) {
    throw ShapeError("forecast has " + std::to_string(pred.size()) + " frames, observation " +
                     std::to_string(obs.size()));
  }
  if (pred.empty()) throw ShapeError("no frames to score");
  for (std::size_t t = 0; t < pred.size(); ++t) {
    if (pred[t].height() != obs[t].height() || pred[t].width() != obs[t].width() ||
        pred[t].height() != obs.front().height() || pred[t].width() != obs.front().width()) {
      throw ShapeError("frame shapes differ at index " + std::to_string(t));
    }
  }
}

void check_mask(const Mask* mask, const RadarField& like) {
  if (mask && (mask->height != like.height() || mask->width != like.width() ||
               mask->cells.size() != like.size())) {
    throw ShapeError("mask '" + mask->name + "' does not match the field shape");
  }
}

template <typename F>
double pixel_mean(std::span<const RadarField> pred, std::span<const RadarField> obs, F&& f) {
  check_shapes(pred, obs);
  double acc = 0.0;
  std::size_t n = 0;
  for (std::size_t t = 0; t < pred.size(); ++t) {
    const auto p = pred[t].values();
    const auto o = obs[t].values();
    for (std::size_t k = 0; k < p.size(); ++k) acc += f(static_cast<double>(p[k]) - static_cast<double>(o[k]));
    n += p.size();
  }
  return acc / static_cast<double>(n);
}

std::optional<double> ratio(std::uint64_t num, std::uint64_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

double mse(std::span<const RadarField> pred, std::span<const RadarField> obs) {
  return pixel_mean(pred, obs, [](double d) { return d * d; });
}

double mae(std::span<const RadarField> pred, std::span<const RadarField> obs) {
  return pixel_mean(pred, obs, [](double d) { return std::abs(d); });
}

double pcc(std::span<const RadarField> pred, std::span<const RadarField> obs) {
  check_shapes(pred, obs);
  double sp = 0.0, so = 0.0;
  std::size_t n = 0;
  for (std::size_t t = 0; t < pred.size(); ++t) {
    for (float v : pred[t].values()) sp += v;
    for (float v : obs[t].values()) so += v;
    n += pred[t].size();
  }
  const double mp = sp / static_cast<double>(n), mo = so / static_cast<double>(n);
  double cov = 0.0, vp = 0.0, vo = 0.0;
  for (std::size_t t = 0; t < pred.size(); ++t) {
    const auto p = pred[t].values();
    const auto o = obs[t].values();
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double dp = p[k] - mp, d_o = o[k] - mo;
      cov += dp * d_o;
      vp += dp * dp;
      vo += d_o * d_o;
    }
  }
  if (vp == 0.0 || vo == 0.0) throw UndefinedError("correlation undefined: zero variance");
  return std::clamp(cov / std::sqrt(vp * vo), -1.0, 1.0);
}

// ---- Categorical ---------------------------------------------------------------

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count_if(cells.begin(), cells.end(), [](auto c) { return c != 0; }));
}

Mask Mask::full(std::string name, std::size_t height, std::size_t width) {
  return Mask{std::move(name), height, width, std::vector<std::uint8_t>(height * width, 1)};
}

Mask Mask::rectangle(std::string name, std::size_t height, std::size_t width, std::size_t r0,
                     std::size_t r1, std::size_t c0, std::size_t c1) {
  if (r0 > r1 || c0 > c1 || r1 > height || c1 > width) throw ShapeError("rectangle outside the grid");
  Mask m{std::move(name), height, width, std::vector<std::uint8_t>(height * width, 0)};
  for (std::size_t i = r0; i < r1; ++i)
    for (std::size_t j = c0; j < c1; ++j) m.cells[i * width + j] = 1;
  return m;
}

std::vector<std::uint8_t> binarize(const RadarField& field, double tau) {
  if (std::isnan(tau)) throw DomainError("threshold must not be NaN");
  std::vector<std::uint8_t> out(field.size());
  const auto v = field.values();
  for (std::size_t k = 0; k < v.size(); ++k) out[k] = static_cast<double>(v[k]) >= tau ? 1 : 0;
  return out;
}

ContingencyTable& ContingencyTable::operator+=(const ContingencyTable& other) {
  tp += other.tp;
  fp += other.fp;
  fn += other.fn;
  tn += other.tn;
  return *this;
}

ContingencyTable contingency(std::span<const RadarField> pred, std::span<const RadarField> obs,
                             double tau, const Mask* mask) {
  check_shapes(pred, obs);
  check_mask(mask, pred.front());
  ContingencyTable t;
  for (std::size_t f = 0; f < pred.size(); ++f) {
    const auto p = binarize(pred[f], tau);
    const auto o = binarize(obs[f], tau);
    for (std::size_t k = 0; k < p.size(); ++k) {
      if (mask && !mask->cells[k]) continue;
      if (p[k] && o[k]) ++t.tp;
      else if (p[k]) ++t.fp;
      else if (o[k]) ++t.fn;
      else ++t.tn;
    }
  }
  return t;
}

std::optional<double> csi(const ContingencyTable& t) { return ratio(t.tp, t.tp + t.fp + t.fn); }
std::optional<double> far(const ContingencyTable& t) { return ratio(t.fp, t.tp + t.fp); }
std::optional<double> pod(const ContingencyTable& t) { return ratio(t.tp, t.tp + t.fn); }
std::optional<double> pofd(const ContingencyTable& t) { return ratio(t.fp, t.fp + t.tn); }

// ---- ROC -------------------------------------------------------------------------

RocCurve roc_curve(std::span<const RadarField> scores, std::span<const RadarField> obs, double tau_event,
                   std::span<const double> gammas, const Mask* mask) {
  check_shapes(scores, obs);
  check_mask(mask, scores.front());
  std::vector<std::pair<double, std::uint8_t>> pairs;
  for (std::size_t f = 0; f < scores.size(); ++f) {
    const auto o = binarize(obs[f], tau_event);
    const auto s = scores[f].values();
    for (std::size_t k = 0; k < s.size(); ++k) {
      if (mask && !mask->cells[k]) continue;
      pairs.emplace_back(s[k], o[k]);
    }
  }
  std::sort(pairs.begin(), pairs.end());
  const std::size_t n = pairs.size();
  // events_before[i] = observed events among the i lowest scores.
  std::vector<std::uint64_t> events_before(n + 1, 0);
  for (std::size_t i = 0; i < n; ++i) events_before[i + 1] = events_before[i] + pairs[i].second;
  const std::uint64_t events = events_before[n];
  const std::uint64_t non_events = n - events;
  if (events == 0 || non_events == 0) {
    throw UndefinedError("ROC undefined: observations need both events and non-events");
  }
  std::vector<double> sweep(gammas.begin(), gammas.end());
  if (sweep.empty()) {
    for (const auto& p : pairs) {
      if (sweep.empty() || sweep.back() != p.first) sweep.push_back(p.first);
    }
  }
  RocCurve curve;
  curve.points.push_back({0.0, 0.0});
  std::vector<RocPoint> swept;
  for (double g : sweep) {
    if (std::isnan(g)) throw DomainError("decision threshold must not be NaN");
    const auto first = std::lower_bound(pairs.begin(), pairs.end(), g,
                                        [](const auto& p, double v) { return p.first < v; });
    const auto idx = static_cast<std::size_t>(first - pairs.begin());
    const std::uint64_t tp = events - events_before[idx];
    const std::uint64_t fp = (n - idx) - tp;
    swept.push_back({static_cast<double>(fp) / static_cast<double>(non_events),
                     static_cast<double>(tp) / static_cast<double>(events)});
  }
  std::sort(swept.begin(), swept.end(), [](const RocPoint& a, const RocPoint& b) {
    return std::tie(a.pofd, a.pod) < std::tie(b.pofd, b.pod);
  });
  curve.points.insert(curve.points.end(), swept.begin(), swept.end());
  curve.points.push_back({1.0, 1.0});
  return curve;
}

double auc(const RocCurve& curve) {
  double area = 0.0;
  for (std::size_t k = 1; k < curve.points.size(); ++k) {
    const auto& a = curve.points[k - 1];
    const auto& b = curve.points[k];
    area += (b.pofd - a.pofd) * (a.pod + b.pod) / 2.0;
  }
  return area;
}

// ---- Reports ---------------------------------------------------------------------

void MetricReport::append(const MetricReport& other) {
  rows.insert(rows.end(), other.rows.begin(), other.rows.end());
}

void MetricReport::validate() const {
  using Key = std::tuple<std::optional<double>, std::string, std::uint64_t, std::string>;
  std::map<Key, int> last_lead;
  constexpr double kSlack = 1e-12;
  for (const auto& r : rows) {
    const Key key{r.threshold, r.stratum, r.seed, r.metric};
    const auto it = last_lead.find(key);
    if (it != last_lead.end() && r.lead_min <= it->second) {
      throw InvariantError("lead times not strictly increasing for metric " + r.metric + " in " + r.stratum);
    }
    last_lead[key] = r.lead_min;
    if (!r.value) continue;
    const double v = *r.value;
    const bool unit = r.metric == "csi" || r.metric == "far" || r.metric == "pod" || r.metric == "pofd" ||
                      r.metric == "auc";
    if ((unit && (v < -kSlack || v > 1.0 + kSlack)) ||
        (r.metric == "pcc" && (v < -1.0 - kSlack || v > 1.0 + kSlack))) {
      throw InvariantError(r.metric + " value " + detail::format_double(v) + " out of range");
    }
  }
}

namespace {

constexpr const char* kCsvHeader = "lead_min,threshold,stratum,seed,metric,value,undefined";

void check_label(const std::string& s) {
  if (s.empty() || s.find_first_of(",\"\n\r") != std::string::npos) {
    throw InputError("report labels must be non-empty and free of commas, quotes and newlines: '" + s + "'");
  }
}

}  // namespace

void write_csv(const MetricReport& report, const std::filesystem::path& path, const Provenance& provenance) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  for (const auto& [k, v] : provenance) out << "# " << k << " = " << v << '\n';
  out << kCsvHeader << '\n';
  for (const auto& r : report.rows) {
    check_label(r.stratum);
    check_label(r.metric);
    out << r.lead_min << ',' << (r.threshold ? detail::format_double(*r.threshold) : "") << ',' << r.stratum
        << ',' << r.seed << ',' << r.metric << ',' << (r.value ? detail::format_double(*r.value) : "") << ','
        << (r.value ? 0 : 1) << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

MetricReport read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  const std::string ctx = path.string();
  std::string line;
  while (std::getline(in, line) && !line.empty() && line.front() == '#') {
  }
  if (line != kCsvHeader) throw HeaderError(ctx + ": unexpected CSV header");
  MetricReport report;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (cells.size() != 7) throw DimensionError(ctx + ": expected 7 columns in '" + line + "'");
    MetricRow r;
    r.lead_min = detail::parse_number<int>(cells[0], "lead_min");
    if (!cells[1].empty()) r.threshold = detail::parse_number<double>(cells[1], "threshold");
    r.stratum = cells[2];
    r.seed = detail::parse_number<std::uint64_t>(cells[3], "seed");
    r.metric = cells[4];
    const bool undefined = cells[6] == "1";
    if (!undefined && cells[6] != "0") throw InvariantError(ctx + ": undefined flag must be 0 or 1");
    if (undefined != cells[5].empty()) throw InvariantError(ctx + ": value and undefined flag disagree");
    if (!undefined) r.value = detail::parse_number<double>(cells[5], "value");
    report.rows.push_back(std::move(r));
  }
  return report;
}

std::string to_json(const MetricReport& report, const Provenance& provenance) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : report.rows) {
    nlohmann::json j;
    j["lead_min"] = r.lead_min;
    j["threshold"] = r.threshold ? nlohmann::json(*r.threshold) : nlohmann::json(nullptr);
    j["stratum"] = r.stratum;
    j["seed"] = r.seed;
    j["metric"] = r.metric;
    j["value"] = r.value ? nlohmann::json(*r.value) : nlohmann::json(nullptr);
    j["undefined"] = !r.value.has_value();
    rows.push_back(std::move(j));
  }
  nlohmann::json prov = nlohmann::json::object();
  for (const auto& [k, v] : provenance) prov[k] = v;
  return nlohmann::json{{"provenance", prov}, {"rows", rows}}.dump(2);
}

MetricReport from_json(const std::string& text) {
  MetricReport report;
  try {
    const auto doc = nlohmann::json::parse(text);
    for (const auto& j : doc.at("rows")) {
      MetricRow r;
      r.lead_min = j.at("lead_min").get<int>();
      if (!j.at("threshold").is_null()) r.threshold = j.at("threshold").get<double>();
      r.stratum = j.at("stratum").get<std::string>();
      r.seed = j.at("seed").get<std::uint64_t>();
      r.metric = j.at("metric").get<std::string>();
      if (!j.at("value").is_null()) r.value = j.at("value").get<double>();
      report.rows.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("metric report JSON: ") + e.what());
  }
  return report;
}

void write_json(const MetricReport& report, const std::filesystem::path& path, const Provenance& provenance) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << to_json(report, provenance) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

void write_summary_csv(std::span<const AggregateRow> rows, const std::filesystem::path& path,
                       const Provenance& provenance) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  for (const auto& [k, v] : provenance) out << "# " << k << " = " << v << '\n';
  out << "lead_min,threshold,stratum,metric,mean,std,n_defined,n_undefined\n";
  const auto opt = [](const std::optional<double>& v) { return v ? detail::format_double(*v) : std::string(); };
  for (const auto& r : rows) {
    out << r.lead_min << ',' << opt(r.threshold) << ',' << r.stratum << ',' << r.metric << ',' << opt(r.mean)
        << ',' << opt(r.stddev) << ',' << r.n_defined << ',' << r.n_undefined << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

// ---- Stratification --------------------------------------------------------------

namespace {

void score_lead(std::span<const RadarField> pred, std::span<const RadarField> obs, int lead,
                std::span<const double> taus, std::uint64_t seed, const std::string& stratum,
                MetricReport& out) {
  const auto push = [&](std::optional<double> tau, const char* metric, std::optional<double> v) {
    out.rows.push_back(MetricRow{lead, tau, stratum, seed, metric, v});
  };
  push(std::nullopt, "mse", mse(pred, obs));
  push(std::nullopt, "mae", mae(pred, obs));
  std::optional<double> r;
  try {
    r = pcc(pred, obs);
  } catch (const UndefinedError&) {
  }
  push(std::nullopt, "pcc", r);
  for (double tau : taus) {
    const auto t = contingency(pred, obs, tau);
    push(tau, "csi", csi(t));
    push(tau, "far", far(t));
    push(tau, "pod", pod(t));
    push(tau, "pofd", pofd(t));
    std::optional<double> a;
    try {
      a = auc(roc_curve(pred, obs, tau));
    } catch (const UndefinedError&) {
    }
    push(tau, "auc", a);
  }
}

}  // namespace

MetricReport stratify_by_lead_time(std::span<const RadarField> pred, std::span<const RadarField> obs,
                                   int step_minutes, std::span<const double> taus, std::uint64_t seed,
                                   const std::string& stratum) {
  check_shapes(pred, obs);
  if (step_minutes <= 0) throw ConfigError("step_minutes must be positive");
  MetricReport report;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    score_lead(pred.subspan(k, 1), obs.subspan(k, 1), static_cast<int>(k + 1) * step_minutes, taus, seed,
               stratum, report);
  }
  // Group rows per series so that leads read in order within each metric.
  std::stable_sort(report.rows.begin(), report.rows.end(), [](const MetricRow& a, const MetricRow& b) {
    return std::tie(a.threshold, a.metric) < std::tie(b.threshold, b.metric);
  });
  return report;
}

std::string PercentileBin::label() const {
  return "p" + detail::format_double(lo) + "-" + detail::format_double(hi);
}

std::vector<PercentileBin> default_percentile_bins() {
  return {{0, 20}, {20, 40}, {40, 60}, {60, 80}, {80, 95}};
}

void validate_bins(std::span<const PercentileBin> bins) {
  for (std::size_t k = 0; k < bins.size(); ++k) {
    const auto& b = bins[k];
    if (!(b.lo >= 0.0 && b.lo < b.hi && b.hi <= 100.0)) {
      throw ConfigError("percentile bin " + b.label() + " must satisfy 0 <= lo < hi <= 100");
    }
    if (k > 0 && b.lo < bins[k - 1].hi) throw ConfigError("percentile bins must be ordered and disjoint");
  }
}

std::vector<double> percentile_ranks(std::span<const double> values) {
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> out;
  out.reserve(values.size());
  for (double v : values) {
    const auto below = std::lower_bound(sorted.begin(), sorted.end(), v) - sorted.begin();
    out.push_back(100.0 * static_cast<double>(below) / static_cast<double>(values.size()));
  }
  return out;
}

std::vector<std::vector<std::size_t>> assign_percentile_bins(std::span<const double> event_means,
                                                             std::span<const PercentileBin> bins) {
  validate_bins(bins);
  const auto ranks = percentile_ranks(event_means);
  std::vector<std::vector<std::size_t>> out(bins.size());
  for (std::size_t e = 0; e < ranks.size(); ++e) {
    for (std::size_t b = 0; b < bins.size(); ++b) {
      if (ranks[e] >= bins[b].lo && ranks[e] < bins[b].hi) {
        out[b].push_back(e);
        break;
      }
    }
  }
  return out;
}

namespace {

void check_events(std::span<const EventForecast> events) {
  for (const auto& e : events) {
    if (e.forecast.size() != e.observed.target().size()) {
      throw ShapeError("forecast horizon differs from the observed target length");
    }
    if (e.forecast.size() != events.front().forecast.size() ||
        e.observed.step_minutes != events.front().observed.step_minutes) {
      throw ShapeError("events in a pooled evaluation must share horizon and step");
    }
  }
}

// Frame k of each listed event, forecast and observed.
std::pair<std::vector<RadarField>, std::vector<RadarField>> pool_lead(std::span<const EventForecast> events,
                                                                      std::span<const std::size_t> members,
                                                                      std::size_t k) {
  std::pair<std::vector<RadarField>, std::vector<RadarField>> out;
  for (std::size_t e : members) {
    out.first.push_back(events[e].forecast[k]);
    out.second.push_back(events[e].observed.target()[k]);
  }
  return out;
}

MetricReport pooled_by_lead(std::span<const EventForecast> events, std::span<const std::size_t> members,
                            std::span<const double> taus, std::uint64_t seed, const std::string& stratum) {
  MetricReport rows;
  const std::size_t horizon = events.front().forecast.size();
  const int step = events.front().observed.step_minutes;
  for (std::size_t k = 0; k < horizon; ++k) {
    const auto [pred, obs] = pool_lead(events, members, k);
    score_lead(pred, obs, static_cast<int>(k + 1) * step, taus, seed, stratum, rows);
  }
  std::stable_sort(rows.rows.begin(), rows.rows.end(), [](const MetricRow& x, const MetricRow& y) {
    return std::tie(x.threshold, x.metric) < std::tie(y.threshold, y.metric);
  });
  return rows;
}

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

}  // namespace

MetricReport stratify_events_by_lead_time(std::span<const EventForecast> events, std::span<const double> taus,
                                          std::uint64_t seed, const std::string& stratum) {
  if (events.empty()) throw InputError("no events to evaluate");
  check_events(events);
  return pooled_by_lead(events, all_indices(events.size()), taus, seed, stratum);
}

MetricReport stratify_by_percentile_bin(std::span<const EventForecast> events,
                                        std::span<const PercentileBin> bins, std::span<const double> taus,
                                        std::uint64_t seed) {
  check_events(events);
  std::vector<double> means;
  for (const auto& e : events) means.push_back(event_mean_rate(e.observed));
  const auto members = assign_percentile_bins(means, bins);
  MetricReport report;
  for (std::size_t b = 0; b < bins.size(); ++b) {
    const std::string label = bins[b].label();
    report.rows.push_back(MetricRow{0, std::nullopt, label, seed, "n_events",
                                    static_cast<double>(members[b].size())});
    if (!members[b].empty()) report.append(pooled_by_lead(events, members[b], taus, seed, label));
  }
  return report;
}

namespace {

// lead_frames[k] holds the (forecast, observed) frames scored at lead k.
std::vector<CatchmentCell> catchments_by_lead(
    const std::vector<std::pair<std::vector<RadarField>, std::vector<RadarField>>>& lead_frames,
    std::span<const Mask> masks, std::span<const double> taus, int step_minutes) {
  if (step_minutes <= 0) throw ConfigError("step_minutes must be positive");
  for (const auto& [p, o] : lead_frames) {
    check_shapes(p, o);
    for (const auto& m : masks) check_mask(&m, p.front());
  }
  std::vector<CatchmentCell> cells;
  for (const auto& m : masks) {
    for (double tau : taus) {
      for (std::size_t k = 0; k < lead_frames.size(); ++k) {
        const auto& [p, o] = lead_frames[k];
        CatchmentCell c;
        c.region = m.name;
        c.lead_min = static_cast<int>(k + 1) * step_minutes;
        c.tau = tau;
        c.table = contingency(p, o, tau, &m);
        if (m.count() > 0) {
          try {
            c.auc = auc(roc_curve(p, o, tau, {}, &m));
          } catch (const UndefinedError&) {
          }
        }
        cells.push_back(std::move(c));
      }
    }
  }
  return cells;
}

}  // namespace

std::vector<CatchmentCell> evaluate_catchments(std::span<const RadarField> pred, std::span<const RadarField> obs,
                                               std::span<const Mask> masks, std::span<const double> taus,
                                               int step_minutes) {
  check_shapes(pred, obs);
  std::vector<std::pair<std::vector<RadarField>, std::vector<RadarField>>> leads;
  for (std::size_t k = 0; k < pred.size(); ++k) leads.push_back({{pred[k]}, {obs[k]}});
  return catchments_by_lead(leads, masks, taus, step_minutes);
}

std::vector<CatchmentCell> evaluate_catchments(std::span<const EventForecast> events, std::span<const Mask> masks,
                                               std::span<const double> taus) {
  if (events.empty()) throw InputError("no events to evaluate");
  check_events(events);
  const auto members = all_indices(events.size());
  std::vector<std::pair<std::vector<RadarField>, std::vector<RadarField>>> leads;
  for (std::size_t k = 0; k < events.front().forecast.size(); ++k) leads.push_back(pool_lead(events, members, k));
  return catchments_by_lead(leads, masks, taus, events.front().observed.step_minutes);
}

MetricReport catchment_report(std::span<const CatchmentCell> cells, std::uint64_t seed) {
  MetricReport report;
  for (const char* metric : {"pixels", "csi", "far", "pod", "pofd", "auc"}) {
    for (const auto& c : cells) {
      std::optional<double> v;
      const std::string m = metric;
      if (m == "pixels") v = static_cast<double>(c.table.total());
      else if (m == "csi") v = csi(c.table);
      else if (m == "far") v = far(c.table);
      else if (m == "pod") v = pod(c.table);
      else if (m == "pofd") v = pofd(c.table);
      else v = c.auc;
      report.rows.push_back(MetricRow{c.lead_min, c.tau, c.region, seed, m, v});
    }
  }
  return report;
}

std::vector<AggregateRow> aggregate_seeds(const MetricReport& report) {
  using Key = std::tuple<int, std::optional<double>, std::string, std::string>;
  std::map<Key, std::size_t> index;
  std::vector<AggregateRow> out;
  std::vector<std::vector<double>> values;
  for (const auto& r : report.rows) {
    const Key key{r.lead_min, r.threshold, r.stratum, r.metric};
    auto [it, fresh] = index.emplace(key, out.size());
    if (fresh) {
      out.push_back(AggregateRow{r.lead_min, r.threshold, r.stratum, r.metric, {}, {}, 0, 0});
      values.emplace_back();
    }
    if (r.value) values[it->second].push_back(*r.value);
    else ++out[it->second].n_undefined;
  }
  for (std::size_t k = 0; k < out.size(); ++k) {
    const auto& v = values[k];
    out[k].n_defined = v.size();
    if (v.empty()) continue;
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    out[k].mean = mean;
    if (v.size() > 1) {
      double ss = 0.0;
      for (double x : v) ss += (x - mean) * (x - mean);
      out[k].stddev = std::sqrt(ss / static_cast<double>(v.size() - 1));
    }
  }
  return out;
}

}  // namespace blockcast::verify
