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

#include "blockcast/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "blockcast/error.hpp"
#include "detail/binio.hpp"
#include "detail/rng.hpp"

namespace blockcast::cli {

namespace fs = std::filesystem;
using dynamics::Mode;

namespace {

std::uint64_t split_stream(const std::string& split) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : split) h = (h ^ c) * 0x100000001b3ULL;
  return h;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory " + dir.string());
}

void require(const fs::path& p, const std::string& stage) {
  if (!fs::exists(p)) {
    throw DependencyError("missing " + p.string() + "; run `" + stage + "` first");
  }
}

std::vector<EventSequence> load_events(const fs::path& manifest) {
  std::vector<EventSequence> out;
  for (const auto& p : read_manifest(manifest)) out.push_back(read_event(p));
  return out;
}

std::ofstream open_log(const fs::path& path, bool append, const char* header) {
  const bool fresh = !append || !fs::exists(path);
  std::ofstream out(path, fresh ? std::ios::trunc : std::ios::app);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  if (fresh) out << header << '\n';
  return out;
}

std::string fmt(double v) { return detail::format_double(v); }

}  // namespace

fs::path manifest_path(const RunConfig& config, const std::string& split) {
  return config.data_path() / (split + ".manifest");
}

fs::path tokenizer_checkpoint(const RunConfig& config) { return config.checkpoint_path() / "tokenizer.ckpt"; }

fs::path dynamics_checkpoint(const RunConfig& config, Mode mode) {
  return config.checkpoint_path() / ("dynamics_" + dynamics::to_string(mode) + ".ckpt");
}

std::uint64_t event_seed(const RunConfig& config, const std::string& split, std::size_t index) {
  return detail::derive_seed(detail::derive_seed(config.seed, split_stream(split)), index);
}

GenDataResult gen_data(const RunConfig& config, std::size_t n_events, const std::string& split) {
  config.validate();
  if (split.empty() || split.find_first_of("/\\. ") != std::string::npos) {
    throw ConfigError("split name '" + split + "' must be a plain word");
  }
  std::vector<EventSequence> events;
  for (std::size_t k = 0; k < n_events; ++k) {
    events.push_back(generate_advection_event(config.advection_params(event_seed(config, split, k)),
                                              config.event_length(), config.height, config.width,
                                              config.context_len, config.step_minutes, config.data_max));
  }
  const std::vector<std::size_t> kept =
      events.empty() ? std::vector<std::size_t>{} : filter_event_indices(events, config.filter_percentile);

  GenDataResult result;
  result.generated = n_events;
  const fs::path dir = config.data_path() / split;
  ensure_dir(dir);
  std::vector<fs::path> entries;
  for (std::size_t k : kept) {
    char name[32];
    std::snprintf(name, sizeof(name), "event_%05zu.evt", k);
    write_event(events[k], dir / name);
    result.files.push_back(dir / name);
    entries.push_back(fs::path(split) / name);
  }
  result.manifest = manifest_path(config, split);
  write_manifest(result.manifest, entries);
  return result;
}

vq::Tokenizer load_tokenizer(const RunConfig& config) {
  const fs::path p = tokenizer_checkpoint(config);
  require(p, "train-tokenizer");
  return vq::Tokenizer::from_checkpoint(tensorgrad::read_checkpoint(p));
}

dynamics::DynamicsModel load_dynamics(const RunConfig& config, Mode mode) {
  const fs::path p = dynamics_checkpoint(config, mode);
  require(p, "train-dynamics --mode " + dynamics::to_string(mode));
  return dynamics::DynamicsModel::from_checkpoint(tensorgrad::read_checkpoint(p));
}

TrainResult train_tokenizer(const RunConfig& config, bool resume, const std::string& split) {
  config.validate();
  const fs::path manifest = manifest_path(config, split);
  require(manifest, "gen-data");
  std::vector<Grid> fields;
  for (const auto& ev : load_events(manifest)) {
    for (const auto& f : ev.frames) fields.push_back(normalize(f, ev.data_max));
  }
  if (fields.empty()) throw InputError("manifest " + manifest.string() + " lists no events");

  vq::TokenizerTrainConfig tc;
  tc.steps = config.tokenizer_steps;
  tc.optimizer = config.optimizer_config();
  tc.seed = detail::derive_seed(config.seed, 0x746f6b74);
  const fs::path ckpt = tokenizer_checkpoint(config);
  std::optional<vq::TokenizerTrainer> trainer;
  if (resume && fs::exists(ckpt)) {
    const auto saved = tensorgrad::read_checkpoint(ckpt);
    auto tok = vq::Tokenizer::from_checkpoint(saved);
    auto state = tensorgrad::load_optimizer(saved, tok.params(), tc.optimizer);
    trainer.emplace(std::move(tok), std::move(state), tc);
  } else {
    trainer.emplace(vq::Tokenizer::initialize(config.tokenizer_config()), tc);
  }

  ensure_dir(config.checkpoint_path());
  ensure_dir(config.report_path());
  TrainResult result;
  result.checkpoint = ckpt;
  result.log = config.report_path() / "tokenizer_loss.csv";
  auto log = open_log(result.log, resume, "step,lr,total,recon,codebook,commit,reseeded");
  result.first_step = trainer->optimizer().step + 1;
  trainer->train(fields, config.tokenizer_steps, [&](const vq::TokenizerStepLog& s) {
    log << s.step << ',' << fmt(s.lr) << ',' << fmt(s.total) << ',' << fmt(s.recon) << ',' << fmt(s.codebook)
        << ',' << fmt(s.commit) << ',' << s.reseeded << '\n';
    result.final_loss = s.total;
  });
  result.last_step = trainer->optimizer().step;
  tensorgrad::write_checkpoint(trainer->checkpoint(), ckpt);
  return result;
}

dynamics::TokenSequence tokenize_frames(const vq::Tokenizer& tokenizer, const EventSequence& event) {
  dynamics::TokenSequence seq;
  for (auto& g : vq::tokenize_event(event, tokenizer)) seq.push_back(std::move(g.indices));
  return seq;
}

TrainResult train_dynamics(const RunConfig& config, Mode mode, bool resume, const std::string& split) {
  config.validate();
  const fs::path manifest = manifest_path(config, split);
  require(manifest, "gen-data");
  const vq::Tokenizer tokenizer = load_tokenizer(config);
  const auto dyn_config = config.dynamics_config(mode);
  if (tokenizer.config().codebook_size != dyn_config.vocab ||
      tokenizer.config().tokens_per_frame() != dyn_config.tokens_per_frame) {
    throw ConfigError("tokenizer checkpoint does not match the configured vocabulary or frame size");
  }
  std::vector<dynamics::TokenSequence> data;
  for (const auto& ev : load_events(manifest)) {
    auto seq = tokenize_frames(tokenizer, ev);
    if (seq.size() > dyn_config.max_frames) seq.resize(dyn_config.max_frames);
    data.push_back(std::move(seq));
  }
  if (data.empty()) throw InputError("manifest " + manifest.string() + " lists no events");

  dynamics::DynamicsTrainConfig tc;
  tc.steps = config.dynamics_steps;
  tc.optimizer = config.optimizer_config();
  tc.seed = detail::derive_seed(config.seed, 0x64796e74);
  const fs::path ckpt = dynamics_checkpoint(config, mode);
  std::optional<dynamics::DynamicsTrainer> trainer;
  if (resume && fs::exists(ckpt)) {
    const auto saved = tensorgrad::read_checkpoint(ckpt);
    auto model = dynamics::DynamicsModel::from_checkpoint(saved);
    auto state = tensorgrad::load_optimizer(saved, model.params(), tc.optimizer);
    trainer.emplace(std::move(model), std::move(state), tc);
  } else {
    trainer.emplace(dynamics::DynamicsModel::initialize(dyn_config), tc);
  }

  ensure_dir(config.checkpoint_path());
  ensure_dir(config.report_path());
  TrainResult result;
  result.checkpoint = ckpt;
  result.log = config.report_path() / ("dynamics_" + dynamics::to_string(mode) + "_loss.csv");
  auto log = open_log(result.log, resume, "step,lr,loss");
  result.first_step = trainer->optimizer().step + 1;
  trainer->train(data, config.dynamics_steps, [&](const dynamics::DynamicsStepLog& s) {
    log << s.step << ',' << fmt(s.lr) << ',' << fmt(s.loss) << '\n';
    result.final_loss = s.loss;
  });
  result.last_step = trainer->optimizer().step;
  tensorgrad::write_checkpoint(trainer->checkpoint(), ckpt);
  return result;
}

EventSequence forecast_event(const RunConfig& config, const vq::Tokenizer& tokenizer,
                             const dynamics::InferenceModel<double>& model, const EventSequence& event, Mode mode,
                             std::vector<vq::TokenGrid>* tokens) {
  if (event.length() < config.context_len) {
    throw InputError("event has " + std::to_string(event.length()) + " frames, context needs " +
                     std::to_string(config.context_len));
  }
  EventSequence context = event;
  context.frames.resize(config.context_len);
  std::vector<vq::TokenGrid> grids;
  for (const auto& f : context.frames) grids.push_back(tokenizer.tokenize(normalize(f, event.data_max)));
  std::vector<dynamics::TokenFrame> ctx;
  for (const auto& g : grids) ctx.push_back(g.indices);
  dynamics::PassCounter counter;
  const auto predicted = dynamics::rollout(model, ctx, config.horizon, mode, counter);

  EventSequence out;
  out.frames = context.frames;
  out.context_len = config.context_len;
  out.step_minutes = event.step_minutes;
  out.data_max = event.data_max;
  out.seed = event.seed;
  const std::size_t h_lat = tokenizer.config().latent_height(), w_lat = tokenizer.config().latent_width();
  for (const auto& frame : predicted) {
    vq::TokenGrid g{h_lat, w_lat, frame};
    out.frames.push_back(denormalize(tokenizer.detokenize(g), event.data_max));
    grids.push_back(std::move(g));
  }
  if (tokens) *tokens = std::move(grids);
  return out;
}

ForecastResult forecast(const RunConfig& config, const std::vector<fs::path>& inputs, Mode mode,
                        const fs::path& out_dir) {
  config.validate();
  const vq::Tokenizer tokenizer = load_tokenizer(config);
  const dynamics::InferenceModel<double> model(load_dynamics(config, mode));
  ensure_dir(out_dir);
  ForecastResult result;
  std::vector<fs::path> entries;
  for (const auto& in : inputs) {
    const EventSequence event = read_event(in);
    std::vector<vq::TokenGrid> tokens;
    const EventSequence pred = forecast_event(config, tokenizer, model, event, mode, &tokens);
    const fs::path evt = out_dir / (in.stem().string() + ".evt");
    write_event(pred, evt);
    vq::write_tokens(out_dir / (in.stem().string() + ".tok"), tokens, tokenizer.config().codebook_size);
    result.events.push_back(evt);
    entries.push_back(evt.filename());
  }
  result.manifest = out_dir / "forecast.manifest";
  write_manifest(result.manifest, entries);
  return result;
}

verify::MetricReport evaluate_events(const RunConfig& config, std::span<const verify::EventForecast> events,
                                     std::uint64_t seed) {
  verify::MetricReport report = verify::stratify_events_by_lead_time(events, config.thresholds, seed, "all");
  report.append(verify::stratify_by_percentile_bin(events, verify::default_percentile_bins(), config.thresholds, seed));
  const std::size_t half = config.width / 2;
  const std::vector<verify::Mask> masks{
      verify::Mask::rectangle("west", config.height, config.width, 0, config.height, 0, half),
      verify::Mask::rectangle("east", config.height, config.width, 0, config.height, half, config.width)};
  report.append(verify::catchment_report(verify::evaluate_catchments(events, masks, config.thresholds), seed));
  return report;
}

EvaluateResult evaluate(const RunConfig& config, const std::vector<fs::path>& forecast_manifests,
                        const std::vector<std::uint64_t>& seeds, const fs::path& obs_manifest) {
  config.validate();
  if (forecast_manifests.empty()) throw InputError("evaluate needs at least one forecast manifest");
  if (seeds.size() != forecast_manifests.size()) {
    throw InputError("one seed label is required per forecast manifest");
  }
  const auto obs_paths = read_manifest(obs_manifest);
  std::vector<EventSequence> observed;
  for (const auto& p : obs_paths) observed.push_back(read_event(p));
  EvaluateResult result;
  for (std::size_t s = 0; s < forecast_manifests.size(); ++s) {
    const auto pred_paths = read_manifest(forecast_manifests[s]);
    if (pred_paths.size() != obs_paths.size()) {
      throw InputError("forecast manifest " + forecast_manifests[s].string() + " has " +
                       std::to_string(pred_paths.size()) + " entries, observations have " +
                       std::to_string(obs_paths.size()));
    }
    std::vector<verify::EventForecast> events;
    for (std::size_t k = 0; k < pred_paths.size(); ++k) {
      const EventSequence pred = read_event(pred_paths[k]);
      const auto target = pred.target();
      events.push_back({observed[k], std::vector<RadarField>(target.begin(), target.end())});
    }
    result.report.append(evaluate_events(config, events, seeds[s]));
  }
  result.report.validate();
  result.summary = verify::aggregate_seeds(result.report);
  ensure_dir(config.report_path());
  const auto provenance = config.resolved();
  result.csv = config.report_path() / "metrics.csv";
  result.json = config.report_path() / "metrics.json";
  result.summary_csv = config.report_path() / "metrics_summary.csv";
  verify::write_csv(result.report, result.csv, provenance);
  verify::write_json(result.report, result.json, provenance);
  verify::write_summary_csv(result.summary, result.summary_csv, provenance);
  return result;
}

namespace {

nlohmann::json timing_json(const dynamics::TimingStats& t) {
  return {{"mean_seconds", t.mean_seconds},
          {"stddev_seconds", t.stddev_seconds ? nlohmann::json(*t.stddev_seconds) : nlohmann::json(nullptr)},
          {"stddev_undefined", !t.stddev_seconds.has_value()},
          {"repetitions", t.repetitions}};
}

}  // namespace

BenchmarkResult benchmark(const RunConfig& config, std::size_t horizon, std::size_t repetitions,
                          const std::string& split) {
  config.validate();
  if (repetitions < 1) throw ConfigError("benchmark needs at least one repetition");
  const vq::Tokenizer tokenizer = load_tokenizer(config);
  const fs::path frame_ckpt = dynamics_checkpoint(config, Mode::kFrameLevel);
  const fs::path token_ckpt = dynamics_checkpoint(config, Mode::kTokenLevel);
  if (!fs::exists(frame_ckpt) && !fs::exists(token_ckpt)) {
    throw DependencyError("no dynamics checkpoint in " + config.checkpoint_path().string() +
                          "; run `train-dynamics` first");
  }
  BenchmarkResult result;
  result.shared_weights = !fs::exists(frame_ckpt) || !fs::exists(token_ckpt);
  const auto frame_model = load_dynamics(config, fs::exists(frame_ckpt) ? Mode::kFrameLevel : Mode::kTokenLevel);
  const auto token_model = load_dynamics(config, fs::exists(token_ckpt) ? Mode::kTokenLevel : Mode::kFrameLevel);
  const dynamics::InferenceModel<float> frame_inf(frame_model), token_inf(token_model);

  const fs::path manifest = manifest_path(config, split);
  require(manifest, "gen-data");
  const auto paths = read_manifest(manifest);
  if (paths.empty()) throw InputError("manifest " + manifest.string() + " lists no events");
  EventSequence event = read_event(paths.front());
  if (event.length() < config.context_len) throw InputError("benchmark event is shorter than the context");
  event.frames.resize(config.context_len);
  const auto tokens = tokenize_frames(tokenizer, event);
  result.dynamics_only = dynamics::benchmark_decode(frame_inf, token_inf, std::span(tokens), horizon, repetitions,
                                                    config.bench_warmup);

  using clock = std::chrono::steady_clock;
  const auto end_to_end = [&](const dynamics::InferenceModel<float>& model, Mode mode) {
    const auto t0 = clock::now();
    const auto ctx = tokenize_frames(tokenizer, event);
    dynamics::PassCounter counter;
    const auto pred = dynamics::rollout(model, std::span(ctx), horizon, mode, counter);
    for (const auto& f : pred) {
      (void)tokenizer.detokenize(vq::TokenGrid{tokenizer.config().latent_height(), tokenizer.config().latent_width(), f});
    }
    return std::chrono::duration<double>(clock::now() - t0).count();
  };
  for (std::size_t w = 0; w < config.bench_warmup; ++w) {
    end_to_end(frame_inf, Mode::kFrameLevel);
    end_to_end(token_inf, Mode::kTokenLevel);
  }
  std::vector<double> ft, tt;
  for (std::size_t r = 0; r < repetitions; ++r) {
    ft.push_back(end_to_end(frame_inf, Mode::kFrameLevel));
    tt.push_back(end_to_end(token_inf, Mode::kTokenLevel));
  }
  result.frame_end_to_end = dynamics::summarize_timings(ft);
  result.token_end_to_end = dynamics::summarize_timings(tt);
  result.end_to_end_ratio = result.frame_end_to_end.mean_seconds > 0.0
                                ? result.token_end_to_end.mean_seconds / result.frame_end_to_end.mean_seconds
                                : 0.0;

  const auto& d = result.dynamics_only;
  nlohmann::json provenance = nlohmann::json::object();
  for (const auto& [k, v] : config.resolved()) provenance[k] = v;
  nlohmann::json doc = {
      {"hardware", config.hardware},
      {"horizon", d.horizon},
      {"tokens_per_frame", d.tokens_per_frame},
      {"forward_passes", {{"frame_level", d.frame_passes}, {"token_level", d.token_passes}}},
      {"pass_ratio", d.pass_ratio},
      {"shared_weights", result.shared_weights},
      {"precision", "float32"},
      {"dynamics_only",
       {{"frame_level", timing_json(d.frame_timing)},
        {"token_level", timing_json(d.token_timing)},
        {"wallclock_ratio", d.wallclock_ratio}}},
      {"end_to_end",
       {{"frame_level", timing_json(result.frame_end_to_end)},
        {"token_level", timing_json(result.token_end_to_end)},
        {"wallclock_ratio", result.end_to_end_ratio}}},
      {"published_reference",
       {{"note", "published full-scale inference seconds per batch; not reproduced locally"},
        {"NowcastingGPT_s", 7.09},
        {"DiffCast_Phydnet_s", 8.17},
        {"BlockGPT_s", 0.26}}},
      {"provenance", provenance}};
  ensure_dir(config.report_path());
  result.report = config.report_path() / "benchmark.json";
  std::ofstream out(result.report);
  if (!out) throw IoError("cannot open " + result.report.string() + " for writing");
  out << doc.dump(2) << '\n';
  if (!out) throw IoError("write failed for " + result.report.string());
  return result;
}

}  // namespace blockcast::cli
