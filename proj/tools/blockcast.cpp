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

// blockcast: command-line driver for the nowcasting pipeline.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "blockcast/config.hpp"
#include "blockcast/error.hpp"
#include "blockcast/pipeline.hpp"

namespace fs = std::filesystem;
using namespace blockcast;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfig = 2, kDependency = 3, kIo = 4 };

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> overrides;
};

cli::RunConfig build_config(const Globals& g) {
  cli::RunConfig config;
  if (!g.config_path.empty()) config = cli::load_config(g.config_path);
  std::string text;
  for (const auto& kv : g.overrides) text += kv + '\n';
  if (!text.empty()) config = cli::parse_config(text, config);
  if (g.seed) config.seed = *g.seed;
  if (!g.out.empty()) config.out_dir = g.out;
  config.validate();
  return config;
}

std::string fmt_timing(const dynamics::TimingStats& t) {
  std::ostringstream os;
  os << t.mean_seconds << " s";
  if (t.stddev_seconds) {
    os << " +- " << *t.stddev_seconds;
  } else {
    os << " +- undefined";
  }
  return os.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Frame-level autoregressive precipitation nowcasting pipeline"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config_path, "Run config file (key = value)");
  app.add_option("--seed", g.seed, "Master seed; overrides the config");
  app.add_option("--out", g.out, "Output root for data, checkpoints and reports");
  app.add_option("--set", g.overrides, "Override a config key, as key=value")->allow_extra_args(false);

  std::size_t n_events = 100;
  std::string split = "train";
  auto* gen = app.add_subcommand("gen-data", "Generate synthetic advection events");
  gen->add_option("--n-events", n_events, "Events to generate before filtering")->capture_default_str();
  gen->add_option("--split", split, "Dataset split name")->capture_default_str();

  bool resume = false;
  std::optional<std::size_t> steps;
  auto* ttok = app.add_subcommand("train-tokenizer", "Train the VQ tokenizer");
  ttok->add_option("--split", split)->capture_default_str();
  ttok->add_option("--steps", steps, "Optimizer steps for this invocation");
  ttok->add_flag("--resume", resume, "Continue from the existing checkpoint");

  std::string mode_name;
  auto* tdyn = app.add_subcommand("train-dynamics", "Train the dynamics transformer");
  tdyn->add_option("--mode", mode_name, "frame_level or token_level");
  tdyn->add_option("--split", split)->capture_default_str();
  tdyn->add_option("--steps", steps, "Optimizer steps for this invocation");
  tdyn->add_flag("--resume", resume, "Continue from the existing checkpoint");

  std::vector<std::string> event_paths;
  std::string manifest, forecast_dir;
  auto* fc = app.add_subcommand("forecast", "Roll out forecasts for observed events");
  fc->add_option("--mode", mode_name, "frame_level or token_level");
  fc->add_option("--event", event_paths, "Event file(s) to forecast");
  fc->add_option("--manifest", manifest, "Manifest of events to forecast");
  fc->add_option("--output-dir", forecast_dir, "Directory for forecasts (default <reports>/forecast_<mode>)");

  std::vector<std::string> forecasts;
  std::vector<std::uint64_t> seeds;
  std::string obs;
  auto* ev = app.add_subcommand("evaluate", "Score forecasts against observations");
  ev->add_option("--forecasts", forecasts, "Forecast manifest per seed run")->required();
  ev->add_option("--seeds", seeds, "Seed label per forecast manifest (default 0, 1, ...)");
  ev->add_option("--obs", obs, "Observation manifest")->required();

  std::optional<std::size_t> horizon, reps;
  auto* bench = app.add_subcommand("benchmark", "Time frame-level against token-level decoding");
  bench->add_option("--horizon", horizon, "Frames to roll out (default: config horizon)");
  bench->add_option("--reps", reps, "Timed repetitions (default: bench_repetitions)");
  bench->add_option("--split", split)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    cli::RunConfig config = build_config(g);
    const dynamics::Mode mode = mode_name.empty() ? config.mode : dynamics::parse_mode(mode_name);

    if (gen->parsed()) {
      const auto r = cli::gen_data(config, n_events, split);
      std::cout << "generated " << r.generated << " events, kept " << r.files.size() << "\n"
                << "manifest " << r.manifest.string() << "\n";
    } else if (ttok->parsed()) {
      if (steps) config.tokenizer_steps = *steps;
      const auto r = cli::train_tokenizer(config, resume, split);
      std::cout << "steps " << r.first_step << ".." << r.last_step << " final loss " << r.final_loss << "\n"
                << "checkpoint " << r.checkpoint.string() << "\nlog " << r.log.string() << "\n";
    } else if (tdyn->parsed()) {
      if (steps) config.dynamics_steps = *steps;
      const auto r = cli::train_dynamics(config, mode, resume, split);
      std::cout << "steps " << r.first_step << ".." << r.last_step << " final loss " << r.final_loss << "\n"
                << "checkpoint " << r.checkpoint.string() << "\nlog " << r.log.string() << "\n";
    } else if (fc->parsed()) {
      std::vector<fs::path> inputs(event_paths.begin(), event_paths.end());
      if (!manifest.empty()) {
        for (const auto& p : read_manifest(manifest)) inputs.push_back(p);
      }
      if (inputs.empty()) throw UsageError("forecast needs --event or --manifest");
      const fs::path dir = forecast_dir.empty()
                               ? config.report_path() / ("forecast_" + dynamics::to_string(mode))
                               : fs::path(forecast_dir);
      const auto r = cli::forecast(config, inputs, mode, dir);
      std::cout << "forecast " << r.events.size() << " events\nmanifest " << r.manifest.string() << "\n";
    } else if (ev->parsed()) {
      if (seeds.empty()) {
        for (std::size_t k = 0; k < forecasts.size(); ++k) seeds.push_back(k);
      }
      const auto r = cli::evaluate(config, std::vector<fs::path>(forecasts.begin(), forecasts.end()), seeds, obs);
      std::cout << r.report.rows.size() << " metric rows\n"
                << "csv " << r.csv.string() << "\njson " << r.json.string() << "\nsummary "
                << r.summary_csv.string() << "\n";
    } else if (bench->parsed()) {
      const auto r = cli::benchmark(config, horizon.value_or(config.horizon),
                                    reps.value_or(config.bench_repetitions), split);
      const auto& d = r.dynamics_only;
      std::cout << "forward passes: frame " << d.frame_passes << ", token " << d.token_passes << " (ratio "
                << d.pass_ratio << ")\n"
                << "dynamics frame " << fmt_timing(d.frame_timing) << ", token " << fmt_timing(d.token_timing)
                << ", ratio " << d.wallclock_ratio << "\n"
                << "end-to-end frame " << fmt_timing(r.frame_end_to_end) << ", token "
                << fmt_timing(r.token_end_to_end) << ", ratio " << r.end_to_end_ratio << "\n";
      if (r.shared_weights) std::cout << "note: both modes share one checkpoint\n";
      std::cout << "report " << r.report.string() << "\n";
    }
    return kOk;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kConfig;
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kConfig;
  } catch (const HorizonError& e) {
    std::cerr << "horizon error: " << e.what() << "\n";
    return kConfig;
  } catch (const DependencyError& e) {
    std::cerr << "dependency error: " << e.what() << "\n";
    return kDependency;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
}
