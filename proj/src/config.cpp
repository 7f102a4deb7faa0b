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

#include "blockcast/config.hpp"

#include <fstream>
#include <functional>
#include <optional>
#include <set>
#include <sstream>

#include "blockcast/error.hpp"
#include "detail/binio.hpp"
#include "detail/rng.hpp"

namespace blockcast::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T number(const std::string& key, const std::string& value) {
  try {
    return detail::parse_number<T>(value, key.c_str());
  } catch (const HeaderError&) {
    throw ConfigError("config key '" + key + "': cannot parse '" + value + "'");
  }
}

std::vector<double> number_list(const std::string& key, const std::string& value) {
  std::vector<double> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(number<double>(key, trim(item)));
  return out;
}

std::string join(const std::vector<double>& v) {
  std::string s;
  for (std::size_t k = 0; k < v.size(); ++k) s += (k ? "," : "") + detail::format_double(v[k]);
  return s;
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;
using Getter = std::function<std::string(const RunConfig&)>;

struct Field {
  const char* key;
  Setter set;
  Getter get;
};

template <typename T, typename M>
Field numeric(const char* key, M RunConfig::*member) {
  return {key, [member](RunConfig& c, const std::string& k, const std::string& v) { c.*member = number<T>(k, v); },
          [member](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<T>) return detail::format_double(c.*member);
            else return std::to_string(c.*member);
          }};
}

Field path_field(const char* key, std::filesystem::path RunConfig::*member) {
  return {key, [member](RunConfig& c, const std::string&, const std::string& v) { c.*member = v; },
          [member](const RunConfig& c) { return (c.*member).string(); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      numeric<std::uint64_t>("seed", &RunConfig::seed),
      numeric<std::size_t>("height", &RunConfig::height),
      numeric<std::size_t>("width", &RunConfig::width),
      numeric<std::size_t>("patch_size", &RunConfig::patch_size),
      numeric<std::size_t>("codebook_size", &RunConfig::codebook_size),
      numeric<std::size_t>("codebook_dim", &RunConfig::codebook_dim),
      numeric<std::size_t>("latent_channels", &RunConfig::latent_channels),
      numeric<double>("beta", &RunConfig::beta),
      numeric<std::size_t>("n_layers", &RunConfig::n_layers),
      numeric<std::size_t>("n_heads", &RunConfig::n_heads),
      numeric<std::size_t>("embed_dim", &RunConfig::embed_dim),
      numeric<std::size_t>("max_frames", &RunConfig::max_frames),
      numeric<std::size_t>("mlp_ratio", &RunConfig::mlp_ratio),
      {"mode", [](RunConfig& c, const std::string&, const std::string& v) { c.mode = dynamics::parse_mode(v); },
       [](const RunConfig& c) { return dynamics::to_string(c.mode); }},
      numeric<double>("lr", &RunConfig::lr),
      numeric<std::size_t>("warmup_steps", &RunConfig::warmup_steps),
      numeric<std::size_t>("batch_size", &RunConfig::batch_size),
      numeric<std::size_t>("tokenizer_steps", &RunConfig::tokenizer_steps),
      numeric<std::size_t>("dynamics_steps", &RunConfig::dynamics_steps),
      numeric<std::size_t>("context_len", &RunConfig::context_len),
      numeric<std::size_t>("horizon", &RunConfig::horizon),
      numeric<int>("step_minutes", &RunConfig::step_minutes),
      {"thresholds",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.thresholds = number_list(k, v); },
       [](const RunConfig& c) { return join(c.thresholds); }},
      numeric<double>("data_max", &RunConfig::data_max),
      numeric<double>("filter_percentile", &RunConfig::filter_percentile),
      numeric<double>("velocity_u", &RunConfig::velocity_u),
      numeric<double>("velocity_v", &RunConfig::velocity_v),
      numeric<int>("n_blobs", &RunConfig::n_blobs),
      numeric<double>("amplitude_min", &RunConfig::amplitude_min),
      numeric<double>("amplitude_max", &RunConfig::amplitude_max),
      numeric<double>("radius_min", &RunConfig::radius_min),
      numeric<double>("radius_max", &RunConfig::radius_max),
      numeric<double>("growth_rate", &RunConfig::growth_rate),
      {"hardware", [](RunConfig& c, const std::string&, const std::string& v) { c.hardware = v; },
       [](const RunConfig& c) { return c.hardware; }},
      numeric<std::size_t>("bench_repetitions", &RunConfig::bench_repetitions),
      numeric<std::size_t>("bench_warmup", &RunConfig::bench_warmup),
      path_field("data_dir", &RunConfig::data_dir),
      path_field("checkpoint_dir", &RunConfig::checkpoint_dir),
      path_field("report_dir", &RunConfig::report_dir),
  };
  return table;
}

}  // namespace

void RunConfig::validate() const {
  try {
    tokenizer_config().validate();
  } catch (const ShapeError& e) {
    throw ConfigError(e.what());
  }
  dynamics_config(mode).validate();
  if (context_len < 1) throw ConfigError("context_len must be at least 1");
  if (context_len + horizon > max_frames) {
    throw ConfigError("context_len + horizon (" + std::to_string(context_len + horizon) +
                      ") exceeds max_frames " + std::to_string(max_frames));
  }
  if (step_minutes <= 0) throw ConfigError("step_minutes must be positive");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (warmup_steps < 1) throw ConfigError("warmup_steps must be at least 1");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (!(data_max > 0.0)) throw ConfigError("data_max must be positive");
  if (!(filter_percentile >= 0.0 && filter_percentile <= 100.0)) {
    throw ConfigError("filter_percentile must lie in [0, 100]");
  }
  if (thresholds.empty()) throw ConfigError("at least one threshold is required");
  if (bench_repetitions < 1) throw ConfigError("bench_repetitions must be at least 1");
  if (hardware.empty()) throw ConfigError("hardware descriptor must not be empty");
  try {
    advection_params(0).validate();
  } catch (const DomainError& e) {
    throw ConfigError(e.what());
  }
}

vq::TokenizerConfig RunConfig::tokenizer_config() const {
  vq::TokenizerConfig c;
  c.height = height;
  c.width = width;
  c.patch_size = patch_size;
  c.latent_channels = latent_channels;
  c.codebook_size = codebook_size;
  c.codebook_dim = codebook_dim;
  c.beta = beta;
  c.seed = detail::derive_seed(seed, 0x746f6b);
  return c;
}

dynamics::DynamicsConfig RunConfig::dynamics_config(dynamics::Mode m) const {
  dynamics::DynamicsConfig c;
  c.n_layers = n_layers;
  c.n_heads = n_heads;
  c.embed_dim = embed_dim;
  c.vocab = codebook_size;
  c.tokens_per_frame = patch_size == 0 ? 0 : tokens_per_frame();
  c.max_frames = max_frames;
  c.mlp_ratio = mlp_ratio;
  c.mode = m;
  c.seed = detail::derive_seed(seed, 0x64796e);
  return c;
}

tensorgrad::AdamConfig RunConfig::optimizer_config() const {
  tensorgrad::AdamConfig a;
  a.lr = lr;
  a.warmup_steps = warmup_steps;
  a.batch_size = batch_size;
  return a;
}

AdvectionParams RunConfig::advection_params(std::uint64_t event_seed) const {
  AdvectionParams p;
  p.velocity_u = velocity_u;
  p.velocity_v = velocity_v;
  p.n_blobs = n_blobs;
  p.blob_amplitude = {amplitude_min, amplitude_max};
  p.blob_radius = {radius_min, radius_max};
  p.growth_rate = growth_rate;
  p.seed = event_seed;
  return p;
}

std::filesystem::path RunConfig::resolve(const std::filesystem::path& p) const {
  return p.is_absolute() ? p : out_dir / p;
}

std::vector<std::pair<std::string, std::string>> RunConfig::resolved() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& f : fields()) out.emplace_back(f.key, f.get(*this));
  return out;
}

RunConfig parse_config(const std::string& text, RunConfig base) {
  std::istringstream in(text);
  std::string line;
  std::set<std::string> seen;
  std::size_t lineno = 0;
  std::optional<std::size_t> expected_tokens;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!seen.insert(key).second) throw ConfigError("config key '" + key + "' given twice");
    if (key == "tokens_per_frame") {
      // Derived from grid and patch size; accepted as a cross-check.
      expected_tokens = number<std::size_t>(key, value);
      continue;
    }
    const Field* field = nullptr;
    for (const auto& f : fields())
      if (key == f.key) field = &f;
    if (!field) throw ConfigError("unknown config key '" + key + "'");
    if (value.empty()) throw ConfigError("config key '" + key + "' has no value");
    field->set(base, key, value);
  }
  if (expected_tokens && (base.patch_size == 0 || *expected_tokens != base.tokens_per_frame())) {
    throw ConfigError("tokens_per_frame " + std::to_string(*expected_tokens) +
                      " does not equal (height/patch_size)*(width/patch_size)");
  }
  return base;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

std::string render_config(const RunConfig& config) {
  std::string out;
  for (const auto& [k, v] : config.resolved()) out += k + " = " + v + "\n";
  return out;
}

}  // namespace blockcast::cli
