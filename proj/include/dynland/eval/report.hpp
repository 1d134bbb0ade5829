/*
 * Copyright 2026 The dynland Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <charconv>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dynland/data/io.hpp"
#include "dynland/eval/protocol.hpp"
#include "dynland/meta/config.hpp"
#include "dynland/model/config.hpp"

namespace dynland {

// --- episodes.csv -----------------------------------------------------------------------

inline constexpr const char* kEpisodesHeader = "method,benchmark,category,shot,episode_seed,ne";

inline std::string encode_episodes_csv(const std::vector<EpisodeResult>& rs) {
  std::string out = std::string(kEpisodesHeader) + "\n";
  for (const auto& r : rs) {
    out += r.method + "," + std::to_string(r.benchmark) + "," + std::to_string(r.category_id) + "," +
           std::to_string(r.shot) + "," + std::to_string(r.episode_seed) + "," + format_exact(r.ne) + "\n";
  }
  return out;
}

namespace detail {

template <class T>
T parse_number(const std::string& s, const std::string& what) {
  T v{};
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw DataError("bad " + what + " '" + s + "'");
  return v;
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

}  // namespace detail

/// Parses episodes.csv; per-landmark components are not stored and come back empty.
inline std::vector<EpisodeResult> decode_episodes_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kEpisodesHeader) throw DataError("episodes.csv: unexpected header");
  std::vector<EpisodeResult> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = detail::split(line, ',');
    if (f.size() != 6) throw DataError("episodes.csv: expected 6 fields in '" + line + "'");
    EpisodeResult r;
    r.method = f[0];
    r.benchmark = detail::parse_number<int>(f[1], "benchmark");
    r.category_id = detail::parse_number<int>(f[2], "category");
    r.shot = detail::parse_number<std::size_t>(f[3], "shot");
    r.episode_seed = detail::parse_number<std::uint64_t>(f[4], "episode seed");
    r.ne = std::stod(f[5]);
    out.push_back(std::move(r));
  }
  return out;
}

// --- summary.json ------------------------------------------------------------------------

inline nlohmann::ordered_json summary_to_json(const Summary& s) {
  nlohmann::ordered_json j;
  j["method"] = s.method;
  j["benchmark"] = s.benchmark;
  if (s.shot == 0) {
    j["shot"] = "mean";
  } else {
    j["shot"] = s.shot;
  }
  j["mean"] = s.mean;
  j["ci95"] = s.ci95;
  j["n"] = s.n;
  return j;
}

inline std::string encode_summary_json(const std::vector<Summary>& ss) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& s : ss) arr.push_back(summary_to_json(s));
  return arr.dump(2) + "\n";
}

inline std::vector<Summary> decode_summary_json(const std::string& text) {
  std::vector<Summary> out;
  try {
    for (const auto& j : nlohmann::json::parse(text)) {
      Summary s;
      s.method = j.at("method").get<std::string>();
      s.benchmark = j.at("benchmark").get<int>();
      s.shot = j.at("shot").is_string() ? 0 : j.at("shot").get<std::size_t>();
      s.mean = j.at("mean").get<double>();
      s.ci95 = j.at("ci95").get<double>();
      s.n = j.at("n").get<std::size_t>();
      out.push_back(s);
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("summary.json: ") + e.what());
  }
  return out;
}

inline bool operator==(const Summary& a, const Summary& b) {
  return a.method == b.method && a.benchmark == b.benchmark && a.shot == b.shot && a.mean == b.mean &&
         a.ci95 == b.ci95 && a.n == b.n;
}

// --- similarity CSV ----------------------------------------------------------------------

inline std::string encode_similarity_csv(const std::vector<SimilarityRow>& rows) {
  std::string out = "method,category,same_landmark,different_landmark,episodes\n";
  for (const auto& r : rows) {
    out += r.method + "," + std::to_string(r.category_id) + "," + format_exact(r.same_landmark) + "," +
           format_exact(r.different_landmark) + "," + std::to_string(r.episodes) + "\n";
  }
  return out;
}

// --- heatmaps ----------------------------------------------------------------------------

/// One PGM per channel of an Nc x h x w heatmap, each scaled so its maximum is 255.
/// Files are <dir>/<landmark>.pgm.
inline void heatmap_export(const Tensor& heatmaps, const std::filesystem::path& dir) {
  if (heatmaps.rank() != 3) throw ShapeError("heatmap_export: expected Nc x h x w");
  const std::size_t nc = heatmaps.dim(0), h = heatmaps.dim(1), w = heatmaps.dim(2);
  for (std::size_t n = 0; n < nc; ++n) {
    std::vector<double> v(heatmaps.data().begin() + static_cast<std::ptrdiff_t>(n * h * w),
                          heatmaps.data().begin() + static_cast<std::ptrdiff_t>((n + 1) * h * w));
    const double mx = *std::max_element(v.begin(), v.end());
    for (auto& x : v) x = mx > 0 ? x / mx : 0.0;
    write_file(dir / (std::to_string(n) + ".pgm"), encode_pgm(v, h, w));
  }
}

// --- config file -------------------------------------------------------------------------

/// Everything a config file can set.
struct RunConfig {
  ModelConfig model;
  MetaConfig meta;
  RenderConfig render;
  EvalConfig eval;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::size_t> parse_size_list(const std::string& v, const std::string& key) {
  std::vector<std::size_t> out;
  for (const auto& f : split(v, ',')) out.push_back(parse_number<std::size_t>(trim(f), key));
  return out;
}

}  // namespace detail

/// Applies one `key = value` setting; unknown keys are usage errors.
inline void apply_setting(RunConfig& c, const std::string& key, const std::string& value) {
  auto num = [&](auto& field) {
    using T = std::remove_reference_t<decltype(field)>;
    try {
      if constexpr (std::is_same_v<T, double>) {
        std::size_t used = 0;
        field = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
      } else {
        field = detail::parse_number<T>(value, key);
      }
    } catch (const std::exception&) {
      throw UsageError("config: bad value '" + value + "' for " + key);
    }
  };
  MetaConfig& m = c.meta;
  ModelConfig& md = c.model;
  RenderConfig& r = c.render;
  if (key == "beta1") num(m.beta1);
  else if (key == "beta2") num(m.beta2);
  else if (key == "gamma") num(m.gamma);
  else if (key == "inner_steps") num(m.inner_steps);
  else if (key == "n_tasks") num(m.n_tasks);
  else if (key == "decay_at") num(m.decay_at);
  else if (key == "order") m.order = parse_order(value);
  else if (key == "labelmap_source_train") m.labelmap_source_train = parse_labelmap_source(value);
  else if (key == "init") m.init = parse_theta_init(value);
  else if (key == "train_shots") num(m.train_shots);
  else if (key == "train_queries") num(m.train_queries);
  else if (key == "base_steps") num(m.base_steps);
  else if (key == "base_batch") num(m.base_batch);
  else if (key == "base_lr") num(m.base_lr);
  else if (key == "base_loss_threshold") num(m.base_loss_threshold);
  else if (key == "ft_steps") num(m.ft_steps);
  else if (key == "ft_lr") num(m.ft_lr);
  else if (key == "maml_tasks") num(m.maml_tasks);
  else if (key == "maml_inner_lr") num(m.maml_inner_lr);
  else if (key == "maml_outer_lr") num(m.maml_outer_lr);
  else if (key == "maml_inner_steps") num(m.maml_inner_steps);
  else if (key == "H") { num(md.H); r.H = md.H; }
  else if (key == "W") { num(md.W); r.W = md.W; }
  else if (key == "h") { num(md.h); r.h = md.h; }
  else if (key == "w") { num(md.w); r.w = md.w; }
  else if (key == "D") num(md.D);
  else if (key == "hidden") num(md.hidden);
  else if (key == "channels") md.channels = detail::parse_size_list(value, key);
  else if (key == "pool_after") md.pool_after = detail::parse_size_list(value, key);
  else if (key == "max_rotation_deg") num(r.max_rotation_deg);
  else if (key == "min_scale") num(r.min_scale);
  else if (key == "max_scale") num(r.max_scale);
  else if (key == "max_translation") num(r.max_translation);
  else if (key == "noise_sigma") num(r.noise_sigma);
  else if (key == "max_retries") num(r.max_retries);
  else if (key == "episodes_per_category") num(c.eval.episodes_per_category);
  else if (key == "queries") num(c.eval.queries);
  else if (key == "shots") c.eval.shots = detail::parse_size_list(value, key);
  else throw UsageError("config: unknown key '" + key + "'");
}

/// Line-oriented `key = value` text; `#` starts a comment.
inline void apply_config_text(RunConfig& c, const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError("config line " + std::to_string(lineno) + ": expected key = value");
    apply_setting(c, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
  }
}

inline void validate(const RunConfig& c) {
  c.model.validate();
  c.meta.validate();
  c.render.validate();
  if (c.render.H != c.model.H || c.render.W != c.model.W || c.render.h != c.model.h || c.render.w != c.model.w) {
    throw UsageError("config: render and model geometry differ");
  }
  if (c.eval.episodes_per_category < 1 || c.eval.queries < 1 || c.eval.shots.empty()) {
    throw UsageError("config: episodes_per_category, queries and shots must be non-empty");
  }
  for (auto s : c.eval.shots)
    if (s < 1) throw UsageError("config: shots must be >= 1");
}

}  // namespace dynland
