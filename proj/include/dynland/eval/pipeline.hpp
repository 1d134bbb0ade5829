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

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "dynland/baselines/baselines.hpp"
#include "dynland/data/benchmark.hpp"
#include "dynland/eval/protocol.hpp"
#include "dynland/eval/report.hpp"
#include "dynland/meta/base.hpp"
#include "dynland/meta/metacloth.hpp"
#include "dynland/model/checkpoint.hpp"

namespace dynland {

/// Checkpoint files of one run directory.
struct ArtifactPaths {
  std::filesystem::path dir;
  std::filesystem::path base() const { return dir / "base.ckpt"; }
  std::filesystem::path phi() const { return dir / "phi.ckpt"; }
  std::filesystem::path theta() const { return dir / "theta.ckpt"; }
  std::filesystem::path theta_ld_keep() const { return dir / "theta_ld_keep.ckpt"; }
  std::filesystem::path maml() const { return dir / "maml.ckpt"; }
};

/// Stage seeds derived from the run seed.
enum class Stage : std::uint64_t { Base = 1, PPNet = 2, Meta = 3, Maml = 4, Eval = 5, Similarity = 6 };

inline std::uint64_t stage_seed(std::uint64_t seed, Stage s) {
  return derive_seed(seed, {0x5EED, static_cast<std::uint64_t>(s)});
}

/// Raised when training produces a non-finite loss.
inline void require_finite(const std::vector<double>& losses, const std::string& stage) {
  for (std::size_t i = 0; i < losses.size(); ++i)
    if (!std::isfinite(losses[i])) throw NumericalError(stage + ": non-finite loss at step " + std::to_string(i));
}

using LogFn = std::function<void(const std::string&)>;

struct Pipeline {
  std::vector<CategorySpec> registry = default_registry();
  RunConfig cfg;
  BenchmarkSplit split;
  std::uint64_t seed = 0;
  ArtifactPaths paths;
  LogFn log;

  Pipeline(RunConfig c, int scheme, std::uint64_t s, std::filesystem::path dir, LogFn l = {})
      : cfg(std::move(c)), seed(s), paths{std::move(dir)}, log(std::move(l)) {
    validate(cfg);
    split = build_benchmark(registry, scheme, seed);
  }

  void say(const std::string& m) const {
    if (log) log(m);
  }

  static ProgressFn every(const LogFn& log, const std::string& what, std::size_t total) {
    if (!log) return {};
    const std::size_t stride = std::max<std::size_t>(1, total / 10);
    return [=](std::size_t t, double loss) {
      if ((t + 1) % stride == 0 || t + 1 == total) {
        log(what + " " + std::to_string(t + 1) + "/" + std::to_string(total) + " loss " + format_fixed(loss, 4));
      }
    };
  }

  // --- training stages; each writes its checkpoint ---

  BaseModel train_base_stage() const {
    auto r = train_base(registry, split.seen, cfg.model, cfg.meta, cfg.render, stage_seed(seed, Stage::Base));
    require_finite(r.losses, "train-base");
    say("train-base: " + std::to_string(r.losses.size()) + " steps, final loss " +
        format_fixed(r.losses.empty() ? 0.0 : r.losses.back(), 4));
    save_checkpoint(base_to_params(r.model), paths.base());
    return r.model;
  }

  ParamSet train_ppnet_stage() const {
    const BaseModel base = load_base();
    auto r = train_ppnet(base, registry, split.seen, cfg.model, cfg.meta, cfg.render, stage_seed(seed, Stage::PPNet),
                         every(log, "train-ppnet", cfg.meta.n_tasks));
    require_finite(r.losses, "train-ppnet");
    save_checkpoint(r.phi, paths.phi());
    return r.phi;
  }

  /// Full meta-training, or the LD-Keep variant when `flow3` is false.
  ParamSet meta_train_stage(bool flow3 = true) const {
    const BaseModel base = load_base();
    const ParamSet phi = load_checkpoint(paths.phi());
    FlowOptions opt;
    opt.flow3 = flow3;
    const ParamSet init = initial_theta(base, cfg.model, cfg.meta.init, stage_seed(seed, Stage::Meta));
    auto r = meta_train(init, base, phi, registry, split.seen, cfg.model, cfg.meta, cfg.render,
                        stage_seed(seed, Stage::Meta), opt,
                        every(log, flow3 ? "meta-train" : "meta-train (ld_keep)", cfg.meta.n_tasks));
    require_finite(r.losses, "meta-train");
    save_checkpoint(r.theta, flow3 ? paths.theta() : paths.theta_ld_keep());
    return r.theta;
  }

  MamlModel maml_train_stage() const {
    const BaseModel base = load_base();
    auto r = maml_train(base, registry, split.seen, cfg.model, cfg.meta, cfg.render, stage_seed(seed, Stage::Maml),
                        every(log, "maml-train", cfg.meta.maml_tasks));
    require_finite(r.losses, "maml-train");
    save_checkpoint(r.model.params, paths.maml());
    return r.model;
  }

  BaseModel load_base() const { return base_from_params(load_checkpoint(paths.base())); }

  // --- evaluation ---

  /// Predictor for a method name: metacloth, ft, maml, wg, proto, or an ablation variant.
  struct Loaded {
    BaseModel base;
    ParamSet phi, theta;
    MamlModel maml;
  };

  Loaded load_for(const std::string& method) const {
    Loaded l;
    l.base = load_base();
    if (method == "ft" || method == "proto") return l;
    if (method == "maml") {
      l.maml.params = load_checkpoint(paths.maml());
      return l;
    }
    l.phi = load_checkpoint(paths.phi());
    if (method == "wg") return l;
    const ThetaSource src = method == "metacloth" ? ThetaSource::Full : theta_source(parse_ablation(method));
    if (src == ThetaSource::Base) l.theta = l.base.theta0;
    if (src == ThetaSource::LdKeep) l.theta = load_checkpoint(paths.theta_ld_keep());
    if (src == ThetaSource::Full) l.theta = load_checkpoint(paths.theta());
    return l;
  }

  EpisodePredictor predictor(const std::string& method, const Loaded& l) const {
    const ModelConfig& m = cfg.model;
    const MetaConfig& c = cfg.meta;
    if (method == "metacloth") return metacloth_predictor(l.theta, l.base, l.phi, m, c);
    if (method == "ft") return ft_predictor(l.base, m, c);
    if (method == "wg") return wg_predictor(l.base, l.phi, m);
    if (method == "proto") return proto_predictor(l.base, m);
    if (method == "maml") return maml_predictor(l.maml, registry, m, c);
    return ablation_predictor(parse_ablation(method), l.theta, l.base, l.phi, m, c);
  }

  std::vector<EpisodeResult> evaluate(const std::string& method, const EvalConfig& ecfg) const {
    const Loaded l = load_for(method);
    return run_protocol(method, predictor(method, l), registry, split, ecfg, cfg.render, stage_seed(seed, Stage::Eval));
  }

  std::vector<SimilarityRow> similarity(const std::string& method, std::size_t shot, std::size_t episodes) const {
    const Loaded l = load_for(method);
    return feature_similarity(method, l.theta, l.base, l.phi, registry, split, shot, episodes, cfg.model, cfg.meta,
                              cfg.render, stage_seed(seed, Stage::Similarity));
  }
};

/// Writes episodes.csv and summary.json for a set of results; returns the summaries.
inline std::vector<Summary> write_results(const std::vector<EpisodeResult>& rs, const std::filesystem::path& out) {
  std::vector<EpisodeResult> sorted = rs;
  sort_results(sorted);
  const auto summaries = summarize(sorted);
  write_file(out / "episodes.csv", encode_episodes_csv(sorted));
  write_file(out / "summary.json", encode_summary_json(summaries));
  return summaries;
}

}  // namespace dynland
