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

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "dynland/baselines/baselines.hpp"
#include "dynland/data/benchmark.hpp"
#include "dynland/data/episode.hpp"
#include "dynland/eval/metrics.hpp"
#include "dynland/meta/metacloth.hpp"

namespace dynland {

struct EvalConfig {
  std::size_t episodes_per_category = 100;
  std::size_t queries = kDefaultQueryCount;
  std::vector<std::size_t> shots{1, 3, 5, 8, 10};
};

struct EpisodeResult {
  std::string method;
  int benchmark = 0;
  int category_id = 0;
  std::size_t shot = 0;
  std::uint64_t episode_seed = 0;
  std::vector<double> components;  // per query, per landmark: distance / sqrt(area)
  double ne = 0.0;                 // mean of components
};

/// Shot 0 marks the mean over all shots.
struct Summary {
  std::string method;
  int benchmark = 0;
  std::size_t shot = 0;
  double mean = 0.0;
  double ci95 = 0.0;
  std::size_t n = 0;
};

/// Query coordinates predicted for an episode, one list per query image.
using EpisodePredictor = std::function<std::vector<std::vector<Point>>(const Episode&)>;

inline std::uint64_t eval_episode_seed(std::uint64_t seed, int category_id, std::size_t shot, std::size_t e) {
  return derive_seed(seed, {0xEE, static_cast<std::uint64_t>(category_id), shot, e});
}

/// NE of one episode from its predictions.
inline EpisodeResult score_episode(const Episode& ep, const std::vector<std::vector<Point>>& pred) {
  if (pred.size() != ep.query.size()) throw ShapeError("score_episode: one prediction per query expected");
  EpisodeResult r;
  r.category_id = ep.category_id;
  r.shot = ep.support.size();
  r.episode_seed = ep.seed;
  for (std::size_t q = 0; q < ep.query.size(); ++q) {
    const auto& gt = ep.query[q].coords;
    if (pred[q].size() != gt.size()) throw ShapeError("score_episode: landmark count mismatch");
    const double root = std::sqrt(ep.query[q].area);
    for (std::size_t n = 0; n < gt.size(); ++n) r.components.push_back(distance(pred[q][n], gt[n]) / root);
  }
  r.ne = mean_of(r.components);
  return r;
}

/// Orders results by (method, benchmark, shot, category, episode seed).
inline void sort_results(std::vector<EpisodeResult>& rs) {
  std::sort(rs.begin(), rs.end(), [](const EpisodeResult& a, const EpisodeResult& b) {
    return std::tie(a.method, a.benchmark, a.shot, a.category_id, a.episode_seed) <
           std::tie(b.method, b.benchmark, b.shot, b.category_id, b.episode_seed);
  });
}

/// Per-(method, benchmark, shot) summaries plus a shot-0 row over all shots.
/// Values are accumulated in sorted result order.
inline std::vector<Summary> summarize(std::vector<EpisodeResult> rs) {
  sort_results(rs);
  std::map<std::tuple<std::string, int, std::size_t>, std::vector<double>> groups;
  for (const auto& r : rs) {
    groups[{r.method, r.benchmark, r.shot}].push_back(r.ne);
    groups[{r.method, r.benchmark, 0}].push_back(r.ne);
  }
  std::vector<Summary> out;
  for (const auto& [key, v] : groups) {
    Summary s{std::get<0>(key), std::get<1>(key), std::get<2>(key), mean_of(v), v.size() > 1 ? ci95(v) : 0.0,
              v.size()};
    out.push_back(s);
  }
  // Shot rows ascending, then the mean row, per method and benchmark.
  std::stable_sort(out.begin(), out.end(), [](const Summary& a, const Summary& b) {
    auto key = [](const Summary& s) {
      return std::tuple(s.method, s.benchmark, s.shot == 0 ? std::size_t(-1) : s.shot);
    };
    return key(a) < key(b);
  });
  return out;
}

inline const Summary& find_summary(const std::vector<Summary>& ss, const std::string& method, std::size_t shot) {
  for (const auto& s : ss)
    if (s.method == method && s.shot == shot) return s;
  throw DataError("no summary for " + method + " shot " + std::to_string(shot));
}

/// Evaluates `predict` on episodes_per_category episodes for every unseen
/// category and shot; results are sorted.
inline std::vector<EpisodeResult> run_protocol(const std::string& method, const EpisodePredictor& predict,
                                               const std::vector<CategorySpec>& registry, const BenchmarkSplit& split,
                                               const EvalConfig& ecfg, const RenderConfig& rcfg,
                                               std::uint64_t seed) {
  std::vector<EpisodeResult> out;
  for (std::size_t shot : ecfg.shots) {
    for (int cat : split.unseen) {
      for (std::size_t e = 0; e < ecfg.episodes_per_category; ++e) {
        const Episode ep =
            sample_episode(registry, cat, shot, ecfg.queries, eval_episode_seed(seed, cat, shot, e), rcfg);
        EpisodeResult r = score_episode(ep, predict(ep));
        r.method = method;
        r.benchmark = split.scheme;
        out.push_back(std::move(r));
      }
    }
  }
  sort_results(out);
  return out;
}

// --- predictors ------------------------------------------------------------------------

inline std::vector<std::vector<Point>> coords_of(const Prediction& p) { return p.coords; }

/// Full method at meta-test: adapt from `theta`, optionally re-predict detectors, predict.
inline EpisodePredictor metacloth_predictor(const ParamSet& theta, const BaseModel& base, const ParamSet& phi,
                                            const ModelConfig& mcfg, const MetaConfig& cfg, FlowOptions opt = {}) {
  return [=, &theta, &base, &phi](const Episode& ep) {
    const Adapted a = meta_adapt(theta, base, phi, ep.support, mcfg, cfg, opt);
    return meta_predict(a.theta, a.omega_prime, images_of(ep.query), mcfg).coords;
  };
}

inline EpisodePredictor ft_predictor(const BaseModel& base, const ModelConfig& mcfg, const MetaConfig& cfg) {
  return [=, &base](const Episode& ep) {
    const FineTuned f = ft_adapt(base.theta0, ep.support, mcfg, cfg, derive_seed(ep.seed, {0xF7}));
    return meta_predict(f.theta, f.omega, images_of(ep.query), mcfg).coords;
  };
}

inline EpisodePredictor wg_predictor(const BaseModel& base, const ParamSet& phi, const ModelConfig& mcfg) {
  return [=, &base, &phi](const Episode& ep) {
    return meta_predict(base.theta0, wg_adapt(base, phi, ep.support, mcfg), images_of(ep.query), mcfg).coords;
  };
}

inline EpisodePredictor proto_predictor(const BaseModel& base, const ModelConfig& mcfg) {
  return [=, &base](const Episode& ep) {
    return proto_predict(proto_adapt(base.theta0, ep.support, mcfg), base.theta0, images_of(ep.query), mcfg);
  };
}

inline EpisodePredictor maml_predictor(const MamlModel& model, const std::vector<CategorySpec>& registry,
                                       const ModelConfig& mcfg, const MetaConfig& cfg) {
  return [=, &model, &registry](const Episode& ep) {
    const MamlAdapted a = maml_adapt(model, find_category(registry, ep.category_id), ep.support, mcfg, cfg);
    return meta_predict(a.params, a.omega, images_of(ep.query), mcfg).coords;
  };
}

// --- ablations -------------------------------------------------------------------------

enum class Ablation { BaseFen, BaseFenDelta, LdKeep, LdKeepDelta, Full };

inline const char* to_string(Ablation a) {
  switch (a) {
    case Ablation::BaseFen: return "base_fen";
    case Ablation::BaseFenDelta: return "base_fen_delta";
    case Ablation::LdKeep: return "ld_keep";
    case Ablation::LdKeepDelta: return "ld_keep_delta";
    case Ablation::Full: return "full";
  }
  return "?";
}

inline Ablation parse_ablation(const std::string& s) {
  for (auto a : {Ablation::BaseFen, Ablation::BaseFenDelta, Ablation::LdKeep, Ablation::LdKeepDelta, Ablation::Full})
    if (s == to_string(a)) return a;
  throw UsageError("unknown ablation variant '" + s + "'");
}

/// Whether a variant starts adaptation from theta0, from the meta-trained theta
/// without flow-3, or from the full meta-trained theta.
enum class ThetaSource { Base, LdKeep, Full };

inline ThetaSource theta_source(Ablation a) {
  switch (a) {
    case Ablation::BaseFen:
    case Ablation::BaseFenDelta: return ThetaSource::Base;
    case Ablation::LdKeep:
    case Ablation::LdKeepDelta: return ThetaSource::LdKeep;
    case Ablation::Full: return ThetaSource::Full;
  }
  return ThetaSource::Full;
}

/// Flow-3 at meta-test; the delta variants skip it.
inline bool test_time_flow3(Ablation a) { return a != Ablation::BaseFenDelta && a != Ablation::LdKeepDelta; }

/// Predictor of an ablation variant. `theta` must match theta_source(a):
/// theta0 for the Base-FEN variants, the flow-3-free meta-trained extractor for
/// LD-Keep, the full meta-trained extractor otherwise.
inline EpisodePredictor ablation_predictor(Ablation a, const ParamSet& theta, const BaseModel& base,
                                           const ParamSet& phi, const ModelConfig& mcfg, const MetaConfig& cfg) {
  FlowOptions opt;
  opt.flow3 = test_time_flow3(a);
  return metacloth_predictor(theta, base, phi, mcfg, cfg, opt);
}

// --- feature similarity ------------------------------------------------------------------

struct SimilarityRow {
  std::string method;
  int category_id = 0;
  double same_landmark = 0.0;       // cos(F^point_theta[n], F^point_theta'[n]), mean over n
  double different_landmark = 0.0;  // cos(F^point_theta'[n], F^point_theta'[m]), mean over n != m
  std::size_t episodes = 0;
};

namespace detail {

inline std::span<const double> row_of(const Tensor& m, std::size_t n) {
  const std::size_t D = m.dim(1);
  return m.data().subspan(n * D, D);
}

}  // namespace detail

/// Same-landmark and different-landmark cosine similarities of support
/// landmark-level features before and after adapting from `theta`.
inline std::vector<SimilarityRow> feature_similarity(const std::string& method, const ParamSet& theta,
                                                     const BaseModel& base, const ParamSet& phi,
                                                     const std::vector<CategorySpec>& registry,
                                                     const BenchmarkSplit& split, std::size_t shot,
                                                     std::size_t episodes, const ModelConfig& mcfg,
                                                     const MetaConfig& cfg, const RenderConfig& rcfg,
                                                     std::uint64_t seed) {
  std::vector<SimilarityRow> out;
  for (int cat : split.unseen) {
    SimilarityRow row{method, cat, 0.0, 0.0, episodes};
    for (std::size_t e = 0; e < episodes; ++e) {
      const Episode ep = sample_episode(registry, cat, shot, 1, eval_episode_seed(seed, cat, shot, e), rcfg);
      const Adapted a = meta_adapt(theta, base, phi, ep.support, mcfg, cfg);
      RecordingGuard off(false);
      const Tensor images = images_of(ep.support), labels = labelmaps_of(ep.support);
      const Tensor before = extract_landmark_features(fenet_forward(theta, images, mcfg), labels);
      const Tensor after = extract_landmark_features(fenet_forward(a.theta, images, mcfg), labels);
      const std::size_t nc = before.dim(0);
      double same = 0.0, diff = 0.0;
      for (std::size_t n = 0; n < nc; ++n) {
        same += cosine_similarity(detail::row_of(before, n), detail::row_of(after, n));
        for (std::size_t m = 0; m < nc; ++m)
          if (m != n) diff += cosine_similarity(detail::row_of(after, n), detail::row_of(after, m));
      }
      row.same_landmark += same / static_cast<double>(nc);
      row.different_landmark += nc > 1 ? diff / static_cast<double>(nc * (nc - 1)) : 0.0;
    }
    row.same_landmark /= static_cast<double>(episodes);
    row.different_landmark /= static_cast<double>(episodes);
    out.push_back(row);
  }
  return out;
}

}  // namespace dynland
