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

// dynland command-line interface.
//
//   dynland gen-data    --out DIR [--count N]
//   dynland train-base  --out DIR
//   dynland train-ppnet --out DIR
//   dynland meta-train  --out DIR [--method metacloth|ld_keep|maml]
//   dynland eval        --out DIR --method NAME [--shots 1,3,5,8,10]
//   dynland ablate      --out DIR [--shots 8]
//   dynland similarity  --out DIR [--method metacloth,base_fen,ld_keep]
//
// Shared flags: --config, --seed, --benchmark, --order, --init.
// Exit codes: 0 success, 1 usage error, 2 data or checkpoint error, 3 numerical failure.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dynland/data/io.hpp"
#include "dynland/eval/pipeline.hpp"

using namespace dynland;

namespace {

struct Options {
  std::string config;
  std::uint64_t seed = 0;
  int benchmark = 2;
  std::string shots;
  std::string method;
  std::string order;
  std::string init;
  std::string out = "run";
  std::size_t count = 4;
  std::size_t sim_episodes = 50;
  std::size_t sim_shot = 5;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

RunConfig load_config(const Options& o) {
  RunConfig c;
  if (!o.config.empty()) apply_config_text(c, read_file(o.config));
  if (!o.order.empty()) c.meta.order = parse_order(o.order);
  if (!o.init.empty()) c.meta.init = parse_theta_init(o.init);
  if (!o.shots.empty()) apply_setting(c, "shots", o.shots);
  return c;
}

Pipeline make_pipeline(const Options& o) {
  return Pipeline(load_config(o), o.benchmark, o.seed, o.out, [](const std::string& m) { std::cerr << m << "\n"; });
}

void print_summaries(const std::vector<Summary>& ss) {
  for (const auto& s : ss) {
    std::printf("%-16s benchmark %d shot %-4s NE %.4f ± %.4f (n=%zu)\n", s.method.c_str(), s.benchmark,
                s.shot == 0 ? "mean" : std::to_string(s.shot).c_str(), s.mean, s.ci95, s.n);
  }
}

void gen_data(const Options& o) {
  const RunConfig c = load_config(o);
  validate(c);
  const auto reg = default_registry();
  const auto split = build_benchmark(reg, o.benchmark, o.seed);
  const std::filesystem::path root = std::filesystem::path(o.out) / "data";
  for (const auto& cat : reg) {
    for (std::size_t i = 0; i < o.count; ++i) {
      const Sample s = render_sample(cat, c.render, derive_seed(o.seed, {0xDA7A, static_cast<std::uint64_t>(cat.id), i}));
      dump_sample(s, root / cat.name, std::to_string(i));
    }
  }
  std::string text = "benchmark " + std::to_string(split.scheme) + "\nseen";
  for (int id : split.seen) text += " " + std::to_string(id);
  text += "\nunseen";
  for (int id : split.unseen) text += " " + std::to_string(id);
  write_file(root / "split.txt", text + "\n");
  std::printf("wrote %zu samples per category to %s\n", o.count, root.string().c_str());
}

void eval_methods(const Options& o, const std::vector<std::string>& methods) {
  const Pipeline p = make_pipeline(o);
  std::vector<EpisodeResult> all;
  for (const auto& m : methods) {
    auto rs = p.evaluate(m, p.cfg.eval);
    all.insert(all.end(), rs.begin(), rs.end());
  }
  print_summaries(write_results(all, o.out));
}

void export_heatmaps(const Options& o) {
  const Pipeline p = make_pipeline(o);
  const auto l = p.load_for("metacloth");
  const std::size_t shot = p.cfg.eval.shots.front();
  for (int cat : p.split.unseen) {
    const Episode ep = sample_episode(p.registry, cat, shot, 1,
                                      eval_episode_seed(stage_seed(o.seed, Stage::Eval), cat, shot, 0), p.cfg.render);
    const Adapted a = meta_adapt(l.theta, l.base, l.phi, ep.support, p.cfg.model, p.cfg.meta);
    const Prediction pr = meta_predict(a.theta, a.omega_prime, images_of(ep.query), p.cfg.model);
    heatmap_export(image_slice(pr.heatmaps, 0),
                   std::filesystem::path(o.out) / "heatmaps" / find_category(p.registry, cat).name);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Few-shot dynamic-way landmark detection on synthetic garments"};
  app.require_subcommand(1);
  Options o;
  auto shared = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "key = value config file");
    sub->add_option("--seed", o.seed, "run seed");
    sub->add_option("--benchmark", o.benchmark, "split scheme")->check(CLI::Range(1, 4));
    sub->add_option("--order", o.order, "second | first");
    sub->add_option("--init", o.init, "meta-training start: base | random");
    sub->add_option("--out", o.out, "run directory");
  };
  auto* gen = app.add_subcommand("gen-data", "render sample images with annotations");
  shared(gen);
  gen->add_option("--count", o.count, "samples per category");
  auto* tb = app.add_subcommand("train-base", "supervised pretraining on the seen categories");
  shared(tb);
  auto* tp = app.add_subcommand("train-ppnet", "train the parameter prediction network");
  shared(tp);
  auto* mt = app.add_subcommand("meta-train", "meta-train the feature extractor (or MAML)");
  shared(mt);
  mt->add_option("--method", o.method, "metacloth | ld_keep | maml");
  auto* ev = app.add_subcommand("eval", "episodic evaluation on the unseen categories");
  shared(ev);
  ev->add_option("--method", o.method, "comma list of metacloth, ft, maml, wg, proto or ablation variants")
      ->required();
  ev->add_option("--shots", o.shots, "comma list of support sizes");
  auto* ab = app.add_subcommand("ablate", "evaluate the five ablation variants");
  shared(ab);
  ab->add_option("--shots", o.shots, "comma list of support sizes");
  ab->add_option("--method", o.method, "comma list of variants (default: all)");
  auto* sim = app.add_subcommand("similarity", "feature similarity before and after tuning");
  shared(sim);
  sim->add_option("--method", o.method, "comma list of metacloth and ablation variants");
  sim->add_option("--shots", o.sim_shot, "support size");
  sim->add_option("--episodes", o.sim_episodes, "episodes per category");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*gen) {
      gen_data(o);
    } else if (*tb) {
      make_pipeline(o).train_base_stage();
    } else if (*tp) {
      make_pipeline(o).train_ppnet_stage();
    } else if (*mt) {
      const Pipeline p = make_pipeline(o);
      if (o.method.empty() || o.method == "metacloth") p.meta_train_stage(true);
      else if (o.method == "ld_keep") p.meta_train_stage(false);
      else if (o.method == "maml") p.maml_train_stage();
      else throw UsageError("meta-train: unknown method '" + o.method + "'");
    } else if (*ev) {
      const auto methods = split_list(o.method);
      eval_methods(o, methods);
      if (std::find(methods.begin(), methods.end(), "metacloth") != methods.end()) export_heatmaps(o);
    } else if (*ab) {
      auto methods = split_list(o.method);
      if (methods.empty()) methods = {"base_fen", "base_fen_delta", "ld_keep", "ld_keep_delta", "full"};
      for (const auto& m : methods) parse_ablation(m);
      eval_methods(o, methods);
    } else if (*sim) {
      auto methods = split_list(o.method);
      if (methods.empty()) methods = {"metacloth", "base_fen", "ld_keep"};
      const Pipeline p = make_pipeline(o);
      std::vector<SimilarityRow> rows;
      for (const auto& m : methods) {
        if (m != "metacloth") parse_ablation(m);
        auto r = p.similarity(m, o.sim_shot, o.sim_episodes);
        rows.insert(rows.end(), r.begin(), r.end());
      }
      write_file(std::filesystem::path(o.out) / "similarity.csv", encode_similarity_csv(rows));
      std::fputs(encode_similarity_csv(rows).c_str(), stdout);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
