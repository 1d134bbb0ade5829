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

#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <numbers>
#include <string>

#include <sys/wait.h>

#include "dynland/data/io.hpp"
#include "dynland/eval/pipeline.hpp"
#include "support.hpp"

using namespace dynland;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dynland_eval_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Point rigid(const Point& p, double angle, double tx, double ty) {
  const double c = std::cos(angle), s = std::sin(angle);
  return {c * p.x - s * p.y + tx, s * p.x + c * p.y + ty};
}

std::vector<Point> random_points(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Point> v(n);
  for (auto& p : v) p = {rng.uniform(-5, 5), rng.uniform(-5, 5)};
  return v;
}

// Predicts the ground truth shifted by a fixed offset.
EpisodePredictor shifted_truth(double dx) {
  return [dx](const Episode& ep) {
    std::vector<std::vector<Point>> out;
    for (const auto& q : ep.query) {
      auto c = q.coords;
      for (auto& p : c) p.x += dx;
      out.push_back(c);
    }
    return out;
  };
}

}  // namespace

// --- normalized error -------------------------------------------------------------------

TEST(NormalizedError, UnitExamples) {
  const std::vector<Point> gt{{1, 2}, {3, 4}};
  EXPECT_EQ(normalized_error(gt, gt, 7.0), 0.0);
  EXPECT_NEAR(normalized_error({{3, 4}}, {{0, 0}}, 25.0), 1.0, 1e-12);
  EXPECT_NEAR(normalized_error({{2, 0}, {0, 4}}, {{0, 0}, {0, 0}}, 4.0), 1.5, 1e-12);
}

TEST(NormalizedError, RejectsBadInput) {
  EXPECT_THROW(normalized_error({{0, 0}}, {{0, 0}}, 0.0), DataError);
  EXPECT_THROW(normalized_error({{0, 0}}, {{0, 0}}, -1.0), DataError);
  EXPECT_THROW(normalized_error({{0, 0}}, {{0, 0}, {1, 1}}, 1.0), ShapeError);
}

TEST(NormalizedError, RigidMotionInvariance) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto gt = random_points(6, s), pred = random_points(6, s + 100);
    Rng rng(s + 7);
    const double a = rng.uniform(-3, 3), tx = rng.uniform(-10, 10), ty = rng.uniform(-10, 10);
    std::vector<Point> gt2, pred2;
    for (const auto& p : gt) gt2.push_back(rigid(p, a, tx, ty));
    for (const auto& p : pred) pred2.push_back(rigid(p, a, tx, ty));
    EXPECT_NEAR(normalized_error(pred2, gt2, 9.0), normalized_error(pred, gt, 9.0), 1e-12);
  }
}

TEST(NormalizedError, ScaleCovariance) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto gt = random_points(5, s), pred = random_points(5, s + 50);
    // Powers of two keep the scaling exact.
    const double k = std::ldexp(1.0, static_cast<int>(s % 7) - 3);
    std::vector<Point> gt2, pred2;
    for (const auto& p : gt) gt2.push_back({p.x * k, p.y * k});
    for (const auto& p : pred) pred2.push_back({p.x * k, p.y * k});
    EXPECT_EQ(normalized_error(pred2, gt2, 3.0 * k * k), normalized_error(pred, gt, 3.0));
  }
}

// --- ci95 ------------------------------------------------------------------------------

TEST(Ci95, Examples) {
  const std::vector<double> constant(10, 0.25);
  EXPECT_EQ(ci95(constant), 0.0);
  const std::vector<double> two{0.0, 2.0};
  EXPECT_NEAR(ci95(two), 1.96, 1e-12);
  const std::vector<double> one{1.0};
  EXPECT_THROW(ci95(one), DataError);
}

TEST(Ci95, MonteCarloMatchesKnownSigma) {
  Rng rng(42);
  const double sigma = 0.3;
  std::vector<double> v(10000);
  for (auto& x : v) x = 1.0 + sigma * rng.normal();
  EXPECT_NEAR(ci95(v), 1.96 * sigma / 100.0, 0.05 * 1.96 * sigma / 100.0);
}

TEST(Cosine, Examples) {
  const std::vector<double> a{1, 2, 3}, b{-2, 1, 0}, z{0, 0, 0};
  EXPECT_NEAR(cosine_similarity(a, a), 1.0, 1e-15);
  EXPECT_EQ(cosine_similarity(a, b), 0.0);
  EXPECT_EQ(cosine_similarity(a, z), 0.0);
}

// --- protocol --------------------------------------------------------------------------

TEST(Protocol, DefaultEpisodeCountIs700PerShot) {
  const auto reg = default_registry();
  const auto split = build_benchmark(reg, 2, 0);
  ASSERT_EQ(split.unseen.size(), 7u);
  EvalConfig e;
  e.shots = {1};
  e.queries = 1;
  const auto rs = run_protocol("oracle", shifted_truth(0.0), reg, split, e, RenderConfig{}, 5);
  EXPECT_EQ(rs.size(), 700u);
  const auto ss = summarize(rs);
  EXPECT_EQ(find_summary(ss, "oracle", 1).n, 700u);
  EXPECT_EQ(find_summary(ss, "oracle", 1).mean, 0.0);
}

TEST(Protocol, ComponentsAndSummaries) {
  const auto reg = default_registry();
  const auto split = build_benchmark(reg, 3, 1);
  EvalConfig e;
  e.episodes_per_category = 3;
  e.queries = 4;
  e.shots = {1, 2};
  const auto rs = run_protocol("shift", shifted_truth(1.5), reg, split, e, RenderConfig{}, 9);
  ASSERT_EQ(rs.size(), 2 * 3 * split.unseen.size());
  for (const auto& r : rs) {
    EXPECT_EQ(r.components.size(), 4 * find_category(reg, r.category_id).landmarks.size());
    EXPECT_GT(r.ne, 0.0);
  }
  const auto ss = summarize(rs);
  ASSERT_EQ(ss.size(), 3u);
  EXPECT_EQ(ss[0].shot, 1u);
  EXPECT_EQ(ss[1].shot, 2u);
  EXPECT_EQ(ss[2].shot, 0u);
  EXPECT_EQ(ss[2].n, rs.size());
  for (const auto& s : ss) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& r : rs)
      if (s.shot == 0 || r.shot == s.shot) {
        sum += r.ne;
        ++n;
      }
    EXPECT_NEAR(s.mean, sum / static_cast<double>(n), 1e-12);
  }
}

TEST(Protocol, SameSeedSameBytes) {
  const auto reg = default_registry();
  const auto split = build_benchmark(reg, 2, 0);
  EvalConfig e;
  e.episodes_per_category = 2;
  e.queries = 2;
  e.shots = {1};
  const auto a = run_protocol("shift", shifted_truth(0.7), reg, split, e, RenderConfig{}, 3);
  const auto b = run_protocol("shift", shifted_truth(0.7), reg, split, e, RenderConfig{}, 3);
  EXPECT_EQ(encode_episodes_csv(a), encode_episodes_csv(b));
}

// --- report files ----------------------------------------------------------------------

TEST(Report, CsvRoundTripReproducesSummaryJson) {
  const auto reg = default_registry();
  const auto split = build_benchmark(reg, 1, 4);
  EvalConfig e;
  e.episodes_per_category = 3;
  e.queries = 2;
  e.shots = {1, 3};
  auto rs = run_protocol("a", shifted_truth(0.3), reg, split, e, RenderConfig{}, 1);
  const auto rs2 = run_protocol("b", shifted_truth(0.9), reg, split, e, RenderConfig{}, 1);
  rs.insert(rs.end(), rs2.begin(), rs2.end());
  const fs::path dir = scratch("roundtrip");
  const auto ss = write_results(rs, dir);
  const auto back = decode_episodes_csv(read_file(dir / "episodes.csv"));
  ASSERT_EQ(back.size(), rs.size());
  EXPECT_EQ(encode_summary_json(summarize(back)), read_file(dir / "summary.json"));
  EXPECT_EQ(decode_summary_json(read_file(dir / "summary.json")), ss);
  EXPECT_EQ(read_file(dir / "episodes.csv").substr(0, std::string(kEpisodesHeader).size()), kEpisodesHeader);
}

TEST(Report, MalformedCsvIsRejected) {
  EXPECT_THROW(decode_episodes_csv("nope\n"), DataError);
  EXPECT_THROW(decode_episodes_csv(std::string(kEpisodesHeader) + "\nm,2,3,5,7\n"), DataError);
  EXPECT_THROW(decode_episodes_csv(std::string(kEpisodesHeader) + "\nm,2,x,5,7,0.1\n"), DataError);
}

TEST(Report, MeanRowIsLabelled) {
  const std::vector<Summary> ss{{"m", 2, 5, 0.1, 0.01, 700}, {"m", 2, 0, 0.1, 0.01, 700}};
  const std::string text = encode_summary_json(ss);
  EXPECT_NE(text.find("\"mean\""), std::string::npos);
  EXPECT_EQ(decode_summary_json(text), ss);
}

TEST(HeatmapExport, UniformPointMassAndRepeatability) {
  const fs::path dir = scratch("heatmaps");
  std::vector<double> v(2 * 4 * 4, 1.0 / 16.0);
  for (std::size_t i = 16; i < 32; ++i) v[i] = 0.0;
  v[16 + 5] = 1.0;
  heatmap_export(Tensor({2, 4, 4}, v), dir);
  const Gray8 uniform = decode_pgm(read_file(dir / "0.pgm"));
  for (auto px : uniform.pixels) EXPECT_EQ(px, 255);
  const Gray8 point = decode_pgm(read_file(dir / "1.pgm"));
  for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(point.pixels[i], i == 5 ? 255 : 0);
  const std::string first = read_file(dir / "1.pgm");
  heatmap_export(Tensor({2, 4, 4}, v), dir);
  EXPECT_EQ(read_file(dir / "1.pgm"), first);
}

TEST(HeatmapExport, UnwritablePathIsRejected) {
  const fs::path dir = scratch("blocked");
  write_file(dir / "file", "x");
  EXPECT_THROW(heatmap_export(Tensor({1, 2, 2}, std::vector<double>(4, 1.0)), dir / "file" / "sub"), Error);
}

// --- config ----------------------------------------------------------------------------

TEST(Config, ParsesKeyValueText) {
  RunConfig c;
  apply_config_text(c, "# comment\nbeta1 = 0.02\n  inner_steps=3  # trailing\n\nshots = 1, 5\norder = first\n"
                       "channels = 8,8,16,32\nH = 64\nW = 64\npool_after = 0,1,2\n");
  EXPECT_EQ(c.meta.beta1, 0.02);
  EXPECT_EQ(c.meta.inner_steps, 3u);
  EXPECT_EQ(c.eval.shots, (std::vector<std::size_t>{1, 5}));
  EXPECT_EQ(c.meta.order, Order::First);
  EXPECT_EQ(c.model.channels, (std::vector<std::size_t>{8, 8, 16, 32}));
  EXPECT_EQ(c.render.H, 64u);
  EXPECT_NO_THROW(validate(c));
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  RunConfig c;
  EXPECT_THROW(apply_config_text(c, "learning_rate = 0.1\n"), UsageError);
  EXPECT_THROW(apply_config_text(c, "beta1 = fast\n"), UsageError);
  EXPECT_THROW(apply_config_text(c, "inner_steps 3\n"), UsageError);
  EXPECT_THROW(apply_config_text(c, "order = third\n"), UsageError);
  RunConfig d;
  apply_setting(d, "shots", "0");
  EXPECT_THROW(validate(d), UsageError);
}

// --- ablations and similarity ------------------------------------------------------------

namespace {

ModelConfig small_model() {
  ModelConfig c;
  c.H = c.W = 16;
  c.h = c.w = 8;
  c.D = 6;
  c.hidden = 8;
  c.channels = {4, 6};
  c.pool_after = {0};
  return c;
}

struct Small {
  std::vector<CategorySpec> registry = default_registry();
  BenchmarkSplit split = build_benchmark(registry, 2, 0);
  ModelConfig mcfg = small_model();
  RenderConfig rcfg;
  MetaConfig cfg;
  BaseModel base;
  ParamSet phi;

  Small() {
    rcfg.H = rcfg.W = 16;
    rcfg.h = rcfg.w = 8;
    cfg.inner_steps = 2;
    base.blocks = make_blocks(registry, split.seen);
    base.theta0 = init_fenet(mcfg, 1);
    std::size_t n_all = 0;
    for (const auto& b : base.blocks) n_all += b.count;
    base.omega0 = randn_init({n_all, mcfg.D}, mcfg.D, 2);
    phi = init_ppnet(mcfg, 3);
    phi.at("fc2.weight") = dynland::testing::random_tensor(phi.at("fc2.weight").shape(), 4, -0.5, 0.5);
  }
};

}  // namespace

TEST(Ablation, NamesRoundTrip) {
  for (auto a : {Ablation::BaseFen, Ablation::BaseFenDelta, Ablation::LdKeep, Ablation::LdKeepDelta, Ablation::Full})
    EXPECT_EQ(parse_ablation(to_string(a)), a);
  EXPECT_THROW(parse_ablation("no_flow2"), UsageError);
  EXPECT_EQ(theta_source(Ablation::BaseFen), ThetaSource::Base);
  EXPECT_EQ(theta_source(Ablation::LdKeepDelta), ThetaSource::LdKeep);
  EXPECT_EQ(theta_source(Ablation::Full), ThetaSource::Full);
  EXPECT_FALSE(test_time_flow3(Ablation::BaseFenDelta));
  EXPECT_TRUE(test_time_flow3(Ablation::LdKeep));
}

TEST(Ablation, FullVariantMatchesDefaultPath) {
  const Small s;
  const Episode ep = sample_episode(s.registry, s.split.unseen[0], 2, 3, 11, s.rcfg);
  const auto a = ablation_predictor(Ablation::Full, s.base.theta0, s.base, s.phi, s.mcfg, s.cfg)(ep);
  const auto b = metacloth_predictor(s.base.theta0, s.base, s.phi, s.mcfg, s.cfg)(ep);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t q = 0; q < a.size(); ++q)
    for (std::size_t n = 0; n < a[q].size(); ++n) {
      EXPECT_EQ(a[q][n].x, b[q][n].x);
      EXPECT_EQ(a[q][n].y, b[q][n].y);
    }
}

TEST(Ablation, DeltaVariantKeepsDetectors) {
  const Small s;
  const Episode ep = sample_episode(s.registry, s.split.unseen[1], 3, 1, 12, s.rcfg);
  FlowOptions opt;
  opt.flow3 = test_time_flow3(Ablation::LdKeepDelta);
  const Adapted a = meta_adapt(s.base.theta0, s.base, s.phi, ep.support, s.mcfg, s.cfg, opt);
  EXPECT_EQ(a.omega_prime.values(), a.omega.values());
  const Adapted full = meta_adapt(s.base.theta0, s.base, s.phi, ep.support, s.mcfg, s.cfg);
  EXPECT_NE(full.omega_prime.values(), full.omega.values());
}

TEST(Similarity, ZeroInnerStepsGivesUnitSameLandmark) {
  Small s;
  s.cfg.inner_steps = 0;
  const auto rows = feature_similarity("base_fen", s.base.theta0, s.base, s.phi, s.registry, s.split, 2, 2, s.mcfg,
                                       s.cfg, s.rcfg, 1);
  ASSERT_EQ(rows.size(), s.split.unseen.size());
  for (const auto& r : rows) {
    EXPECT_NEAR(r.same_landmark, 1.0, 1e-12);
    EXPECT_LE(r.different_landmark, 1.0 + 1e-12);
    EXPECT_EQ(r.episodes, 2u);
  }
  const std::string csv = encode_similarity_csv(rows);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), static_cast<long>(rows.size() + 1));
}

TEST(Similarity, TuningMovesFeatures) {
  Small s;
  s.cfg.beta1 = 0.5;
  const auto rows = feature_similarity("base_fen", s.base.theta0, s.base, s.phi, s.registry, s.split, 2, 1, s.mcfg,
                                       s.cfg, s.rcfg, 1);
  for (const auto& r : rows) EXPECT_LT(r.same_landmark, 1.0);
}

// --- pipeline and CLI -------------------------------------------------------------------

namespace {

const char* kTinyConfig =
    "H = 16\nW = 16\nD = 6\nhidden = 8\nchannels = 4,6\npool_after = 0\n"
    "base_steps = 20\nn_tasks = 6\nmaml_tasks = 2\ninner_steps = 1\nmaml_inner_steps = 1\nft_steps = 2\n"
    "episodes_per_category = 2\nqueries = 2\nshots = 1\n";

RunConfig tiny_run() {
  RunConfig c;
  apply_config_text(c, kTinyConfig);
  return c;
}

int cli(const std::string& args) {
  const std::string cmd = std::string(DYNLAND_CLI) + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

TEST(Pipeline, MissingCheckpointNamesThePath) {
  const fs::path dir = scratch("missing");
  const Pipeline p(tiny_run(), 2, 0, dir);
  try {
    p.evaluate("wg", p.cfg.eval);
    FAIL() << "expected a DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("base.ckpt"), std::string::npos);
  }
}

TEST(Pipeline, EndToEndIsDeterministic) {
  auto run = [](const fs::path& dir) {
    const Pipeline p(tiny_run(), 2, 17, dir);
    p.train_base_stage();
    p.train_ppnet_stage();
    p.meta_train_stage(true);
    p.maml_train_stage();
    std::vector<EpisodeResult> all;
    for (const std::string m : {"metacloth", "ft", "maml", "wg", "proto"}) {
      auto rs = p.evaluate(m, p.cfg.eval);
      all.insert(all.end(), rs.begin(), rs.end());
    }
    write_results(all, dir);
  };
  const fs::path a = scratch("det_a"), b = scratch("det_b");
  run(a);
  run(b);
  for (const char* f : {"base.ckpt", "phi.ckpt", "theta.ckpt", "maml.ckpt", "episodes.csv", "summary.json"})
    EXPECT_EQ(read_file(a / f), read_file(b / f)) << f;
  const auto ss = decode_summary_json(read_file(a / "summary.json"));
  EXPECT_EQ(ss.size(), 10u);
}

TEST(Cli, ExitCodes) {
  const fs::path dir = scratch("cli");
  write_file(dir / "tiny.cfg", kTinyConfig);
  const std::string common = "--config " + (dir / "tiny.cfg").string() + " --out " + dir.string();
  EXPECT_EQ(cli(""), 1);
  EXPECT_EQ(cli("frobnicate"), 1);
  EXPECT_EQ(cli("eval --method wg --benchmark 9 " + common), 1);
  EXPECT_EQ(cli("eval --method wg " + common), 2);
  EXPECT_EQ(cli("ablate --method half " + common), 1);

  write_file(dir / "bad.cfg", "warp = 9\n");
  EXPECT_EQ(cli("train-base --config " + (dir / "bad.cfg").string() + " --out " + dir.string()), 1);

  EXPECT_EQ(cli("gen-data --count 1 " + common), 0);
  EXPECT_TRUE(fs::exists(dir / "data" / "split.txt"));
  EXPECT_EQ(cli("train-base " + common), 0);
  EXPECT_TRUE(fs::exists(dir / "base.ckpt"));

  write_file(dir / "diverge.cfg", std::string(kTinyConfig) + "base_lr = 1e300\nbase_loss_threshold = 0\n");
  EXPECT_EQ(cli("train-base --config " + (dir / "diverge.cfg").string() + " --out " + (dir / "d").string()), 3);
}

TEST(Cli, EvalWritesOutputs) {
  const fs::path dir = scratch("cli_eval");
  write_file(dir / "tiny.cfg", kTinyConfig);
  const std::string common = "--config " + (dir / "tiny.cfg").string() + " --out " + dir.string();
  ASSERT_EQ(cli("train-base " + common), 0);
  ASSERT_EQ(cli("train-ppnet " + common), 0);
  ASSERT_EQ(cli("meta-train " + common), 0);
  ASSERT_EQ(cli("eval --method metacloth,wg " + common), 0);
  const auto rs = decode_episodes_csv(read_file(dir / "episodes.csv"));
  EXPECT_EQ(rs.size(), 2u * 2u * 7u);
  const auto reg = default_registry();
  const auto split = build_benchmark(reg, 2, 0);
  for (int cat : split.unseen) {
    const auto& spec = find_category(reg, cat);
    EXPECT_TRUE(fs::exists(dir / "heatmaps" / spec.name / "0.pgm")) << spec.name;
  }
  ASSERT_EQ(cli("similarity --method metacloth --episodes 1 " + common), 0);
  EXPECT_TRUE(fs::exists(dir / "similarity.csv"));
}
