// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Criterion 5 fits the full desk-scale pipeline in a temp workdir;
// criterion 8 reuses its artifacts.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "competency/agent.hpp"
#include "competency/cluster.hpp"
#include "competency/conditions.hpp"
#include "competency/guard.hpp"
#include "competency/metrics.hpp"
#include "competency/pipeline.hpp"
#include "competency/scene.hpp"
#include "competency/sim.hpp"
#include "competency/strategy.hpp"
#include "../support/oracles.hpp"

namespace fs = std::filesystem;
using namespace competency;
using nlohmann::json;

namespace {

struct Failure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require(bool cond, const std::string& what) {
  if (!cond) throw Failure(what);
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

struct Context {
  fs::path desk_workdir;
  PipelineConfig desk_cfg;
};

// --------------------------------------------------------------------------
// 1. HDP sampler correctness against the exhaustive enumeration oracle.
// --------------------------------------------------------------------------
void criterion_hdp_oracle(Context&) {
  Document d0, d1;
  d0.tokens = {0, 0, 1};
  d1.tokens = {1, 2, 2};
  HdpConfig cfg;
  cfg.topics = 2;
  cfg.vocab_size = 3;
  cfg.n_visual = 3;
  cfg.sweeps = 30000;
  cfg.burn_in = 2000;
  cfg.seed = 91;
  cfg.track_marginals = true;
  cfg.resample_beta = false;  // the oracle scores the fixed-beta joint
  ConditionModel m = fit_hdp({d0, d1}, cfg);

  require(m.total_tokens() == 6, "token count not conserved");

  testsupport::EnumerationOracle oracle;
  oracle.docs = {{0, 0, 1}, {1, 2, 2}};
  oracle.vocab = 3;
  std::vector<std::vector<double>> marg, co;
  oracle.posterior(marg, co);
  for (std::size_t i = 0; i < 6; ++i) {
    double tv = 0.0;
    for (int t = 0; t < 2; ++t)
      tv += std::abs(m.token_topic_marginal[i][static_cast<std::size_t>(t)] -
                     marg[i][static_cast<std::size_t>(t)]);
    tv /= 2.0;
    require(tv <= 0.05, "per-token marginal TV " + std::to_string(tv) + " > 0.05");
  }

  ConditionModel m2 = fit_hdp({d0, d1}, cfg);
  require(m.assignments == m2.assignments && m.beta == m2.beta,
          "same seed did not give a bit-identical final state");
}

// --------------------------------------------------------------------------
// 2. Gradient fidelity on 5 random seeds.
// --------------------------------------------------------------------------
void criterion_gradient(Context&) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    AgentConfig cfg;
    cfg.init_seed = seed;
    Agent agent = init_agent(cfg);
    Rng rng(seed);
    SceneParams p;
    p.distance_m = rng.uniform(2.0, 30.0);
    p.weather = static_cast<Weather>(rng.below(4));
    p.time_of_day = static_cast<TimeOfDay>(rng.below(3));
    p.lateral_offset = rng.uniform(-0.3, 0.3);
    p.noise_seed = seed * 17;
    double target = rng.uniform(2.0, 30.0);
    double err = gradient_check(agent, render(p), target, seed);
    require(err <= 1e-3,
            "seed " + std::to_string(seed) + ": max relative error " + std::to_string(err));
  }
}

// --------------------------------------------------------------------------
// 3. Clustering matches brute force on every small fixture.
// --------------------------------------------------------------------------
void criterion_clustering(Context&) {
  Rng rng(424242);
  for (int trial = 0; trial < 60; ++trial) {
    const int n = 4 + static_cast<int>(rng.below(5));  // 4..8 points
    const int k = 2 + static_cast<int>(rng.below(2));  // 2..3 clusters
    const int d = 1 + static_cast<int>(rng.below(3));
    std::vector<std::vector<double>> pts(static_cast<std::size_t>(n),
                                         std::vector<double>(static_cast<std::size_t>(d)));
    for (auto& p : pts)
      for (double& v : p) v = rng.uniform(-4.0, 4.0);

    StrategyOptions opts;
    opts.mode = KMode::Fixed;
    opts.k = k;
    opts.standardize = false;
    opts.seed = rng.next_u64();
    StrategyModel m = fit_strategies(pts, opts);
    double sse = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i)
      sse += squared_distance(pts[i], m.centroids[static_cast<std::size_t>(m.assignments[i])]);
    double oracle = testsupport::brute_force_min_sse(pts, k);
    require(sse <= oracle + 1e-9 + 1e-9 * std::abs(oracle),
            "trial " + std::to_string(trial) + ": SSE " + std::to_string(sse) +
                " vs oracle " + std::to_string(oracle));
  }

  std::vector<std::vector<double>> fixture = {{0, 0}, {0, 1}, {10, 0}, {10, 1}};
  StrategyOptions opts;
  opts.mode = KMode::Fixed;
  opts.k = 2;
  opts.standardize = false;
  StrategyModel m = fit_strategies(fixture, opts);
  require(m.assignments[0] == m.assignments[1] && m.assignments[2] == m.assignments[3] &&
              m.assignments[0] != m.assignments[2],
          "canonical 4-point fixture split incorrectly");
}

// --------------------------------------------------------------------------
// 4. Metric identities.
// --------------------------------------------------------------------------
void criterion_metric_identities(Context&) {
  std::vector<FidelitySample> samples(4);
  const double forecasts[4] = {1.0, 0.5, 0.0, 0.8};
  const int outcomes[4] = {1, 1, 0, 1};
  for (int i = 0; i < 4; ++i) {
    samples[static_cast<std::size_t>(i)].forecast_p = forecasts[i];
    samples[static_cast<std::size_t>(i)].q10 = -1.0;
    samples[static_cast<std::size_t>(i)].q90 = 1.0;
    samples[static_cast<std::size_t>(i)].signed_error_m = outcomes[i] ? 0.0 : 9.0;
  }
  FidelityResult fr = compute_fidelity(samples, FidelityMode::Fine);
  require(std::abs(fr.brier - 0.0725) <= 1e-12, "Brier fixture != 0.0725");
  require(std::abs(fr.fidelity - 0.9275) <= 1e-12, "fidelity fixture != 0.9275");

  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const int k = 2 + static_cast<int>(rng.below(7));
    const int n = 1 + static_cast<int>(rng.below(40));
    std::vector<std::vector<double>> preds;
    std::vector<int> executed;
    for (int i = 0; i < n; ++i) {
      std::vector<double> p(static_cast<std::size_t>(k));
      double total = 0.0;
      for (double& v : p) {
        v = rng.next_unit_pos();
        total += v;
      }
      for (double& v : p) v /= total;
      preds.push_back(std::move(p));
      executed.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(k))));
    }
    double point = compute_correctness(preds, executed, CorrectnessMode::Point);
    double dist = compute_correctness(preds, executed, CorrectnessMode::Distribution);
    require(dist >= point, "correctness_distribution < correctness_point");
  }

  std::vector<EpisodeSummary> eps(100);
  for (int i = 0; i < 100; ++i)
    eps[static_cast<std::size_t>(i)].outcome =
        i < 99 ? EpisodeOutcome::DetectedInTime : EpisodeOutcome::Collision;
  Requirement req;
  req.wildcard = true;
  req.min_rate = 0.99;
  auto entries = compute_reliability(eps, {req});
  require(entries[0].met, "99/100 at 0.99 not reported met");
}

// --------------------------------------------------------------------------
// 5. Desk-scale pipeline analogue.
// --------------------------------------------------------------------------
void criterion_desk_pipeline(Context& ctx) {
  ctx.desk_workdir = fresh_dir("competency_acceptance_desk");
  ctx.desk_cfg = PipelineConfig{};  // spec defaults: n=4000, uniform mix
  ctx.desk_cfg.episodes = 50;

  stage_gen_data(ctx.desk_cfg, ctx.desk_workdir);
  stage_train(ctx.desk_cfg, ctx.desk_workdir);
  stage_strategies(ctx.desk_cfg, ctx.desk_workdir);
  stage_conditions(ctx.desk_cfg, ctx.desk_workdir);
  stage_predictors(ctx.desk_cfg, ctx.desk_workdir);
  stage_evaluate(ctx.desk_cfg, ctx.desk_workdir);
  stage_simulate(ctx.desk_cfg, ctx.desk_workdir);
  stage_report(ctx.desk_cfg, ctx.desk_workdir);

  // (a) assess MSE beats the constant predictor.
  json train_report = json::parse(slurp(ctx.desk_workdir / artifact::kTrainReport));
  double assess_mse = train_report.at("final_assess_mse");
  Dataset ds = load_dataset((ctx.desk_workdir / artifact::kDataset).string());
  double mean = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (ds.split[i] == Split::Assess) {
      mean += ds.samples[i].true_distance_m;
      ++n;
    }
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (ds.split[i] == Split::Assess) {
      double d = ds.samples[i].true_distance_m - mean;
      var += d * d;
    }
  var /= static_cast<double>(n);
  require(assess_mse < var, "assess MSE " + std::to_string(assess_mse) +
                                " does not beat label variance " + std::to_string(var));

  // (b) time_of_day is controlling and identified by the theta probe.
  json metrics = json::parse(slurp(ctx.desk_workdir / artifact::kMetrics));
  bool tod_ok = false;
  double tod_probe = 0.0;
  for (const auto& f : metrics.at("coverage_factors"))
    if (f.at("name") == "time_of_day") {
      tod_probe = f.at("probe_balanced_accuracy");
      tod_ok = f.at("controlling").get<bool>() && f.at("identified").get<bool>() &&
               tod_probe >= 0.80;
    }
  require(tod_ok, "time_of_day not identified (probe balanced accuracy " +
                      std::to_string(tod_probe) + ")");

  // (c) correctness ordering and better-than-chance point accuracy.
  double corr_point = metrics.at("correctness_point");
  double corr_dist = metrics.at("correctness_distribution");
  StrategyModel strategies =
      load_strategy_model((ctx.desk_workdir / artifact::kStrategy).string());
  require(corr_dist >= corr_point, "correctness_distribution < correctness_point");
  double chance = 1.0 / static_cast<double>(strategies.k) + 0.1;
  require(corr_point >= chance, "correctness_point " + std::to_string(corr_point) +
                                    " below chance+0.1 = " + std::to_string(chance));

  // (d) fine fidelity.
  double fid_fine = metrics.at("fidelity_fine");
  require(fid_fine >= 0.7, "fidelity_fine " + std::to_string(fid_fine) + " < 0.7");
}

// --------------------------------------------------------------------------
// 6. Reliability gating on a day-trained agent at night.
// --------------------------------------------------------------------------
void criterion_gating(Context&) {
  fs::path dir = fresh_dir("competency_acceptance_gating");
  PipelineConfig cfg;
  cfg.master_seed = 77;
  cfg.dataset_n = 2000;
  cfg.dataset_weights.time_of_day = {1.0, 0.0, 0.0};  // day-only training
  stage_gen_data(cfg, dir);
  stage_train(cfg, dir);
  stage_strategies(cfg, dir);
  stage_conditions(cfg, dir);
  stage_predictors(cfg, dir);

  Agent agent = load_agent((dir / artifact::kAgent).string());
  ModelBundle bundle = load_model_bundle(dir);
  Requirement req = parse_requirement("WHEN * REQUIRE DETECT_WITHIN 8 M RATE >= 0.99");

  FactorWeights night;
  night.time_of_day = {0.0, 0.0, 1.0};
  SimEstimator est = &agent;
  const std::size_t episodes = 100;
  const std::uint64_t batch_seed = 4242;

  BatchResult ungated = run_batch(episodes, night, est, nullptr, batch_seed);
  GuardBundle guard;
  guard.models = &bundle;
  guard.requirements = {req};
  BatchResult gated = run_batch(episodes, night, est, &guard, batch_seed);

  double ungated_rate =
      static_cast<double>(ungated.overall.detected) / static_cast<double>(episodes);
  double gated_safe_rate =
      static_cast<double>(gated.overall.detected + gated.overall.handed_off) /
      static_cast<double>(episodes);
  require(gated_safe_rate >= ungated_rate,
          "gated detection+handoff " + std::to_string(gated_safe_rate) +
              " < ungated detection " + std::to_string(ungated_rate));

  std::size_t risky = 0, risky_with_fallback = 0;
  for (const EpisodeLog& log : gated.episodes) {
    bool any_risk = false, any_fallback = false;
    for (const TickRecord& t : log.ticks) {
      if (t.p_miss > 0.01) any_risk = true;
      if (t.action != ActionKind::Proceed) any_fallback = true;
    }
    if (any_risk) {
      ++risky;
      if (any_fallback) ++risky_with_fallback;
    }
  }
  if (risky > 0)
    require(static_cast<double>(risky_with_fallback) >= 0.9 * static_cast<double>(risky),
            "fallback issued in only " + std::to_string(risky_with_fallback) + "/" +
                std::to_string(risky) + " risky night episodes");
}

// --------------------------------------------------------------------------
// 7. Determinism: byte-identical reruns, worker-count independence.
// --------------------------------------------------------------------------
void criterion_determinism(Context&) {
  PipelineConfig cfg;
  cfg.master_seed = 555;
  cfg.dataset_n = 300;
  cfg.agent_hp.epochs = 4;
  cfg.v_vis = 16;
  cfg.topics = 8;
  cfg.hdp_sweeps = 100;
  cfg.hdp_burn_in = 40;
  cfg.perf_cells = 6;
  cfg.logistic_epochs = 200;
  cfg.episodes = 6;
  cfg.k_mode = KMode::Fixed;
  cfg.fixed_k = 3;

  fs::path a = fresh_dir("competency_acceptance_det_a");
  fs::path b = fresh_dir("competency_acceptance_det_b");
  for (const fs::path& dir : {a, b}) {
    stage_gen_data(cfg, dir);
    stage_train(cfg, dir);
    stage_strategies(cfg, dir);
    stage_conditions(cfg, dir);
    stage_predictors(cfg, dir);
    stage_evaluate(cfg, dir);
    stage_simulate(cfg, dir);
    stage_report(cfg, dir);
  }
  for (const char* name :
       {artifact::kDataset, artifact::kAgent, artifact::kTrainReport, artifact::kStrategy,
        artifact::kAffinity, artifact::kConditions, artifact::kPredictors, artifact::kMetrics,
        artifact::kEpisodes, artifact::kSimSummary, artifact::kReport, artifact::kPlotData})
    require(slurp(a / name) == slurp(b / name),
            std::string("artifact differs across reruns: ") + name);

  // Worker-count independence.
  Dataset d1 = generate_dataset(64, 9, {}, 1);
  Dataset d4 = generate_dataset(64, 9, {}, 4);
  fs::path w1 = a / "w1.bin", w4 = a / "w4.bin";
  save_dataset(d1, w1.string());
  save_dataset(d4, w4.string());
  require(slurp(w1) == slurp(w4), "dataset generation depends on worker count");

  BatchResult b1 = run_batch(12, {}, BiasedEstimator{1.0}, nullptr, 5, 1);
  BatchResult b4 = run_batch(12, {}, BiasedEstimator{1.0}, nullptr, 5, 4);
  require(b1.overall.detected == b4.overall.detected &&
              b1.overall.collisions == b4.overall.collisions &&
              b1.by_tags.size() == b4.by_tags.size(),
          "batch summary depends on worker count");
  for (std::size_t i = 0; i < b1.episodes.size(); ++i)
    require(b1.episodes[i].ticks.size() == b4.episodes[i].ticks.size(),
            "episode logs depend on worker count");
}

// --------------------------------------------------------------------------
// 8. Novelty on luminance-inverted images.
// --------------------------------------------------------------------------
void criterion_novelty(Context& ctx) {
  require(fs::exists(ctx.desk_workdir / artifact::kConditions),
          "criterion 5 artifacts missing");
  Dataset ds = load_dataset((ctx.desk_workdir / artifact::kDataset).string());
  ModelBundle bundle = load_model_bundle(ctx.desk_workdir);

  std::size_t train_flagged = 0, train_total = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.split[i] != Split::Train) continue;
    Document d = tokenize(ds.samples[i], bundle.codebook, bundle.vocab);
    if (novelty(bundle.conditions, d).flag) ++train_flagged;
    ++train_total;
  }
  double train_rate = static_cast<double>(train_flagged) / static_cast<double>(train_total);
  require(train_rate <= 0.011, "training flag rate " + std::to_string(train_rate) +
                                   " exceeds the 1st-percentile design");

  std::size_t inv_flagged = 0, inv_total = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.split[i] != Split::Assess) continue;
    Sample s;
    s.image = ds.samples[i].image;
    for (double& p : s.image.pixels) p = 1.0 - p;
    Document d = tokenize(s, bundle.codebook, bundle.vocab);
    if (novelty(bundle.conditions, d).flag) ++inv_flagged;
    ++inv_total;
  }
  double inv_rate = static_cast<double>(inv_flagged) / static_cast<double>(inv_total);
  double bar = std::max(10.0 * train_rate, 0.05);
  require(inv_rate >= bar, "inverted flag rate " + std::to_string(inv_rate) +
                               " below required " + std::to_string(bar) +
                               " (train rate " + std::to_string(train_rate) + ")");
}

struct Criterion {
  int id;
  const char* name;
  std::function<void(Context&)> run;
};

}  // namespace

int main() {
  Context ctx;
  std::vector<Criterion> criteria = {
      {1, "hdp-sampler-oracle", criterion_hdp_oracle},
      {2, "gradient-fidelity", criterion_gradient},
      {3, "clustering-oracle", criterion_clustering},
      {4, "metric-identities", criterion_metric_identities},
      {5, "desk-scale-pipeline", criterion_desk_pipeline},
      {6, "reliability-gating", criterion_gating},
      {7, "determinism", criterion_determinism},
      {8, "novelty-inverted-images", criterion_novelty},
  };

  int failures = 0;
  for (auto& c : criteria) {
    auto start = std::chrono::steady_clock::now();
    try {
      c.run(ctx);
      double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      std::printf("[PASS] %d %s (%.1fs)\n", c.id, c.name, secs);
    } catch (const std::exception& e) {
      double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      std::printf("[FAIL] %d %s (%.1fs): %s\n", c.id, c.name, secs, e.what());
      ++failures;
    }
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
