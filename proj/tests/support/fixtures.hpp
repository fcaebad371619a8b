#pragma once
// Small end-to-end fixture: a reduced dataset and a fully fitted model
// bundle, assembled in memory the same way the pipeline stages do.

#include <cmath>
#include <cstdint>
#include <vector>

#include "competency/agent.hpp"
#include "competency/conditions.hpp"
#include "competency/predictors.hpp"
#include "competency/scene.hpp"
#include "competency/strategy.hpp"

namespace testsupport {

struct MiniOptions {
  competency::FactorWeights weights;
  std::size_t n = 160;
  int epochs = 4;
  int v_vis = 16;
  int topics = 10;
  int sweeps = 150;
  int burn_in = 80;
  competency::KMode k_mode = competency::KMode::Fixed;
  int k = 2;
  std::uint64_t seed = 7;
};

struct MiniFixture {
  competency::Dataset dataset;
  competency::Agent agent;
  competency::ModelBundle bundle;
  std::vector<std::size_t> train_indices;
  std::vector<std::vector<double>> train_traces;
  std::vector<double> train_abs_errors;
  std::vector<double> train_signed_errors;
  std::vector<std::vector<double>> train_thetas;
};

inline MiniFixture fit_mini_fixture(const MiniOptions& opt = {}) {
  using namespace competency;
  MiniFixture fx;
  fx.dataset = generate_dataset(opt.n, opt.seed, opt.weights);

  AgentConfig acfg;
  acfg.init_seed = mix_seed(opt.seed, 1);
  TrainHyper hp;
  hp.epochs = opt.epochs;
  hp.shuffle_seed = mix_seed(opt.seed, 2);
  auto [agent, report] = train(init_agent(acfg), fx.dataset, hp);
  fx.agent = std::move(agent);

  for (std::size_t i = 0; i < fx.dataset.samples.size(); ++i) {
    if (fx.dataset.split[i] != Split::Train) continue;
    ForwardResult r = forward(fx.agent, fx.dataset.samples[i].image);
    fx.train_indices.push_back(i);
    double err = r.estimate_m - fx.dataset.samples[i].true_distance_m;
    fx.train_signed_errors.push_back(err);
    fx.train_abs_errors.push_back(std::abs(err));
    fx.train_traces.push_back(std::move(r.trace.values));
  }

  StrategyOptions sopt;
  sopt.mode = opt.k_mode;
  sopt.k = opt.k;
  sopt.seed = mix_seed(opt.seed, 3);
  fx.bundle.strategies = fit_strategies(fx.train_traces, sopt);

  fx.bundle.codebook = build_codebook(fx.dataset, opt.v_vis, mix_seed(opt.seed, 4));
  fx.bundle.vocab.v_vis = fx.bundle.codebook.vocab();
  fx.bundle.vocab.n_strategies = fx.bundle.strategies.k;
  auto [lo, hi] = error_terciles(fx.train_abs_errors);
  fx.bundle.vocab.tercile_lo = lo;
  fx.bundle.vocab.tercile_hi = hi;

  std::vector<Document> corpus;
  for (std::size_t j = 0; j < fx.train_indices.size(); ++j) {
    CompetencyLabel label{fx.bundle.strategies.assignments[j], fx.train_abs_errors[j]};
    corpus.push_back(tokenize(fx.dataset.samples[fx.train_indices[j]], fx.bundle.codebook,
                              fx.bundle.vocab, label));
  }

  HdpConfig hcfg;
  hcfg.topics = opt.topics;
  hcfg.sweeps = opt.sweeps;
  hcfg.burn_in = opt.burn_in;
  hcfg.seed = mix_seed(opt.seed, 5);
  hcfg.vocab_size = fx.bundle.vocab.size();
  hcfg.n_visual = fx.bundle.vocab.v_vis;
  fx.bundle.conditions = fit_hdp(corpus, hcfg);

  for (std::size_t j = 0; j < fx.train_indices.size(); ++j) {
    Document doc = tokenize(fx.dataset.samples[fx.train_indices[j]], fx.bundle.codebook,
                            fx.bundle.vocab);
    ConditionVector cv =
        infer_conditions(fx.bundle.conditions, doc, 50, mix_seed(opt.seed, 600 + j));
    fx.train_thetas.push_back(cv.theta);
  }

  fx.bundle.strategy_predictor = fit_strategy_predictor(
      fx.train_thetas, fx.bundle.strategies.assignments, fx.bundle.strategies.k);

  std::vector<bool> calib(fx.train_indices.size());
  for (std::size_t j = 0; j < calib.size(); ++j) calib[j] = (j % 4 == 3);
  PerfOptions popt;
  popt.cells = 8;
  popt.seed = mix_seed(opt.seed, 6);
  fx.bundle.performance_predictor =
      fit_performance_predictor(fx.train_thetas, fx.train_signed_errors, calib, popt);
  return fx;
}

}  // namespace testsupport
