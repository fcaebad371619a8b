#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "competency/predictors.hpp"
#include "support/fixtures.hpp"

using namespace competency;

namespace {

ConditionVector cv(std::vector<double> theta) {
  ConditionVector v;
  v.theta = std::move(theta);
  return v;
}

}  // namespace

TEST_CASE("separable clusters train to 100% argmax accuracy") {
  std::vector<std::vector<double>> thetas;
  std::vector<int> labels;
  for (int i = 0; i < 20; ++i) {
    thetas.push_back({0.9, 0.1, 0.0});
    labels.push_back(0);
    thetas.push_back({0.1, 0.9, 0.0});
    labels.push_back(1);
  }
  StrategyPredictor sp = fit_strategy_predictor(thetas, labels, 2);
  for (std::size_t i = 0; i < thetas.size(); ++i) {
    auto dist = predict_strategy_distribution(sp, cv(thetas[i]));
    CHECK(argmax_strategy(dist) == labels[i]);
    double sum = 0.0;
    for (double p : dist) sum += p;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("single-class corpus saturates its class probability") {
  std::vector<std::vector<double>> thetas(30, {0.5, 0.5});
  std::vector<int> labels(30, 0);
  LogisticHyper hp;
  hp.lambda = 0.0;
  hp.epochs = 3000;
  StrategyPredictor sp = fit_strategy_predictor(thetas, labels, 2, hp);
  auto dist = predict_strategy_distribution(sp, cv({0.5, 0.5}));
  CHECK(dist[0] >= 0.99);
}

TEST_CASE("zero epochs predicts uniform") {
  LogisticHyper hp;
  hp.epochs = 0;
  StrategyPredictor sp =
      fit_strategy_predictor({{0.2, 0.8}, {0.7, 0.3}}, {0, 1}, 4, hp);
  auto dist = predict_strategy_distribution(sp, cv({0.3, 0.7}));
  for (double p : dist) CHECK(p == doctest::Approx(0.25));
}

TEST_CASE("a +10 logit margin concentrates the softmax") {
  StrategyPredictor sp;
  sp.classes = 3;
  sp.dim = 2;
  sp.weights.assign(3 * 3, 0.0);
  sp.weights[2 * 3 + 2] = 10.0;  // class-2 intercept
  auto dist = predict_strategy_distribution(sp, cv({0.5, 0.5}));
  CHECK(dist[2] > 0.999);
}

TEST_CASE("predictor input validation") {
  CHECK_THROWS_AS((void)fit_strategy_predictor({}, {}, 2), ValidationError);
  CHECK_THROWS_AS((void)fit_strategy_predictor({{1.0}}, {2}, 2), ValidationError);
  StrategyPredictor sp = fit_strategy_predictor({{0.1, 0.9}, {0.9, 0.1}}, {0, 1}, 2);
  CHECK_THROWS_AS((void)predict_strategy_distribution(sp, cv({0.1})), ValidationError);
}

TEST_CASE("constant errors give a degenerate band with full coverage") {
  std::vector<std::vector<double>> thetas(24, {1.0, 0.0});
  std::vector<double> errors(24, 0.5);
  std::vector<bool> calib(24, false);
  for (std::size_t i = 0; i < calib.size(); ++i) calib[i] = (i % 4 == 3);
  PerformancePredictor pp = fit_performance_predictor(thetas, errors, calib);
  ErrorBand band = predict_error_band(pp, cv({1.0, 0.0}));
  CHECK(band.q10 == doctest::Approx(0.5));
  CHECK(band.q90 == doctest::Approx(0.5));
  CHECK(band.mean == doctest::Approx(0.5));
  CHECK(band.in_band_probability == doctest::Approx(1.0));
}

TEST_CASE("nearest-rank quantiles on the -1..8 fixture") {
  // One cell: errors -1, 0, ..., 8. q10 = 1st of 10 = -1; q90 = 9th = 7.
  std::vector<std::vector<double>> thetas;
  std::vector<double> errors;
  for (int i = 0; i < 10; ++i) {
    thetas.push_back({0.0});
    errors.push_back(static_cast<double>(i - 1));
  }
  std::vector<bool> calib(10, false);
  PerfOptions opts;
  opts.cells = 1;
  PerformancePredictor pp = fit_performance_predictor(thetas, errors, calib, opts);
  REQUIRE(pp.cells.size() == 1);
  CHECK(pp.cells[0].q10 == doctest::Approx(-1.0));
  CHECK(pp.cells[0].q90 == doctest::Approx(7.0));
  CHECK(pp.cells[0].mean == doctest::Approx(3.5));
}

TEST_CASE("two error regimes get separate bands; lookup picks the nearer cell") {
  std::vector<std::vector<double>> thetas;
  std::vector<double> errors;
  std::vector<bool> calib;
  Rng rng(5);
  for (int i = 0; i < 40; ++i) {
    thetas.push_back({0.0, 1.0});
    errors.push_back(rng.uniform(-0.1, 0.1));  // tight regime at theta (0,1)
    thetas.push_back({1.0, 0.0});
    errors.push_back(rng.uniform(-5.0, 5.0));  // loose regime at theta (1,0)
    calib.push_back(i % 4 == 3);
    calib.push_back(i % 4 == 3);
  }
  PerfOptions opts;
  opts.cells = 2;
  PerformancePredictor pp = fit_performance_predictor(thetas, errors, calib, opts);
  ErrorBand tight = predict_error_band(pp, cv({0.0, 1.0}));
  ErrorBand loose = predict_error_band(pp, cv({1.0, 0.0}));
  CHECK(tight.q90 - tight.q10 < 0.5);
  CHECK(loose.q90 - loose.q10 > 5.0);

  // Slightly closer to the tight centroid wins the lookup.
  ErrorBand mid = predict_error_band(pp, cv({0.49, 0.51}));
  CHECK(mid.cell == tight.cell);
}

TEST_CASE("under-supported cells merge away") {
  std::vector<std::vector<double>> thetas;
  std::vector<double> errors;
  std::vector<bool> calib;
  for (int i = 0; i < 30; ++i) {
    thetas.push_back({static_cast<double>(i % 3) * 0.01});  // one real clump
    errors.push_back(1.0);
    calib.push_back(false);
  }
  PerfOptions opts;
  opts.cells = 10;
  PerformancePredictor pp = fit_performance_predictor(thetas, errors, calib, opts);
  for (const auto& c : pp.cells) CHECK(c.n_fit >= opts.min_support);
}

TEST_CASE("estimate_competency is deterministic and label-blind") {
  testsupport::MiniFixture fx = testsupport::fit_mini_fixture();
  const Image& img = fx.dataset.samples[1].image;
  CompetencyEstimate a = estimate_competency(fx.bundle, img);
  CompetencyEstimate b = estimate_competency(fx.bundle, img);
  CHECK(a.theta.theta == b.theta.theta);
  CHECK(a.strategy_distribution == b.strategy_distribution);
  CHECK(a.error_band.q10 == b.error_band.q10);
  CHECK(a.novelty.score == b.novelty.score);

  double sum = 0.0;
  for (double p : a.strategy_distribution) {
    CHECK(p >= 0.0);
    sum += p;
  }
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(a.error_band.q10 <= a.error_band.q90);
}

TEST_CASE("night images route to the night-associated strategy") {
  testsupport::MiniOptions opt;
  opt.weights.time_of_day = {1.0, 0.0, 1.0};  // day and night only
  opt.weights.weather = {1.0, 0.0, 0.0, 0.0};
  opt.n = 200;
  testsupport::MiniFixture fx = testsupport::fit_mini_fixture(opt);

  // Affinity: which strategy dominates the night tag?
  std::vector<std::string> tags;
  for (std::size_t i : fx.train_indices)
    tags.push_back(to_string(fx.dataset.samples[i].params.time_of_day));
  AffinityTable table = condition_affinity(fx.bundle.strategies.assignments, tags);
  std::size_t night_col = table.levels[0] == "night" ? 0 : 1;
  REQUIRE(table.levels[night_col] == "night");
  int night_strategy = 0;
  double best = -1.0;
  for (int k = 0; k < fx.bundle.strategies.k; ++k)
    if (table.freq[static_cast<std::size_t>(k)][night_col] > best) {
      best = table.freq[static_cast<std::size_t>(k)][night_col];
      night_strategy = k;
    }

  // Majority of held-out night images should predict that strategy.
  int checked = 0, agreed = 0;
  for (std::size_t i = 0; i < fx.dataset.samples.size() && checked < 20; ++i) {
    if (fx.dataset.split[i] != Split::Assess) continue;
    if (fx.dataset.samples[i].params.time_of_day != TimeOfDay::Night) continue;
    CompetencyEstimate est = estimate_competency(fx.bundle, fx.dataset.samples[i].image);
    if (argmax_strategy(est.strategy_distribution) == night_strategy) ++agreed;
    ++checked;
  }
  REQUIRE(checked > 5);
  CHECK(agreed > checked / 2);
}

TEST_CASE("luminance-inverted images score as novel far more often than training data") {
  testsupport::MiniFixture fx = testsupport::fit_mini_fixture();
  const ConditionModel& m = fx.bundle.conditions;

  std::size_t train_flagged = 0;
  std::vector<double> train_scores;
  for (std::size_t j = 0; j < fx.train_indices.size(); ++j) {
    Document d = tokenize(fx.dataset.samples[fx.train_indices[j]], fx.bundle.codebook,
                          fx.bundle.vocab);
    NoveltyScore ns = novelty(m, d);
    train_scores.push_back(ns.score);
    if (ns.flag) ++train_flagged;
  }
  double train_rate = static_cast<double>(train_flagged) / train_scores.size();
  CHECK(train_rate <= 0.011 + 1.0 / train_scores.size());

  std::size_t flagged = 0, total = 0;
  double mean_inverted = 0.0;
  for (std::size_t i = 0; i < fx.dataset.samples.size(); ++i) {
    if (fx.dataset.split[i] != Split::Assess) continue;
    Image inv = fx.dataset.samples[i].image;
    for (double& p : inv.pixels) p = 1.0 - p;
    CompetencyEstimate est = estimate_competency(fx.bundle, inv);
    mean_inverted += est.novelty.score;
    if (est.novelty.flag) ++flagged;
    ++total;
  }
  double inverted_rate = static_cast<double>(flagged) / static_cast<double>(total);
  mean_inverted /= static_cast<double>(total);

  CHECK(inverted_rate >= std::max(0.05, 5.0 * train_rate));
  CHECK(mean_inverted < nearest_rank_percentile(train_scores, 50.0));
}

TEST_CASE("predictors JSON round trip") {
  namespace fs = std::filesystem;
  StrategyPredictor sp = fit_strategy_predictor({{0.1, 0.9}, {0.9, 0.1}}, {0, 1}, 2);
  std::vector<bool> calib = {false, false, true, false};
  PerformancePredictor pp = fit_performance_predictor(
      {{0.1}, {0.2}, {0.15}, {0.12}}, {1.0, 2.0, 1.5, 1.2}, calib, PerfOptions{1, 1, 3});
  fs::path dir = fs::temp_directory_path() / "competency_pred_test";
  fs::create_directories(dir);
  const std::string path = (dir / "predictors.json").string();
  save_predictors(sp, pp, path);
  LoadedPredictors l = load_predictors(path);
  CHECK(l.strategy.weights == sp.weights);
  CHECK(l.performance.cells.size() == pp.cells.size());
  CHECK(l.performance.cells[0].q10 == pp.cells[0].q10);
  CHECK(l.performance.pooled_calibration_rate == pp.pooled_calibration_rate);
  fs::remove_all(dir);
}
