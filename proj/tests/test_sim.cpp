#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "competency/sim.hpp"
#include "support/fixtures.hpp"

using namespace competency;

namespace {

EpisodeConfig day_episode(std::uint64_t seed = 1) {
  EpisodeConfig cfg;
  cfg.seed = seed;
  return cfg;
}

Requirement wildcard_req(double rate) {
  Requirement r;
  r.wildcard = true;
  r.threshold_m = 8.0;
  r.min_rate = rate;
  return r;
}

}  // namespace

TEST_CASE("oracle estimator detects in time without a premature flag") {
  EpisodeLog log = run_episode(OracleEstimator{}, nullptr, day_episode());
  CHECK(log.outcome == EpisodeOutcome::DetectedInTime);
  CHECK_FALSE(log.premature);
  // Maneuver fires at the first tick with true distance <= 8: d = 30 - t.
  CHECK(log.ticks.back().true_m == doctest::Approx(8.0));
}

TEST_CASE("blind constant estimator collides") {
  EpisodeLog log = run_episode(ConstantEstimator{100.0}, nullptr, day_episode());
  CHECK(log.outcome == EpisodeOutcome::Collision);
}

TEST_CASE("negative bias triggers early") {
  // -5 m bias: estimate <= 8 at true distance 13 > 12 -> premature, detected.
  EpisodeLog early = run_episode(BiasedEstimator{-5.0}, nullptr, day_episode());
  CHECK(early.outcome == EpisodeOutcome::DetectedInTime);
  CHECK(early.premature);
  CHECK(early.ticks.back().true_m == doctest::Approx(13.0));

  // -4 m bias triggers exactly at 12 m, which the strict rule does not flag.
  EpisodeLog boundary = run_episode(BiasedEstimator{-4.0}, nullptr, day_episode());
  CHECK(boundary.outcome == EpisodeOutcome::DetectedInTime);
  CHECK_FALSE(boundary.premature);
  CHECK(boundary.ticks.back().true_m == doctest::Approx(12.0));
}

TEST_CASE("true distance decreases at constant speed until the maneuver") {
  EpisodeLog log = run_episode(OracleEstimator{}, nullptr, day_episode());
  for (std::size_t i = 1; i < log.ticks.size(); ++i)
    CHECK(log.ticks[i].true_m == doctest::Approx(log.ticks[i - 1].true_m - 1.0));
}

TEST_CASE("episode config validation") {
  EpisodeConfig bad = day_episode();
  bad.trigger_m = 1.0;  // must exceed the margin
  CHECK_THROWS_AS((void)run_episode(OracleEstimator{}, nullptr, bad), ValidationError);
  GuardBundle empty;
  CHECK_THROWS_AS((void)run_episode(OracleEstimator{}, &empty, day_episode()), ConfigError);
}

TEST_CASE("oracle batch detects everything") {
  BatchResult batch = run_batch(10, {}, OracleEstimator{}, nullptr, 5);
  CHECK(batch.overall.episodes == 10);
  CHECK(batch.overall.detected == 10);
  REQUIRE(batch.overall.detection_rate.has_value());
  CHECK(*batch.overall.detection_rate == doctest::Approx(1.0));
}

TEST_CASE("batches are deterministic and worker-count independent") {
  BatchResult a = run_batch(16, {}, BiasedEstimator{2.0}, nullptr, 77, 1);
  BatchResult b = run_batch(16, {}, BiasedEstimator{2.0}, nullptr, 77, 4);
  REQUIRE(a.episodes.size() == b.episodes.size());
  for (std::size_t i = 0; i < a.episodes.size(); ++i) {
    CHECK(a.episodes[i].outcome == b.episodes[i].outcome);
    CHECK(a.episodes[i].tags == b.episodes[i].tags);
    REQUIRE(a.episodes[i].ticks.size() == b.episodes[i].ticks.size());
    for (std::size_t t = 0; t < a.episodes[i].ticks.size(); ++t)
      CHECK(a.episodes[i].ticks[t].estimate_m == b.episodes[i].ticks[t].estimate_m);
  }
}

TEST_CASE("episode logs replay exactly from seeds") {
  testsupport::MiniFixture fx = testsupport::fit_mini_fixture();
  GuardBundle guard;
  guard.models = &fx.bundle;
  guard.requirements = {wildcard_req(0.99)};
  EpisodeConfig cfg = day_episode(42);
  cfg.factors.time_of_day = TimeOfDay::Night;
  SimEstimator est = &fx.agent;
  EpisodeLog a = run_episode(est, &guard, cfg);
  EpisodeLog b = run_episode(est, &guard, cfg);
  REQUIRE(a.ticks.size() == b.ticks.size());
  CHECK(a.outcome == b.outcome);
  for (std::size_t t = 0; t < a.ticks.size(); ++t) {
    CHECK(a.ticks[t].estimate_m == b.ticks[t].estimate_m);
    CHECK(a.ticks[t].p_miss == b.ticks[t].p_miss);
    CHECK(a.ticks[t].action == b.ticks[t].action);
  }
}

TEST_CASE("night-degraded estimator shows up in the per-tag summaries") {
  // A dark-blind estimator misses at night; per-tag rates split accordingly.
  FactorWeights mix;
  mix.time_of_day = {1.0, 0.0, 1.0};  // half day, half night
  mix.weather = {1.0, 0.0, 0.0, 0.0};
  SimEstimator est = DarkBlindEstimator{};
  BatchResult batch = run_batch(60, mix, est, nullptr, 99);

  std::size_t day_det = 0, day_eps = 0, night_det = 0, night_eps = 0;
  for (const auto& [key, s] : batch.by_tags) {
    if (key.find("time=day") != std::string::npos) {
      day_det += s.detected;
      day_eps += s.episodes;
    }
    if (key.find("time=night") != std::string::npos) {
      night_det += s.detected;
      night_eps += s.episodes;
    }
  }
  REQUIRE(day_eps > 5);
  REQUIRE(night_eps > 5);
  double day_rate = static_cast<double>(day_det) / static_cast<double>(day_eps);
  double night_rate = static_cast<double>(night_det) / static_cast<double>(night_eps);
  CHECK(night_rate < day_rate);
  CHECK(day_rate == doctest::Approx(1.0));
}

TEST_CASE("a day-only-trained CNN degrades to premature triggers at night") {
  testsupport::MiniOptions opt;
  opt.weights.time_of_day = {1.0, 0.0, 0.0};  // train on day only
  opt.weights.weather = {1.0, 0.0, 0.0, 0.0};
  opt.n = 240;
  opt.epochs = 6;
  testsupport::MiniFixture fx = testsupport::fit_mini_fixture(opt);

  FactorWeights mix;
  mix.time_of_day = {1.0, 0.0, 1.0};
  mix.weather = {1.0, 0.0, 0.0, 0.0};
  SimEstimator est = &fx.agent;
  BatchResult batch = run_batch(60, mix, est, nullptr, 99);

  std::size_t night_prem = 0, night_eps = 0, day_prem = 0, day_eps = 0;
  for (const auto& [key, s] : batch.by_tags) {
    if (key.find("time=night") != std::string::npos) {
      night_prem += s.premature;
      night_eps += s.episodes;
    } else {
      day_prem += s.premature;
      day_eps += s.episodes;
    }
  }
  REQUIRE(night_eps > 5);
  // Night behavior is uncalibrated: every episode ends in a premature
  // maneuver (or worse), unlike the day side.
  CHECK(night_prem == night_eps);
  CHECK(day_prem < day_eps);
}

TEST_CASE("gating never adds collisions on paired seeds") {
  testsupport::MiniFixture fx = testsupport::fit_mini_fixture();
  GuardBundle guard;
  guard.models = &fx.bundle;
  guard.requirements = {wildcard_req(0.99)};
  SimEstimator est = &fx.agent;

  BatchResult ungated = run_batch(24, {}, est, nullptr, 31);
  BatchResult gated = run_batch(24, {}, est, &guard, 31);
  for (std::size_t i = 0; i < 24; ++i) {
    if (gated.episodes[i].outcome == EpisodeOutcome::Collision)
      CHECK(ungated.episodes[i].outcome == EpisodeOutcome::Collision);
  }
}

TEST_CASE("handed-off episodes drop out of the detection tallies") {
  // A corrupt band makes the monitor fail closed on the first tick.
  testsupport::MiniFixture fx = testsupport::fit_mini_fixture();
  ModelBundle corrupt = fx.bundle;
  for (auto& cell : corrupt.performance_predictor.cells) {
    cell.q10 = 1.0;
    cell.q90 = -1.0;
  }
  GuardBundle guard;
  guard.models = &corrupt;
  guard.requirements = {wildcard_req(0.99)};
  SimEstimator est = &fx.agent;
  BatchResult batch = run_batch(5, {}, est, &guard, 3);
  CHECK(batch.overall.handed_off == 5);
  CHECK(batch.overall.detected == 0);
  CHECK(batch.overall.collisions == 0);
  CHECK_FALSE(batch.overall.detection_rate.has_value());
  for (const auto& log : batch.episodes) {
    CHECK(log.outcome == EpisodeOutcome::HandedOff);
    CHECK(log.ticks.size() == 1);
  }
}

TEST_CASE("reduce-speed halves the per-tick decrement") {
  // Estimator far above threshold, novelty forced via a requirement that
  // always triggers: use min_rate 1.0 so any positive miss probability trips.
  testsupport::MiniFixture fx = testsupport::fit_mini_fixture();
  GuardBundle guard;
  guard.models = &fx.bundle;
  guard.requirements = {wildcard_req(1.0)};
  SimEstimator est = ConstantEstimator{20.0};
  EpisodeLog log = run_episode(est, &guard, day_episode(8));
  // Tick 0 issues ReduceSpeed; the next tick advances by half a meter and
  // escalates to the preemptive maneuver.
  REQUIRE(log.ticks.size() == 2);
  CHECK(log.ticks[0].action == ActionKind::ReduceSpeed);
  CHECK(log.ticks[1].true_m == doctest::Approx(log.ticks[0].true_m - 0.5));
  CHECK(log.ticks[1].action == ActionKind::PreemptiveManeuver);
  CHECK(log.outcome == EpisodeOutcome::DetectedInTime);
  CHECK(log.premature);
}

TEST_CASE("episode JSON-lines export carries ticks plus a trailer") {
  namespace fs = std::filesystem;
  BatchResult batch = run_batch(2, {}, OracleEstimator{}, nullptr, 12);
  fs::path dir = fs::temp_directory_path() / "competency_sim_test";
  fs::create_directories(dir);
  const std::string path = (dir / "episodes.jsonl").string();
  save_episode_logs(batch.episodes, path);
  std::ifstream f(path);
  std::string line;
  std::size_t lines = 0, trailers = 0;
  while (std::getline(f, line)) {
    ++lines;
    if (line.find("\"outcome\"") != std::string::npos) ++trailers;
  }
  CHECK(trailers == 2);
  CHECK(lines == batch.episodes[0].ticks.size() + batch.episodes[1].ticks.size() + 2);
  fs::remove_all(dir);
}
