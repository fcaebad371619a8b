#pragma once
// Closed-loop 1-D vehicle simulation: the obstacle approaches at constant
// speed, the estimator sees rendered frames, a maneuver must fire before the
// safety margin. The optional guard can slow the vehicle, force a maneuver
// or hand the episode off.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "competency/agent.hpp"
#include "competency/guard.hpp"
#include "competency/metrics.hpp"
#include "competency/predictors.hpp"
#include "competency/scene.hpp"

namespace competency {

struct SceneFactors {
  ObstacleKind obstacle_kind = ObstacleKind::Box;
  Weather weather = Weather::Clear;
  TimeOfDay time_of_day = TimeOfDay::Day;
  double lateral_offset = 0.0;

  [[nodiscard]] std::map<std::string, std::string> tags() const;
};

struct EpisodeConfig {
  double initial_m = 30.0;
  double speed_mps = 10.0;
  double tick_s = 0.1;
  double trigger_m = 8.0;    // agent maneuvers when estimate <= trigger
  double margin_m = 2.0;     // detected in time iff maneuver fires at true >= margin
  double premature_m = 12.0; // flag maneuvers fired at true > premature
  SceneFactors factors;
  std::uint64_t seed = 0;
};

// Estimators: the trained CNN, plus test stubs that are functions of the
// true distance and the frame (oracle, constant, biased, dark-blind). Stubs
// return an empty trace.
struct OracleEstimator {};
struct ConstantEstimator {
  double value_m = 0.0;
};
struct BiasedEstimator {
  double bias_m = 0.0;
};
// Perfect in daylight, stuck high when the frame is dark.
struct DarkBlindEstimator {
  double luminance_threshold = 0.25;
  double blind_estimate_m = 100.0;
};
using SimEstimator = std::variant<const Agent*, OracleEstimator, ConstantEstimator,
                                  BiasedEstimator, DarkBlindEstimator>;

enum class TagMode { GroundTruth, Inferred };

// Probes that recover condition tags from theta, for TagMode::Inferred.
struct TagProbes {
  StrategyPredictor weather;      // levels follow the Weather enum order
  StrategyPredictor time_of_day;  // levels follow the TimeOfDay enum order
};

struct GuardBundle {
  const ModelBundle* models = nullptr;
  std::vector<Requirement> requirements;
  MonitorPolicy policy;
  TagMode tag_mode = TagMode::GroundTruth;
  const TagProbes* probes = nullptr;  // required for TagMode::Inferred
};

struct TickRecord {
  int tick = 0;
  double true_m = 0.0;
  double estimate_m = 0.0;
  ActionKind action = ActionKind::Proceed;
  double p_miss = 0.0;
  bool novelty = false;
};

struct EpisodeLog {
  std::vector<TickRecord> ticks;
  EpisodeOutcome outcome = EpisodeOutcome::Collision;
  bool premature = false;
  std::map<std::string, std::string> tags;
  std::uint64_t seed = 0;
};

[[nodiscard]] EpisodeLog run_episode(const SimEstimator& estimator,
                                     const GuardBundle* guard, const EpisodeConfig& config);

struct TagSummary {
  std::size_t episodes = 0, detected = 0, collisions = 0, handed_off = 0, premature = 0;
  std::optional<double> detection_rate;  // detected / (episodes - handed_off)
};

struct BatchResult {
  std::vector<EpisodeLog> episodes;
  std::map<std::string, TagSummary> by_tags;  // key: "time=...,weather=..."
  TagSummary overall;
};

// Episode i draws its factors and seed from mix_seed(master_seed, i);
// results are identical for any worker count.
[[nodiscard]] BatchResult run_batch(std::size_t n, const FactorWeights& mix,
                                    const SimEstimator& estimator, const GuardBundle* guard,
                                    std::uint64_t master_seed, int workers = 1);

// JSON-lines export: one record per tick plus a trailer with the outcome.
void save_episode_logs(const std::vector<EpisodeLog>& logs, const std::string& path);
[[nodiscard]] std::vector<EpisodeSummary> episode_summaries(const std::vector<EpisodeLog>& logs);

}  // namespace competency
