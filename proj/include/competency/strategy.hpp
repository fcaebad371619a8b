#pragma once
// Strategies: k-means clusters over standardized activation traces, the
// strategy/condition contingency table, and the strategy-mismatch check.

#include <cstdint>
#include <string>
#include <vector>

#include "competency/core.hpp"

namespace competency {

enum class KMode { Fixed, Auto };

struct StrategyOptions {
  KMode mode = KMode::Auto;
  int k = 0;                   // required when mode == Fixed, in [1, 12]
  bool standardize = true;
  std::uint64_t seed = 0x5EED0001ull;
  int restarts = 4;
};

struct StrategyModel {
  int k = 0;
  std::vector<double> mean, sd;               // per-dimension, sd floored at 1e-9
  std::vector<std::vector<double>> centroids; // in standardized space
  std::vector<int> assignments;               // per training trace
  bool standardized = true;
  bool degenerate = false;                    // auto mode saw identical traces
};

[[nodiscard]] StrategyModel fit_strategies(const std::vector<std::vector<double>>& traces,
                                           const StrategyOptions& opts = {});

struct StrategyAssignment {
  int strategy_id = 0;
  double distance = 0.0;  // Euclidean, standardized space
};

[[nodiscard]] StrategyAssignment assign_strategy(const StrategyModel& model,
                                                 const std::vector<double>& trace);

struct AffinityTable {
  std::vector<std::string> levels;            // column order
  std::vector<std::vector<std::size_t>> counts;  // k x levels
  std::vector<std::vector<double>> freq;      // row-normalized, 0 rows stay 0
};

[[nodiscard]] AffinityTable condition_affinity(const std::vector<int>& assignments,
                                               const std::vector<std::string>& tags);

// True iff the predicted mass on the observed strategy is below the threshold.
[[nodiscard]] bool strategy_mismatch(const std::vector<double>& expected,
                                     int observed, double mass_threshold = 0.05);

void save_strategy_model(const StrategyModel& m, const std::string& path);
[[nodiscard]] StrategyModel load_strategy_model(const std::string& path);

}  // namespace competency
