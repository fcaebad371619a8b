#pragma once
// The four assessment metrics: coverage (controlling factors recoverable
// from conditions), correctness (predicted vs executed strategy), fidelity
// (Brier score of in-band forecasts) and reliability (operator requirements
// met per episode).

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "competency/core.hpp"
#include "competency/guard.hpp"

namespace competency {

struct FactorColumn {
  std::string name;
  std::vector<int> levels;  // per-sample level index
  int n_levels = 0;
};

struct CoverageOptions {
  double spread_delta_m = 0.25;
  int permutations = 1000;
  double alpha = 0.05;
  double probe_threshold = 0.80;
  std::uint64_t seed = 0x5EED0004ull;
};

struct CoverageFactorDetail {
  std::string name;
  double spread_m = 0.0;
  double p_value = 1.0;
  bool controlling = false;
  double probe_balanced_accuracy = 0.0;
  bool identified = false;
};

struct CoverageResult {
  std::optional<double> coverage;  // empty when no factor is controlling
  int controlling_count = 0;
  int identified_count = 0;
  std::vector<CoverageFactorDetail> factors;
  std::size_t n = 0;
};

[[nodiscard]] CoverageResult compute_coverage(
    const std::vector<std::vector<double>>& thetas, const std::vector<FactorColumn>& factors,
    const std::vector<double>& abs_errors, const CoverageOptions& opts = {});

enum class CorrectnessMode { Point, Distribution };

[[nodiscard]] double compute_correctness(
    const std::vector<std::vector<double>>& predicted, const std::vector<int>& executed,
    CorrectnessMode mode, double credible_mass = 0.95);

struct FidelitySample {
  double forecast_p = 0.0;  // calibrated in-band probability (fine mode)
  double q10 = 0.0, q90 = 0.0;
  double signed_error_m = 0.0;
  std::string group;  // weather x time_of_day tag (coarse mode)
};

enum class FidelityMode { Coarse, Fine };

struct FidelityResult {
  double fidelity = 0.0;
  double brier = 0.0;
  std::size_t n = 0;
};

// Coarse mode replaces each sample's forecast with its group's pooled
// calibration rate, which must be supplied.
[[nodiscard]] FidelityResult compute_fidelity(
    const std::vector<FidelitySample>& samples, FidelityMode mode,
    const std::map<std::string, double>* group_rates = nullptr);

enum class EpisodeOutcome { DetectedInTime, Collision, HandedOff };

struct EpisodeSummary {
  std::map<std::string, std::string> tags;
  EpisodeOutcome outcome = EpisodeOutcome::DetectedInTime;
};

struct ReliabilityEntry {
  std::string requirement;  // canonical text
  double required_rate = 0.0;
  std::optional<double> achieved_rate;  // empty when no episodes match
  bool met = false;
  std::size_t matching = 0, detected = 0, handed_off = 0;
};

[[nodiscard]] std::vector<ReliabilityEntry> compute_reliability(
    const std::vector<EpisodeSummary>& episodes, const std::vector<Requirement>& requirements);

struct MetricsReport {
  std::optional<double> coverage;
  double correctness_point = 0.0;
  double correctness_distribution = 0.0;
  double fidelity_coarse = 0.0;
  double fidelity_fine = 0.0;
  std::vector<ReliabilityEntry> reliability;
  std::size_t n_coverage = 0, n_correctness = 0, n_fidelity = 0, n_episodes = 0;
  std::vector<CoverageFactorDetail> coverage_factors;
};

}  // namespace competency
