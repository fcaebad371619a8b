#pragma once
// Competency predictors over condition vectors: a multinomial logistic
// strategy classifier and a cell-based signed-error band regressor with
// empirically calibrated in-band probabilities.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "competency/conditions.hpp"
#include "competency/core.hpp"
#include "competency/strategy.hpp"

namespace competency {

struct LogisticHyper {
  double lr = 0.1;
  int epochs = 500;
  double lambda = 1e-3;  // L2 on non-intercept weights
};

struct StrategyPredictor {
  int classes = 0;
  int dim = 0;
  std::vector<double> weights;  // classes x (dim + 1), intercept last
  bool diverged = false;        // stopped by the |w| > 1e3 guard
};

// Full-batch gradient descent from zero init; deterministic. The loss must
// not increase across steps: the first increase halves the learning rate,
// a second one raises NumericError.
[[nodiscard]] StrategyPredictor fit_strategy_predictor(
    const std::vector<std::vector<double>>& thetas, const std::vector<int>& strategy_ids,
    int n_classes, const LogisticHyper& hp = {});

[[nodiscard]] std::vector<double> predict_strategy_distribution(
    const StrategyPredictor& pred, const ConditionVector& theta);

// Argmax with ties toward the lowest id.
[[nodiscard]] int argmax_strategy(const std::vector<double>& distribution);

struct PerfCell {
  std::vector<double> centroid;
  double q10 = 0.0, q90 = 0.0, mean = 0.0;  // signed error, meters
  double in_band_rate = 0.0;                // from the calibration split
  int n_fit = 0, n_calib = 0;
};

struct PerformancePredictor {
  std::vector<PerfCell> cells;
  double pooled_calibration_rate = 0.0;
};

struct PerfOptions {
  int cells = 16;
  int min_support = 5;  // cells below this merge into their neighbors
  std::uint64_t seed = 0x5EED0003ull;
};

// calibration_mask marks samples used only to measure the in-band rate;
// quantiles come from the remaining (fit) samples.
[[nodiscard]] PerformancePredictor fit_performance_predictor(
    const std::vector<std::vector<double>>& thetas,
    const std::vector<double>& signed_errors_m, const std::vector<bool>& calibration_mask,
    const PerfOptions& opts = {});

struct ErrorBand {
  double q10 = 0.0, q90 = 0.0, mean = 0.0;
  double in_band_probability = 0.0;
  int cell = 0;
};

[[nodiscard]] ErrorBand predict_error_band(const PerformancePredictor& pred,
                                           const ConditionVector& theta);

struct CompetencyEstimate {
  ConditionVector theta;
  NoveltyScore novelty;
  std::vector<double> strategy_distribution;
  ErrorBand error_band;
};

// Everything needed to estimate competency from a bare image.
struct ModelBundle {
  Codebook codebook;
  Vocabulary vocab;
  ConditionModel conditions;
  StrategyModel strategies;
  StrategyPredictor strategy_predictor;
  PerformancePredictor performance_predictor;
  int fold_in_sweeps = 50;
  std::uint64_t infer_seed = kInferSeed;
};

// Tokenize (visual words only) -> theta -> novelty -> strategy distribution
// -> error band. Takes only the image; the true label is never visible here.
[[nodiscard]] CompetencyEstimate estimate_competency(const ModelBundle& bundle,
                                                     const Image& image);

void save_predictors(const StrategyPredictor& sp, const PerformancePredictor& pp,
                     const std::string& path);
struct LoadedPredictors {
  StrategyPredictor strategy;
  PerformancePredictor performance;
};
[[nodiscard]] LoadedPredictors load_predictors(const std::string& path);

}  // namespace competency
