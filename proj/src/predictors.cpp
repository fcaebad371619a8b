#include "competency/predictors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "competency/cluster.hpp"

namespace competency {

namespace {

constexpr int kPredictorsFormatVersion = 1;
constexpr double kDivergenceBound = 1e3;

std::vector<double> softmax_scores(const std::vector<double>& w, int classes, int dim,
                                   const std::vector<double>& x) {
  std::vector<double> s(static_cast<std::size_t>(classes));
  for (int c = 0; c < classes; ++c) {
    const double* row = w.data() + static_cast<std::size_t>(c) * (dim + 1);
    double acc = row[dim];  // intercept
    for (int d = 0; d < dim; ++d) acc += row[d] * x[static_cast<std::size_t>(d)];
    s[static_cast<std::size_t>(c)] = acc;
  }
  double mx = *std::max_element(s.begin(), s.end());
  double total = 0.0;
  for (double& v : s) {
    v = std::exp(v - mx);
    total += v;
  }
  for (double& v : s) v /= total;
  return s;
}

double nll_loss(const std::vector<double>& w, int classes, int dim,
                const std::vector<std::vector<double>>& xs, const std::vector<int>& ys,
                double lambda) {
  double loss = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    auto p = softmax_scores(w, classes, dim, xs[i]);
    loss -= std::log(std::max(p[static_cast<std::size_t>(ys[i])], 1e-300));
  }
  loss /= static_cast<double>(xs.size());
  double reg = 0.0;
  for (int c = 0; c < classes; ++c)
    for (int d = 0; d < dim; ++d) {
      double v = w[static_cast<std::size_t>(c) * (dim + 1) + static_cast<std::size_t>(d)];
      reg += v * v;
    }
  return loss + 0.5 * lambda * reg;
}

double nearest_rank_q(std::vector<double> v, double q) {
  return nearest_rank_percentile(std::move(v), q * 100.0);
}

}  // namespace

StrategyPredictor fit_strategy_predictor(const std::vector<std::vector<double>>& thetas,
                                         const std::vector<int>& strategy_ids,
                                         int n_classes, const LogisticHyper& hp) {
  if (thetas.empty()) throw ValidationError("fit_strategy_predictor: empty input");
  if (thetas.size() != strategy_ids.size())
    throw ValidationError("fit_strategy_predictor: length mismatch");
  if (n_classes < 1) throw ValidationError("fit_strategy_predictor: need >= 1 class");
  const int dim = static_cast<int>(thetas[0].size());
  for (const auto& t : thetas)
    if (static_cast<int>(t.size()) != dim)
      throw ValidationError("fit_strategy_predictor: ragged inputs");
  for (int y : strategy_ids)
    if (y < 0 || y >= n_classes)
      throw ValidationError("fit_strategy_predictor: label out of range");

  StrategyPredictor sp;
  sp.classes = n_classes;
  sp.dim = dim;
  sp.weights.assign(static_cast<std::size_t>(n_classes) * (dim + 1), 0.0);

  const double n = static_cast<double>(thetas.size());
  double lr = hp.lr;
  bool halved = false;
  double prev_loss = nll_loss(sp.weights, n_classes, dim, thetas, strategy_ids, hp.lambda);

  std::vector<double> grad(sp.weights.size());
  for (int epoch = 0; epoch < hp.epochs; ++epoch) {
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t i = 0; i < thetas.size(); ++i) {
      auto p = softmax_scores(sp.weights, n_classes, dim, thetas[i]);
      for (int c = 0; c < n_classes; ++c) {
        double delta = p[static_cast<std::size_t>(c)] - (c == strategy_ids[i] ? 1.0 : 0.0);
        double* g = grad.data() + static_cast<std::size_t>(c) * (dim + 1);
        for (int d = 0; d < dim; ++d) g[d] += delta * thetas[i][static_cast<std::size_t>(d)];
        g[dim] += delta;
      }
    }
    for (int c = 0; c < n_classes; ++c) {
      double* g = grad.data() + static_cast<std::size_t>(c) * (dim + 1);
      const double* w = sp.weights.data() + static_cast<std::size_t>(c) * (dim + 1);
      for (int d = 0; d < dim; ++d) g[d] = g[d] / n + hp.lambda * w[d];
      g[dim] /= n;  // intercept unregularized
    }
    for (std::size_t i = 0; i < sp.weights.size(); ++i) sp.weights[i] -= lr * grad[i];

    double wmax = 0.0;
    for (double w : sp.weights) wmax = std::max(wmax, std::abs(w));
    if (wmax > kDivergenceBound) {
      sp.diverged = true;
      break;
    }

    double loss = nll_loss(sp.weights, n_classes, dim, thetas, strategy_ids, hp.lambda);
    if (loss > prev_loss + 1e-12) {
      if (halved) throw NumericError("strategy predictor loss increased twice");
      halved = true;
      lr *= 0.5;
    }
    prev_loss = loss;
  }
  return sp;
}

std::vector<double> predict_strategy_distribution(const StrategyPredictor& pred,
                                                  const ConditionVector& theta) {
  if (static_cast<int>(theta.theta.size()) != pred.dim)
    throw ValidationError("predict_strategy_distribution: dimension mismatch");
  return softmax_scores(pred.weights, pred.classes, pred.dim, theta.theta);
}

int argmax_strategy(const std::vector<double>& distribution) {
  if (distribution.empty()) throw ValidationError("argmax of empty distribution");
  int best = 0;
  for (std::size_t i = 1; i < distribution.size(); ++i)
    if (distribution[i] > distribution[static_cast<std::size_t>(best)])
      best = static_cast<int>(i);
  return best;
}

PerformancePredictor fit_performance_predictor(
    const std::vector<std::vector<double>>& thetas,
    const std::vector<double>& signed_errors_m, const std::vector<bool>& calibration_mask,
    const PerfOptions& opts) {
  if (thetas.empty()) throw ValidationError("fit_performance_predictor: empty input");
  if (thetas.size() != signed_errors_m.size() || thetas.size() != calibration_mask.size())
    throw ValidationError("fit_performance_predictor: length mismatch");

  std::vector<std::size_t> fit_idx, calib_idx;
  for (std::size_t i = 0; i < thetas.size(); ++i)
    (calibration_mask[i] ? calib_idx : fit_idx).push_back(i);
  if (fit_idx.empty()) throw ValidationError("fit_performance_predictor: no fit samples");

  std::vector<std::vector<double>> fit_pts;
  fit_pts.reserve(fit_idx.size());
  for (std::size_t i : fit_idx) fit_pts.push_back(thetas[i]);

  int n_cells = std::min<int>(opts.cells, static_cast<int>(fit_pts.size()));
  n_cells = std::max(1, n_cells);
  KMeansOptions kopt;
  kopt.restarts = 2;
  KMeansResult km = kmeans(fit_pts, n_cells, opts.seed, kopt);

  std::vector<std::vector<double>> centroids = std::move(km.centroids);
  auto assign_to = [&](const std::vector<double>& x) {
    int best = 0;
    double bd = std::numeric_limits<double>::max();
    for (std::size_t c = 0; c < centroids.size(); ++c) {
      double d = squared_distance(x, centroids[c]);
      if (d < bd) {
        bd = d;
        best = static_cast<int>(c);
      }
    }
    return best;
  };

  // Drop under-supported cells and reassign until every remaining cell has
  // enough fit samples (or only one cell is left).
  std::vector<int> assign(fit_idx.size());
  for (;;) {
    std::vector<std::size_t> support(centroids.size(), 0);
    for (std::size_t i = 0; i < fit_idx.size(); ++i) {
      assign[i] = assign_to(thetas[fit_idx[i]]);
      support[static_cast<std::size_t>(assign[i])]++;
    }
    if (centroids.size() <= 1) break;
    std::size_t victim = centroids.size();
    for (std::size_t c = 0; c < centroids.size(); ++c)
      if (support[c] < static_cast<std::size_t>(opts.min_support) &&
          (victim == centroids.size() || support[c] < support[victim]))
        victim = c;
    if (victim == centroids.size()) break;
    centroids.erase(centroids.begin() + static_cast<std::ptrdiff_t>(victim));
  }

  PerformancePredictor pp;
  pp.cells.resize(centroids.size());
  std::vector<std::vector<double>> cell_errors(centroids.size());
  for (std::size_t i = 0; i < fit_idx.size(); ++i)
    cell_errors[static_cast<std::size_t>(assign[i])].push_back(signed_errors_m[fit_idx[i]]);
  for (std::size_t c = 0; c < centroids.size(); ++c) {
    PerfCell& cell = pp.cells[c];
    cell.centroid = centroids[c];
    cell.n_fit = static_cast<int>(cell_errors[c].size());
    if (cell.n_fit == 0) continue;  // only possible in the single-cell case
    cell.q10 = nearest_rank_q(cell_errors[c], 0.10);
    cell.q90 = nearest_rank_q(cell_errors[c], 0.90);
    double s = 0.0;
    for (double e : cell_errors[c]) s += e;
    cell.mean = s / static_cast<double>(cell.n_fit);
  }

  // In-band rates from the calibration split.
  std::vector<std::size_t> in_band(centroids.size(), 0), totals(centroids.size(), 0);
  std::size_t pooled_in = 0;
  for (std::size_t i : calib_idx) {
    int c = assign_to(thetas[i]);
    const PerfCell& cell = pp.cells[static_cast<std::size_t>(c)];
    bool in = signed_errors_m[i] >= cell.q10 && signed_errors_m[i] <= cell.q90;
    totals[static_cast<std::size_t>(c)]++;
    if (in) {
      in_band[static_cast<std::size_t>(c)]++;
      ++pooled_in;
    }
  }
  pp.pooled_calibration_rate =
      calib_idx.empty() ? 0.8
                        : static_cast<double>(pooled_in) / static_cast<double>(calib_idx.size());
  for (std::size_t c = 0; c < centroids.size(); ++c) {
    pp.cells[c].n_calib = static_cast<int>(totals[c]);
    pp.cells[c].in_band_rate =
        totals[c] == 0 ? pp.pooled_calibration_rate
                       : static_cast<double>(in_band[c]) / static_cast<double>(totals[c]);
  }
  return pp;
}

ErrorBand predict_error_band(const PerformancePredictor& pred,
                             const ConditionVector& theta) {
  if (pred.cells.empty()) throw ValidationError("predict_error_band: unfitted predictor");
  if (theta.theta.size() != pred.cells[0].centroid.size())
    throw ValidationError("predict_error_band: dimension mismatch");
  int best = 0;
  double bd = std::numeric_limits<double>::max();
  for (std::size_t c = 0; c < pred.cells.size(); ++c) {
    double d = squared_distance(theta.theta, pred.cells[c].centroid);
    if (d < bd) {
      bd = d;
      best = static_cast<int>(c);
    }
  }
  const PerfCell& cell = pred.cells[static_cast<std::size_t>(best)];
  return ErrorBand{cell.q10, cell.q90, cell.mean, cell.in_band_rate, best};
}

CompetencyEstimate estimate_competency(const ModelBundle& bundle, const Image& image) {
  CompetencyEstimate est;
  Sample probe;
  probe.image = image;
  Document doc;
  try {
    doc = tokenize(probe, bundle.codebook, bundle.vocab);
  } catch (const std::exception& e) {
    throw ValidationError(std::string("estimate_competency[tokenize]: ") + e.what());
  }
  try {
    est.theta = infer_conditions(bundle.conditions, doc, bundle.fold_in_sweeps,
                                 bundle.infer_seed);
  } catch (const std::exception& e) {
    throw ValidationError(std::string("estimate_competency[infer]: ") + e.what());
  }
  try {
    est.novelty = novelty(bundle.conditions, doc, bundle.infer_seed);
  } catch (const std::exception& e) {
    throw ValidationError(std::string("estimate_competency[novelty]: ") + e.what());
  }
  try {
    est.strategy_distribution =
        predict_strategy_distribution(bundle.strategy_predictor, est.theta);
  } catch (const std::exception& e) {
    throw ValidationError(std::string("estimate_competency[strategy]: ") + e.what());
  }
  try {
    est.error_band = predict_error_band(bundle.performance_predictor, est.theta);
  } catch (const std::exception& e) {
    throw ValidationError(std::string("estimate_competency[band]: ") + e.what());
  }
  return est;
}

void save_predictors(const StrategyPredictor& sp, const PerformancePredictor& pp,
                     const std::string& path) {
  nlohmann::json j;
  j["format_version"] = kPredictorsFormatVersion;
  j["strategy"] = {{"classes", sp.classes},
                   {"dim", sp.dim},
                   {"weights", sp.weights},
                   {"diverged", sp.diverged}};
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : pp.cells)
    cells.push_back({{"centroid", c.centroid},
                     {"q10", c.q10},
                     {"q90", c.q90},
                     {"mean", c.mean},
                     {"in_band_rate", c.in_band_rate},
                     {"n_fit", c.n_fit},
                     {"n_calib", c.n_calib}});
  j["performance"] = {{"cells", cells},
                      {"pooled_calibration_rate", pp.pooled_calibration_rate}};
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open for write: " + path);
  f << j.dump(2) << "\n";
}

LoadedPredictors load_predictors(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open predictors: " + path);
  nlohmann::json j = nlohmann::json::parse(f);
  int version = j.value("format_version", -1);
  if (version != kPredictorsFormatVersion)
    throw IoError("predictors version mismatch: file has " + std::to_string(version) +
                  ", expected " + std::to_string(kPredictorsFormatVersion));
  LoadedPredictors out;
  out.strategy.classes = j.at("strategy").at("classes");
  out.strategy.dim = j.at("strategy").at("dim");
  out.strategy.weights = j.at("strategy").at("weights").get<std::vector<double>>();
  out.strategy.diverged = j.at("strategy").at("diverged");
  for (const auto& jc : j.at("performance").at("cells")) {
    PerfCell c;
    c.centroid = jc.at("centroid").get<std::vector<double>>();
    c.q10 = jc.at("q10");
    c.q90 = jc.at("q90");
    c.mean = jc.at("mean");
    c.in_band_rate = jc.at("in_band_rate");
    c.n_fit = jc.at("n_fit");
    c.n_calib = jc.at("n_calib");
    out.performance.cells.push_back(std::move(c));
  }
  out.performance.pooled_calibration_rate = j.at("performance").at("pooled_calibration_rate");
  return out;
}

}  // namespace competency
