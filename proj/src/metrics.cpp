#include "competency/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "competency/predictors.hpp"

namespace competency {

namespace {

// Max spread of per-level mean values; levels without samples are skipped.
double level_spread(const std::vector<int>& levels, int n_levels,
                    const std::vector<double>& values) {
  std::vector<double> sums(static_cast<std::size_t>(n_levels), 0.0);
  std::vector<std::size_t> counts(static_cast<std::size_t>(n_levels), 0);
  for (std::size_t i = 0; i < values.size(); ++i) {
    sums[static_cast<std::size_t>(levels[i])] += values[i];
    counts[static_cast<std::size_t>(levels[i])]++;
  }
  double lo = 0.0, hi = 0.0;
  bool first = true;
  for (int l = 0; l < n_levels; ++l) {
    if (counts[static_cast<std::size_t>(l)] == 0) continue;
    double m = sums[static_cast<std::size_t>(l)] /
               static_cast<double>(counts[static_cast<std::size_t>(l)]);
    if (first) {
      lo = hi = m;
      first = false;
    } else {
      lo = std::min(lo, m);
      hi = std::max(hi, m);
    }
  }
  return hi - lo;
}

// One-vs-rest logistic probes; level predicted by the max per-level score.
// Even indices train, odd indices evaluate. Returns balanced accuracy over
// levels present in the evaluation half.
double probe_balanced_accuracy(const std::vector<std::vector<double>>& thetas,
                               const std::vector<int>& levels, int n_levels) {
  std::vector<std::size_t> train_ix, eval_ix;
  for (std::size_t i = 0; i < thetas.size(); ++i)
    (i % 2 == 0 ? train_ix : eval_ix).push_back(i);
  if (train_ix.empty() || eval_ix.empty()) return 0.0;

  std::vector<std::vector<double>> xs;
  xs.reserve(train_ix.size());
  for (std::size_t i : train_ix) xs.push_back(thetas[i]);

  LogisticHyper hp;
  hp.epochs = 300;
  std::vector<StrategyPredictor> probes;
  probes.reserve(static_cast<std::size_t>(n_levels));
  for (int l = 0; l < n_levels; ++l) {
    std::vector<int> ys;
    ys.reserve(train_ix.size());
    bool any_pos = false;
    for (std::size_t i : train_ix) {
      int y = levels[i] == l ? 1 : 0;
      any_pos |= (y == 1);
      ys.push_back(y);
    }
    if (!any_pos) {
      probes.emplace_back();  // classes == 0 marks an untrainable level
      continue;
    }
    probes.push_back(fit_strategy_predictor(xs, ys, 2, hp));
  }

  std::vector<std::size_t> correct(static_cast<std::size_t>(n_levels), 0);
  std::vector<std::size_t> totals(static_cast<std::size_t>(n_levels), 0);
  for (std::size_t i : eval_ix) {
    int best = -1;
    double best_score = 0.0;
    for (int l = 0; l < n_levels; ++l) {
      if (probes[static_cast<std::size_t>(l)].classes == 0) continue;
      ConditionVector cv;
      cv.theta = thetas[i];
      double score = predict_strategy_distribution(probes[static_cast<std::size_t>(l)], cv)[1];
      if (best < 0 || score > best_score) {
        best = l;
        best_score = score;
      }
    }
    totals[static_cast<std::size_t>(levels[i])]++;
    if (best == levels[i]) correct[static_cast<std::size_t>(levels[i])]++;
  }

  double acc = 0.0;
  int present = 0;
  for (int l = 0; l < n_levels; ++l) {
    if (totals[static_cast<std::size_t>(l)] == 0) continue;
    acc += static_cast<double>(correct[static_cast<std::size_t>(l)]) /
           static_cast<double>(totals[static_cast<std::size_t>(l)]);
    ++present;
  }
  return present == 0 ? 0.0 : acc / present;
}

}  // namespace

CoverageResult compute_coverage(const std::vector<std::vector<double>>& thetas,
                                const std::vector<FactorColumn>& factors,
                                const std::vector<double>& abs_errors,
                                const CoverageOptions& opts) {
  if (thetas.empty()) throw ValidationError("compute_coverage: empty input");
  if (thetas.size() != abs_errors.size())
    throw ValidationError("compute_coverage: length mismatch");
  for (const auto& f : factors)
    if (f.levels.size() != thetas.size())
      throw ValidationError("compute_coverage: factor column length mismatch");

  CoverageResult res;
  res.n = thetas.size();
  for (const auto& f : factors) {
    CoverageFactorDetail d;
    d.name = f.name;
    d.spread_m = level_spread(f.levels, f.n_levels, abs_errors);

    // Permutation test on the spread statistic.
    Rng rng(mix_seed(opts.seed, fnv1a64(f.name.data(), f.name.size())));
    std::vector<double> perm = abs_errors;
    int ge = 0;
    for (int p = 0; p < opts.permutations; ++p) {
      rng.shuffle(perm);
      if (level_spread(f.levels, f.n_levels, perm) >= d.spread_m) ++ge;
    }
    d.p_value = static_cast<double>(1 + ge) / static_cast<double>(1 + opts.permutations);
    d.controlling = d.spread_m > opts.spread_delta_m || d.p_value < opts.alpha;

    if (d.controlling) {
      d.probe_balanced_accuracy = probe_balanced_accuracy(thetas, f.levels, f.n_levels);
      d.identified = d.probe_balanced_accuracy >= opts.probe_threshold;
      res.controlling_count++;
      if (d.identified) res.identified_count++;
    }
    res.factors.push_back(std::move(d));
  }
  if (res.controlling_count > 0)
    res.coverage = static_cast<double>(res.identified_count) /
                   static_cast<double>(res.controlling_count);
  return res;
}

double compute_correctness(const std::vector<std::vector<double>>& predicted,
                           const std::vector<int>& executed, CorrectnessMode mode,
                           double credible_mass) {
  if (predicted.empty()) throw ValidationError("compute_correctness: empty input");
  if (predicted.size() != executed.size())
    throw ValidationError("compute_correctness: length mismatch");

  std::size_t hits = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const auto& p = predicted[i];
    if (executed[i] < 0 || static_cast<std::size_t>(executed[i]) >= p.size())
      throw ValidationError("compute_correctness: executed id out of range");
    if (mode == CorrectnessMode::Point) {
      if (argmax_strategy(p) == executed[i]) ++hits;
    } else {
      // Smallest prefix by descending mass (ties toward the lower id) whose
      // cumulative mass reaches the credible level.
      std::vector<int> order(p.size());
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        if (p[static_cast<std::size_t>(a)] != p[static_cast<std::size_t>(b)])
          return p[static_cast<std::size_t>(a)] > p[static_cast<std::size_t>(b)];
        return a < b;
      });
      double cum = 0.0;
      for (int id : order) {
        cum += p[static_cast<std::size_t>(id)];
        if (id == executed[i]) {
          ++hits;
          break;
        }
        if (cum >= credible_mass) break;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(predicted.size());
}

FidelityResult compute_fidelity(const std::vector<FidelitySample>& samples,
                                FidelityMode mode,
                                const std::map<std::string, double>* group_rates) {
  if (samples.empty()) throw ValidationError("compute_fidelity: empty input");
  if (mode == FidelityMode::Coarse && group_rates == nullptr)
    throw ValidationError("compute_fidelity: coarse mode needs group calibration rates");

  double brier = 0.0;
  for (const auto& s : samples) {
    double p = s.forecast_p;
    if (mode == FidelityMode::Coarse) {
      auto it = group_rates->find(s.group);
      if (it == group_rates->end())
        throw ValidationError("compute_fidelity: no calibration rate for group '" +
                              s.group + "'");
      p = it->second;
    }
    double o = (s.signed_error_m >= s.q10 && s.signed_error_m <= s.q90) ? 1.0 : 0.0;
    brier += (p - o) * (p - o);
  }
  brier /= static_cast<double>(samples.size());
  return FidelityResult{1.0 - brier, brier, samples.size()};
}

std::vector<ReliabilityEntry> compute_reliability(
    const std::vector<EpisodeSummary>& episodes,
    const std::vector<Requirement>& requirements) {
  std::vector<ReliabilityEntry> out;
  out.reserve(requirements.size());
  for (const Requirement& req : requirements) {
    ReliabilityEntry e;
    e.requirement = format_requirement(req);
    e.required_rate = req.min_rate;
    for (const auto& ep : episodes) {
      if (!req.matches(ep.tags)) continue;
      e.matching++;
      if (ep.outcome == EpisodeOutcome::HandedOff)
        e.handed_off++;
      else if (ep.outcome == EpisodeOutcome::DetectedInTime)
        e.detected++;
    }
    const std::size_t denom = e.matching - e.handed_off;
    if (denom > 0) {
      e.achieved_rate = static_cast<double>(e.detected) / static_cast<double>(denom);
      e.met = *e.achieved_rate >= e.required_rate - 1e-12;
    }
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace competency
