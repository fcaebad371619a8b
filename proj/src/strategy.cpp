#include "competency/strategy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include <json.hpp>

#include "competency/cluster.hpp"

namespace competency {

namespace {

constexpr int kStrategyFormatVersion = 1;
constexpr double kSdFloor = 1e-9;
constexpr int kMaxStrategies = 12;

std::vector<std::vector<double>> standardize(const std::vector<std::vector<double>>& traces,
                                             std::vector<double>& mean,
                                             std::vector<double>& sd) {
  const std::size_t n = traces.size();
  const std::size_t dim = traces[0].size();
  mean.assign(dim, 0.0);
  sd.assign(dim, 0.0);
  for (const auto& t : traces)
    for (std::size_t d = 0; d < dim; ++d) mean[d] += t[d];
  for (double& m : mean) m /= static_cast<double>(n);
  for (const auto& t : traces)
    for (std::size_t d = 0; d < dim; ++d) {
      double v = t[d] - mean[d];
      sd[d] += v * v;
    }
  for (double& s : sd) s = std::max(kSdFloor, std::sqrt(s / static_cast<double>(n)));

  std::vector<std::vector<double>> out(n, std::vector<double>(dim));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t d = 0; d < dim; ++d) out[i][d] = (traces[i][d] - mean[d]) / sd[d];
  return out;
}

bool all_identical(const std::vector<std::vector<double>>& pts) {
  for (std::size_t i = 1; i < pts.size(); ++i)
    if (pts[i] != pts[0]) return false;
  return true;
}

}  // namespace

StrategyModel fit_strategies(const std::vector<std::vector<double>>& traces,
                             const StrategyOptions& opts) {
  if (traces.empty()) throw ValidationError("fit_strategies: no traces");
  const std::size_t dim = traces[0].size();
  for (const auto& t : traces)
    if (t.size() != dim) throw ValidationError("fit_strategies: ragged trace lengths");

  StrategyModel m;
  m.standardized = opts.standardize;
  std::vector<std::vector<double>> pts;
  if (opts.standardize) {
    pts = standardize(traces, m.mean, m.sd);
  } else {
    pts = traces;
    m.mean.assign(dim, 0.0);
    m.sd.assign(dim, 1.0);
  }

  KMeansOptions kopt;
  kopt.restarts = opts.restarts;

  if (opts.mode == KMode::Fixed) {
    if (opts.k < 1 || opts.k > kMaxStrategies)
      throw ValidationError("fit_strategies: K must be in [1, 12]");
    if (traces.size() < static_cast<std::size_t>(opts.k))
      throw ValidationError("fit_strategies: fewer traces than K");
    KMeansResult r = kmeans(pts, opts.k, opts.seed, kopt);
    m.k = opts.k;
    m.centroids = std::move(r.centroids);
    m.assignments = std::move(r.assignments);
    return m;
  }

  if (all_identical(pts)) {
    m.k = 1;
    m.degenerate = true;
    m.centroids = {pts[0]};
    m.assignments.assign(traces.size(), 0);
    return m;
  }

  int best_k = -1;
  double best_score = 0.0;
  KMeansResult best;
  const int k_hi = static_cast<int>(std::min<std::size_t>(kMaxStrategies, traces.size()));
  for (int k = 2; k <= k_hi; ++k) {
    KMeansResult r = kmeans(pts, k, opts.seed, kopt);
    double score = mean_silhouette(pts, r.assignments, k);
    if (best_k < 0 || score > best_score) {  // ties keep the smaller K
      best_k = k;
      best_score = score;
      best = std::move(r);
    }
  }
  m.k = best_k;
  m.centroids = std::move(best.centroids);
  m.assignments = std::move(best.assignments);
  return m;
}

StrategyAssignment assign_strategy(const StrategyModel& model,
                                   const std::vector<double>& trace) {
  if (trace.size() != model.mean.size())
    throw ValidationError("assign_strategy: trace length mismatch");
  std::vector<double> z(trace.size());
  for (std::size_t d = 0; d < trace.size(); ++d)
    z[d] = (trace[d] - model.mean[d]) / model.sd[d];
  StrategyAssignment out;
  double best = -1.0;
  for (int c = 0; c < model.k; ++c) {
    double d2 = squared_distance(z, model.centroids[static_cast<std::size_t>(c)]);
    if (best < 0.0 || d2 < best) {
      best = d2;
      out.strategy_id = c;
    }
  }
  out.distance = std::sqrt(best);
  return out;
}

AffinityTable condition_affinity(const std::vector<int>& assignments,
                                 const std::vector<std::string>& tags) {
  if (assignments.empty()) throw ValidationError("condition_affinity: empty input");
  if (assignments.size() != tags.size())
    throw ValidationError("condition_affinity: length mismatch");

  int k = 0;
  for (int a : assignments) {
    if (a < 0) throw ValidationError("condition_affinity: negative strategy id");
    k = std::max(k, a + 1);
  }
  std::map<std::string, std::size_t> level_ix;
  AffinityTable t;
  for (const auto& tag : tags)
    if (level_ix.emplace(tag, level_ix.size()).second) t.levels.push_back(tag);
  // map iterates sorted; rebuild column order sorted for stability
  std::sort(t.levels.begin(), t.levels.end());
  level_ix.clear();
  for (std::size_t i = 0; i < t.levels.size(); ++i) level_ix[t.levels[i]] = i;

  t.counts.assign(static_cast<std::size_t>(k),
                  std::vector<std::size_t>(t.levels.size(), 0));
  for (std::size_t i = 0; i < assignments.size(); ++i)
    t.counts[static_cast<std::size_t>(assignments[i])][level_ix[tags[i]]]++;

  t.freq.assign(static_cast<std::size_t>(k), std::vector<double>(t.levels.size(), 0.0));
  for (std::size_t r = 0; r < t.counts.size(); ++r) {
    std::size_t row_total = 0;
    for (std::size_t c : t.counts[r]) row_total += c;
    if (row_total == 0) continue;
    for (std::size_t c = 0; c < t.levels.size(); ++c)
      t.freq[r][c] = static_cast<double>(t.counts[r][c]) / static_cast<double>(row_total);
  }
  return t;
}

bool strategy_mismatch(const std::vector<double>& expected, int observed,
                       double mass_threshold) {
  if (expected.empty()) throw ValidationError("strategy_mismatch: empty distribution");
  double sum = 0.0;
  for (double p : expected) {
    if (p < -1e-9) throw ValidationError("strategy_mismatch: negative probability");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-6)
    throw ValidationError("strategy_mismatch: distribution does not sum to 1");
  if (observed < 0 || static_cast<std::size_t>(observed) >= expected.size())
    throw ValidationError("strategy_mismatch: observed id out of range");
  return expected[static_cast<std::size_t>(observed)] < mass_threshold;
}

void save_strategy_model(const StrategyModel& m, const std::string& path) {
  nlohmann::json j;
  j["format_version"] = kStrategyFormatVersion;
  j["k"] = m.k;
  j["mean"] = m.mean;
  j["sd"] = m.sd;
  j["centroids"] = m.centroids;
  j["assignments"] = m.assignments;
  j["standardized"] = m.standardized;
  j["degenerate"] = m.degenerate;
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open for write: " + path);
  f << j.dump(2) << "\n";
}

StrategyModel load_strategy_model(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open strategy model: " + path);
  nlohmann::json j = nlohmann::json::parse(f);
  int version = j.value("format_version", -1);
  if (version != kStrategyFormatVersion)
    throw IoError("strategy model version mismatch: file has " + std::to_string(version) +
                  ", expected " + std::to_string(kStrategyFormatVersion));
  StrategyModel m;
  m.k = j.at("k");
  m.mean = j.at("mean").get<std::vector<double>>();
  m.sd = j.at("sd").get<std::vector<double>>();
  m.centroids = j.at("centroids").get<std::vector<std::vector<double>>>();
  m.assignments = j.at("assignments").get<std::vector<int>>();
  m.standardized = j.at("standardized");
  m.degenerate = j.at("degenerate");
  return m;
}

}  // namespace competency
