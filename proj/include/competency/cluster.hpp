#pragma once
// Deterministic k-means (k-means++ seeding, Lloyd iterations, multi-restart)
// and a mean-silhouette score. Shared by trace clustering, the visual-word
// codebook, and the performance cells.

#include <cstdint>
#include <vector>

#include "competency/core.hpp"

namespace competency {

struct KMeansOptions {
  int max_iters = 100;
  double tol = 1e-6;   // stop when max centroid movement falls below this
  int restarts = 1;    // best objective wins; restart r seeds with mix_seed(seed, r)
};

struct KMeansResult {
  std::vector<std::vector<double>> centroids;  // k x dim
  std::vector<int> assignments;                // n, consistent with centroids
  double inertia = 0.0;                        // within-cluster squared error
  int iterations = 0;
  bool converged = false;
  std::vector<double> objective_history;       // after each assignment pass
};

// Ties in the assignment step break toward the lowest centroid id. An empty
// cluster is reseeded to the point currently farthest from its centroid,
// which keeps the objective non-increasing.
[[nodiscard]] KMeansResult kmeans(const std::vector<std::vector<double>>& points,
                                  int k, std::uint64_t seed,
                                  const KMeansOptions& opts = {});

// Mean silhouette over all points; singleton clusters contribute 0. For
// n > max_points a deterministic stride subsample is scored instead.
[[nodiscard]] double mean_silhouette(const std::vector<std::vector<double>>& points,
                                     const std::vector<int>& assignments, int k,
                                     std::size_t max_points = 2500);

[[nodiscard]] double squared_distance(const std::vector<double>& a,
                                      const std::vector<double>& b);

}  // namespace competency
