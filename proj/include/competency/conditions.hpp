#pragma once
// Conditions: visual-word documents over image patches, augmented with
// competency tokens at training time, modeled by a truncated
// direct-assignment topic sampler. Per-document topic distributions are the
// learned "conditions"; per-token likelihood under the model scores novelty.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "competency/core.hpp"
#include "competency/scene.hpp"

namespace competency {

// 4x4 patch grid; per patch: mean intensity, mean |horizontal gradient|,
// mean |vertical gradient|.
inline constexpr int kPatchGridX = 4;
inline constexpr int kPatchGridY = 4;
inline constexpr int kPatchCount = kPatchGridX * kPatchGridY;
inline constexpr int kDefaultVisualWords = 64;

struct Codebook {
  int patch_w = kImageWidth / kPatchGridX;   // 8
  int patch_h = kImageHeight / kPatchGridY;  // 6
  std::vector<std::vector<double>> centroids;  // V_vis x 3
  bool degenerate = false;  // fewer distinct descriptors than words

  int vocab() const { return static_cast<int>(centroids.size()); }
};

[[nodiscard]] std::vector<std::vector<double>> patch_descriptors(const Image& image);

[[nodiscard]] Codebook build_codebook(const Dataset& dataset, int v_vis = kDefaultVisualWords,
                                      std::uint64_t seed = 0x5EED0002ull);

// Nearest centroid, ties toward the lowest word id.
[[nodiscard]] int quantize(const Codebook& cb, const std::vector<double>& descriptor);

// Token id layout: [0, v_vis) visual words, [v_vis, v_vis + n_strategies)
// strategy tokens, then perf=lo / perf=md / perf=hi.
struct Vocabulary {
  int v_vis = kDefaultVisualWords;
  int n_strategies = 0;
  double tercile_lo = 0.0;  // abs-error bucket boundaries, closed on the left
  double tercile_hi = 0.0;

  int size() const { return v_vis + n_strategies + 3; }
  int strategy_token(int strategy_id) const { return v_vis + strategy_id; }
  int perf_token_base() const { return v_vis + n_strategies; }
  // perf=lo is the best tercile. A value exactly on a boundary goes to the
  // upper bucket.
  int perf_token(double abs_error_m) const {
    if (abs_error_m < tercile_lo) return perf_token_base();
    if (abs_error_m < tercile_hi) return perf_token_base() + 1;
    return perf_token_base() + 2;
  }
  [[nodiscard]] std::string token_name(int token, const Codebook* cb = nullptr) const;
};

// Nearest-rank terciles of train-split absolute errors.
[[nodiscard]] std::pair<double, double> error_terciles(const std::vector<double>& abs_errors);

struct Document {
  std::int64_t doc_id = 0;
  std::vector<int> tokens;
  bool competency_tokens_present = false;
};

struct CompetencyLabel {
  int strategy_id = 0;
  double abs_error_m = 0.0;
};

[[nodiscard]] Document tokenize(const Sample& sample, const Codebook& codebook,
                                const Vocabulary& vocab,
                                std::optional<CompetencyLabel> competency = std::nullopt);

struct HdpConfig {
  int topics = 20;  // truncation T
  double gamma = 1.0;
  double alpha0 = 1.0;
  double eta = 0.1;
  int sweeps = 500;
  int burn_in = 300;
  std::uint64_t seed = 0;
  int vocab_size = 0;  // V; visual + strategy + perf tokens
  int n_visual = 0;    // inference documents may only use ids below this
  bool track_marginals = false;       // accumulate per-token topic marginals post burn-in
  bool compute_novelty_threshold = true;
  // Fixing beta at uniform makes the chain's stationary distribution exactly
  // the collapsed joint the enumeration oracle scores; used by oracle tests.
  bool resample_beta = true;
  std::vector<std::string> token_names;  // optional, size vocab_size
};

struct ConditionModel {
  HdpConfig config;
  std::vector<double> beta;                        // T, simplex
  std::vector<std::vector<int>> topic_token;       // T x V counts
  std::vector<long long> topic_total;              // T
  std::vector<std::vector<int>> assignments;       // per doc, per token topic
  std::vector<std::vector<double>> doc_theta;      // per training doc, final-state theta
  std::vector<bool> active;                        // topic has tokens at final sweep
  int active_topics = 0;
  double novelty_threshold = 0.0;  // 1st percentile of train per-doc scores
  // Diagnostics, filled when track_marginals: tokens indexed corpus-wide in
  // (doc, position) order.
  std::vector<std::vector<double>> token_topic_marginal;
  std::vector<std::vector<double>> coassignment;  // P(z_i == z_j), tiny corpora only

  [[nodiscard]] long long total_tokens() const;
  [[nodiscard]] std::vector<double> phi_row(int topic) const;  // smoothed token dist
};

// Default fold-in seed; the novelty threshold is computed with the same
// constant at fit time, so rescoring a training document reproduces its
// fit-time score exactly.
inline constexpr std::uint64_t kInferSeed = 0x11FE125EEDull;

[[nodiscard]] ConditionModel fit_hdp(const std::vector<Document>& corpus,
                                     const HdpConfig& config);

struct ConditionVector {
  std::vector<double> theta;  // over T topics, sums to 1
};

[[nodiscard]] ConditionVector infer_conditions(const ConditionModel& model,
                                               const Document& doc,
                                               int fold_in_sweeps = 50,
                                               std::uint64_t seed = kInferSeed);

struct NoveltyScore {
  double score = 0.0;  // per-token mean log-likelihood
  bool flag = false;
  double threshold = 0.0;
};

[[nodiscard]] NoveltyScore novelty(const ConditionModel& model, const Document& doc,
                                   std::uint64_t seed = kInferSeed);

struct TopicToken {
  int token = 0;
  std::string name;
  double weight = 0.0;
};

// Top tokens of an active topic, weights non-increasing.
[[nodiscard]] std::vector<TopicToken> describe_topic(const ConditionModel& model,
                                                     int topic_id, int top_n = 10,
                                                     const Codebook* codebook = nullptr);

void save_condition_model(const ConditionModel& m, const Codebook& cb,
                          const Vocabulary& vocab, const std::string& path);
struct LoadedConditionModel {
  ConditionModel model;
  Codebook codebook;
  Vocabulary vocab;
};
[[nodiscard]] LoadedConditionModel load_condition_model(const std::string& path);

}  // namespace competency
