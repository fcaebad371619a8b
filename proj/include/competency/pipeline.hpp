#pragma once
// Stage-artifact pipeline: each stage reads declared upstream artifacts from
// the working directory, writes its own artifact plus a manifest (config
// hash, seed, input hashes), and is byte-stable for fixed config and seeds.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "competency/agent.hpp"
#include "competency/conditions.hpp"
#include "competency/core.hpp"
#include "competency/metrics.hpp"
#include "competency/predictors.hpp"
#include "competency/scene.hpp"
#include "competency/sim.hpp"
#include "competency/strategy.hpp"

namespace competency {

struct PipelineConfig {
  std::uint64_t master_seed = 42;

  // dataset
  std::size_t dataset_n = 4000;
  FactorWeights dataset_weights;
  int dataset_workers = 1;

  // agent
  TrainHyper agent_hp;

  // strategy
  KMode k_mode = KMode::Auto;
  int fixed_k = 4;

  // conditions
  int v_vis = kDefaultVisualWords;
  int topics = 20;
  int hdp_sweeps = 500;
  int hdp_burn_in = 300;

  // predictors
  int perf_cells = 16;
  int logistic_epochs = 500;

  // simulate
  std::size_t episodes = 100;
  bool gated = false;
  TagMode tag_mode = TagMode::GroundTruth;
  FactorWeights episode_weights;
  std::string requirements_path;
  int sim_workers = 1;

  std::uint64_t config_hash = 0;  // of the raw config text

  // Per-stage seeds, derived from master_seed unless overridden in config.
  std::uint64_t seed_dataset() const { return master_seed; }
  std::uint64_t seed_agent_init() const { return mix_seed(master_seed, 0xA1); }
  std::uint64_t seed_agent_shuffle() const { return mix_seed(master_seed, 0xA2); }
  std::uint64_t seed_strategy() const { return mix_seed(master_seed, 0xA3); }
  std::uint64_t seed_codebook() const { return mix_seed(master_seed, 0xA4); }
  std::uint64_t seed_hdp() const { return mix_seed(master_seed, 0xA5); }
  std::uint64_t seed_predictors() const { return mix_seed(master_seed, 0xA6); }
  std::uint64_t seed_metrics() const { return mix_seed(master_seed, 0xA7); }
  std::uint64_t seed_simulate() const { return mix_seed(master_seed, 0xA8); }
};

// Plain-text `key = value` format with [section] headers and '#' comments.
[[nodiscard]] PipelineConfig parse_pipeline_config(const std::string& text);
[[nodiscard]] PipelineConfig load_pipeline_config(const std::string& path);

// Artifact file names inside a working directory.
namespace artifact {
inline constexpr const char* kDataset = "dataset.bin";
inline constexpr const char* kAgent = "agent.json";
inline constexpr const char* kTrainReport = "train_report.json";
inline constexpr const char* kStrategy = "strategy.json";
inline constexpr const char* kAffinity = "affinity.json";
inline constexpr const char* kConditions = "conditions.json";
inline constexpr const char* kPredictors = "predictors.json";
inline constexpr const char* kMetrics = "metrics.json";
inline constexpr const char* kEpisodes = "episodes.jsonl";
inline constexpr const char* kSimSummary = "sim_summary.json";
inline constexpr const char* kReport = "report.json";
inline constexpr const char* kPlotData = "plot_data.csv";
}  // namespace artifact

// Stage entry points. Each throws ValidationError if an upstream artifact is
// missing, naming the command that produces it.
void stage_gen_data(const PipelineConfig& cfg, const std::filesystem::path& workdir);
void stage_train(const PipelineConfig& cfg, const std::filesystem::path& workdir);
void stage_strategies(const PipelineConfig& cfg, const std::filesystem::path& workdir);
void stage_conditions(const PipelineConfig& cfg, const std::filesystem::path& workdir);
void stage_predictors(const PipelineConfig& cfg, const std::filesystem::path& workdir);
void stage_evaluate(const PipelineConfig& cfg, const std::filesystem::path& workdir);
void stage_simulate(const PipelineConfig& cfg, const std::filesystem::path& workdir);
void stage_report(const PipelineConfig& cfg, const std::filesystem::path& workdir);

// Loads the fitted models of a completed pipeline (through stage_predictors).
[[nodiscard]] ModelBundle load_model_bundle(const std::filesystem::path& workdir);
[[nodiscard]] TagProbes load_tag_probes(const std::filesystem::path& workdir);

// Checks every manifest's recorded input hashes against the files on disk.
[[nodiscard]] bool verify_manifests(const std::filesystem::path& workdir,
                                    std::string* first_error = nullptr);

[[nodiscard]] std::uint64_t file_hash(const std::filesystem::path& path);

}  // namespace competency
