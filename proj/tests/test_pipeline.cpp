#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "competency/pipeline.hpp"

using namespace competency;
namespace fs = std::filesystem;

namespace {

const char* kSmallConfig = R"(
[pipeline]
master_seed = 1234

[dataset]
n = 200

[agent]
epochs = 3

[strategy]
k_mode = fixed
k = 2

[conditions]
v_vis = 16
topics = 8
sweeps = 80
burn_in = 40

[predictors]
cells = 6
epochs = 200

[simulate]
episodes = 4
)";

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

void run_all_stages(const PipelineConfig& cfg, const fs::path& dir) {
  stage_gen_data(cfg, dir);
  stage_train(cfg, dir);
  stage_strategies(cfg, dir);
  stage_conditions(cfg, dir);
  stage_predictors(cfg, dir);
  stage_evaluate(cfg, dir);
  stage_simulate(cfg, dir);
  stage_report(cfg, dir);
}

}  // namespace

TEST_CASE("config parsing: sections, defaults, validation") {
  PipelineConfig cfg = parse_pipeline_config(kSmallConfig);
  CHECK(cfg.master_seed == 1234);
  CHECK(cfg.dataset_n == 200);
  CHECK(cfg.agent_hp.epochs == 3);
  CHECK(cfg.k_mode == KMode::Fixed);
  CHECK(cfg.fixed_k == 2);
  CHECK(cfg.v_vis == 16);
  CHECK(cfg.episodes == 4);
  CHECK(cfg.agent_hp.lr == doctest::Approx(0.01));  // untouched default

  CHECK_THROWS_AS((void)parse_pipeline_config("[dataset]\nn == 4\n"), ValidationError);
  CHECK_THROWS_AS((void)parse_pipeline_config("[dataset]\nn = abc\n"), ValidationError);
  CHECK_THROWS_AS((void)parse_pipeline_config("[strategy]\nk_mode = banana\n"),
                  ValidationError);
  CHECK_THROWS_AS((void)parse_pipeline_config("[dataset]\nweights_time = 1,2\n"),
                  ValidationError);
}

TEST_CASE("full small pipeline produces every artifact and verifiable manifests") {
  TempDir dir("competency_pipe_full");
  PipelineConfig cfg = parse_pipeline_config(kSmallConfig);
  fs::path reqs = dir.path / "reqs.txt";
  std::ofstream(reqs) << "WHEN * REQUIRE DETECT_WITHIN 8 M RATE >= 0.5\n"
                      << "WHEN time=night REQUIRE DETECT_WITHIN 8 M RATE >= 0.9\n";
  cfg.requirements_path = reqs.string();
  run_all_stages(cfg, dir.path);

  for (const char* name :
       {artifact::kDataset, artifact::kAgent, artifact::kTrainReport, artifact::kStrategy,
        artifact::kAffinity, artifact::kConditions, artifact::kPredictors, artifact::kMetrics,
        artifact::kEpisodes, artifact::kSimSummary, artifact::kReport, artifact::kPlotData})
    CHECK(fs::exists(dir.path / name));

  std::string err;
  CHECK(verify_manifests(dir.path, &err));
  CHECK(err.empty());

  // The merged report carries all four metric families.
  nlohmann::json report = nlohmann::json::parse(slurp(dir.path / artifact::kReport));
  CHECK(report.contains("coverage"));
  CHECK(report.contains("correctness_point"));
  CHECK(report.contains("correctness_distribution"));
  CHECK(report.contains("fidelity_fine"));
  CHECK(report.contains("fidelity_coarse"));
  CHECK(report.at("correctness_distribution").get<double>() >=
        report.at("correctness_point").get<double>());
  REQUIRE(report.at("reliability").size() == 2);
  for (const auto& entry : report.at("reliability")) {
    CHECK(entry.contains("requirement"));
    CHECK(entry.contains("achieved_rate"));
    CHECK(entry.contains("met"));
  }

  // Tampering an input invalidates the provenance chain.
  std::ofstream(dir.path / artifact::kDataset, std::ios::app) << "x";
  CHECK_FALSE(verify_manifests(dir.path, &err));
  CHECK_FALSE(err.empty());
}

TEST_CASE("stage reruns are byte-identical") {
  TempDir a("competency_pipe_a");
  TempDir b("competency_pipe_b");
  PipelineConfig cfg = parse_pipeline_config(kSmallConfig);
  run_all_stages(cfg, a.path);
  run_all_stages(cfg, b.path);
  for (const char* name :
       {artifact::kDataset, artifact::kAgent, artifact::kTrainReport, artifact::kStrategy,
        artifact::kAffinity, artifact::kConditions, artifact::kPredictors, artifact::kMetrics,
        artifact::kEpisodes, artifact::kSimSummary, artifact::kReport, artifact::kPlotData})
    CHECK(slurp(a.path / name) == slurp(b.path / name));
}

TEST_CASE("missing upstream artifacts name the producing command") {
  TempDir dir("competency_pipe_missing");
  PipelineConfig cfg = parse_pipeline_config(kSmallConfig);
  try {
    stage_train(cfg, dir.path);
    FAIL("expected missing-artifact error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("gen-data") != std::string::npos);
  }

  stage_gen_data(cfg, dir.path);
  stage_train(cfg, dir.path);
  stage_strategies(cfg, dir.path);
  stage_conditions(cfg, dir.path);
  try {
    stage_evaluate(cfg, dir.path);
    FAIL("expected missing-artifact error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("predictors") != std::string::npos);
  }
}

TEST_CASE("a stale lock file blocks stages") {
  TempDir dir("competency_pipe_lock");
  PipelineConfig cfg = parse_pipeline_config(kSmallConfig);
  std::ofstream(dir.path / ".lock") << "held\n";
  CHECK_THROWS_AS(stage_gen_data(cfg, dir.path), ValidationError);
  fs::remove(dir.path / ".lock");
  stage_gen_data(cfg, dir.path);  // lock released after the stage
  CHECK_FALSE(fs::exists(dir.path / ".lock"));
}

TEST_CASE("gated simulation consumes the guard artifacts and requirements") {
  TempDir dir("competency_pipe_gated");
  PipelineConfig cfg = parse_pipeline_config(kSmallConfig);
  run_all_stages(cfg, dir.path);

  fs::path reqs = dir.path / "reqs.txt";
  std::ofstream(reqs) << "WHEN * REQUIRE DETECT_WITHIN 8 M RATE >= 0.99\n";
  cfg.requirements_path = reqs.string();
  cfg.gated = true;
  stage_simulate(cfg, dir.path);
  nlohmann::json summary = nlohmann::json::parse(slurp(dir.path / artifact::kSimSummary));
  CHECK(summary.at("gated").get<bool>());
  CHECK(summary.at("requirements").size() == 1);

  // Inferred-tag mode runs off the persisted probes.
  cfg.tag_mode = TagMode::Inferred;
  stage_simulate(cfg, dir.path);
}

TEST_CASE("CLI exit codes: 2 for validation failures, 0 for success") {
#ifdef CLI_BINARY
  TempDir dir("competency_pipe_cli");
  fs::path cfg_path = dir.path / "config.ini";
  std::ofstream(cfg_path) << kSmallConfig;

  auto run = [&](const std::string& args) {
    std::string cmd = std::string(CLI_BINARY) + " " + args + " >/dev/null 2>&1";
    int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
  };

  // evaluate in an empty workdir: validation failure.
  CHECK(run("evaluate --workdir " + dir.path.string()) == 2);
  // unknown tag mode: validation failure.
  CHECK(run("simulate --tags bogus --workdir " + dir.path.string()) == 2);
  // gen-data succeeds.
  CHECK(run("gen-data --config " + cfg_path.string() + " --workdir " + dir.path.string()) ==
        0);
  CHECK(fs::exists(dir.path / artifact::kDataset));
#endif
}
