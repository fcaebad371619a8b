// Pipeline driver: stage subcommands over a shared working directory.
// Exit codes: 0 success, 2 validation / bad input, 1 internal error.

#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "competency/pipeline.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::string workdir = ".";
  std::uint64_t seed_override = 0;
  bool has_seed_override = false;
};

competency::PipelineConfig load_config(const CommonArgs& args) {
  competency::PipelineConfig cfg;
  if (!args.config_path.empty())
    cfg = competency::load_pipeline_config(args.config_path);
  if (args.has_seed_override) cfg.master_seed = args.seed_override;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"competency: train, assess and gate a toy perception agent"};
  app.require_subcommand(1);

  CommonArgs args;
  bool gated_flag = false, ungated_flag = false;
  std::string requirements_path;
  std::string tag_mode;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", args.config_path, "pipeline config file");
    cmd->add_option("--workdir", args.workdir, "artifact directory (default: .)");
    cmd->add_option("--seed", args.seed_override, "override the master seed")
        ->each([&](const std::string&) { args.has_seed_override = true; });
  };

  CLI::App* gen = app.add_subcommand("gen-data", "render the labeled dataset");
  CLI::App* train_cmd = app.add_subcommand("train", "train the distance agent");
  CLI::App* strat = app.add_subcommand("strategies", "cluster activation traces");
  CLI::App* cond = app.add_subcommand("conditions", "fit the topic model of conditions");
  CLI::App* pred = app.add_subcommand("predictors", "fit competency predictors");
  CLI::App* eval = app.add_subcommand("evaluate", "compute assessment metrics");
  CLI::App* sim = app.add_subcommand("simulate", "run closed-loop episodes");
  CLI::App* rep = app.add_subcommand("report", "merge metrics into the final report");
  for (CLI::App* cmd : {gen, train_cmd, strat, cond, pred, eval, sim, rep}) add_common(cmd);

  sim->add_flag("--gated", gated_flag, "enable the reliability monitor");
  sim->add_flag("--ungated", ungated_flag, "disable the reliability monitor");
  sim->add_option("--requirements", requirements_path, "requirements file");
  sim->add_option("--tags", tag_mode, "predicate tags: truth | inferred");
  rep->add_option("--requirements", requirements_path, "requirements file");

  CLI11_PARSE(app, argc, argv);

  try {
    competency::PipelineConfig cfg = load_config(args);
    if (gated_flag && ungated_flag)
      throw competency::ValidationError("--gated and --ungated are mutually exclusive");
    if (gated_flag) cfg.gated = true;
    if (ungated_flag) cfg.gated = false;
    if (!requirements_path.empty()) cfg.requirements_path = requirements_path;
    if (!tag_mode.empty()) {
      if (tag_mode == "truth")
        cfg.tag_mode = competency::TagMode::GroundTruth;
      else if (tag_mode == "inferred")
        cfg.tag_mode = competency::TagMode::Inferred;
      else
        throw competency::ValidationError("--tags must be truth or inferred");
    }

    const std::filesystem::path wd = args.workdir;
    if (gen->parsed()) competency::stage_gen_data(cfg, wd);
    if (train_cmd->parsed()) competency::stage_train(cfg, wd);
    if (strat->parsed()) competency::stage_strategies(cfg, wd);
    if (cond->parsed()) competency::stage_conditions(cfg, wd);
    if (pred->parsed()) competency::stage_predictors(cfg, wd);
    if (eval->parsed()) competency::stage_evaluate(cfg, wd);
    if (sim->parsed()) competency::stage_simulate(cfg, wd);
    if (rep->parsed()) competency::stage_report(cfg, wd);
    return 0;
  } catch (const competency::ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const competency::IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return 1;
  }
}
