#include "competency/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace competency {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Config parsing
// ---------------------------------------------------------------------------

using Sections = std::map<std::string, std::map<std::string, std::string>>;

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

Sections parse_sections(const std::string& text) {
  Sections out;
  std::string section = "pipeline";
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ValidationError("config line " + std::to_string(line_no) +
                              ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ValidationError("config line " + std::to_string(line_no) +
                            ": expected key = value");
    out[section][trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

class ConfigReader {
 public:
  explicit ConfigReader(Sections s) : sections_(std::move(s)) {}

  std::optional<std::string> raw(const std::string& section, const std::string& key) const {
    auto s = sections_.find(section);
    if (s == sections_.end()) return std::nullopt;
    auto k = s->second.find(key);
    if (k == s->second.end()) return std::nullopt;
    return k->second;
  }

  template <typename T>
  T get(const std::string& section, const std::string& key, T fallback) const {
    auto v = raw(section, key);
    if (!v.has_value()) return fallback;
    return parse<T>(*v, section + "." + key);
  }

  template <typename T>
  T parse(const std::string& v, const std::string& where) const;

  template <std::size_t N>
  std::array<double, N> weights(const std::string& section, const std::string& key,
                                std::array<double, N> fallback) const {
    auto v = raw(section, key);
    if (!v.has_value()) return fallback;
    std::array<double, N> out{};
    std::istringstream in(*v);
    std::string item;
    std::size_t i = 0;
    while (std::getline(in, item, ',')) {
      if (i >= N) throw ValidationError("config " + section + "." + key + ": too many weights");
      out[i++] = parse<double>(trim(item), section + "." + key);
    }
    if (i != N)
      throw ValidationError("config " + section + "." + key + ": expected " +
                            std::to_string(N) + " weights");
    return out;
  }

 private:
  Sections sections_;
};

template <>
double ConfigReader::parse<double>(const std::string& v, const std::string& where) const {
  try {
    std::size_t used = 0;
    double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ValidationError("config " + where + ": bad number '" + v + "'");
  }
}
template <>
std::uint64_t ConfigReader::parse<std::uint64_t>(const std::string& v,
                                                 const std::string& where) const {
  try {
    std::size_t used = 0;
    std::uint64_t u = std::stoull(v, &used, 0);
    if (used != v.size()) throw std::invalid_argument(v);
    return u;
  } catch (const std::exception&) {
    throw ValidationError("config " + where + ": bad unsigned '" + v + "'");
  }
}
template <>
int ConfigReader::parse<int>(const std::string& v, const std::string& where) const {
  return static_cast<int>(parse<std::uint64_t>(v, where));
}
template <>
bool ConfigReader::parse<bool>(const std::string& v, const std::string& where) const {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ValidationError("config " + where + ": bad bool '" + v + "'");
}
template <>
std::string ConfigReader::parse<std::string>(const std::string& v, const std::string&) const {
  return v;
}

// ---------------------------------------------------------------------------
// Manifests, locking, artifact plumbing
// ---------------------------------------------------------------------------

constexpr int kManifestVersion = 1;

struct StageLock {
  fs::path path;
  explicit StageLock(const fs::path& workdir) : path(workdir / ".lock") {
    if (fs::exists(path))
      throw ValidationError("working directory is locked by another stage: " +
                            path.string());
    std::ofstream f(path);
    f << "locked\n";
  }
  ~StageLock() {
    std::error_code ec;
    fs::remove(path, ec);
  }
};

void require_artifact(const fs::path& workdir, const char* name, const char* producer) {
  if (!fs::exists(workdir / name))
    throw ValidationError(std::string("missing artifact '") + name + "'; run '" +
                          producer + "' first");
}

void write_manifest(const fs::path& workdir, const std::string& artifact_name,
                    const char* producer, const PipelineConfig& cfg, std::uint64_t seed,
                    const std::vector<std::string>& inputs) {
  json j;
  j["manifest_version"] = kManifestVersion;
  j["artifact"] = artifact_name;
  j["producer"] = producer;
  j["config_hash"] = to_hex(cfg.config_hash);
  j["seed"] = seed;
  json in = json::object();
  for (const auto& name : inputs)
    in[name] = to_hex(file_hash(workdir / name));
  j["inputs"] = in;
  std::ofstream f(workdir / (artifact_name + ".manifest.json"), std::ios::trunc);
  if (!f) throw IoError("cannot write manifest for " + artifact_name);
  f << j.dump(2) << "\n";
}

json load_json(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path.string());
  return json::parse(f);
}

void write_json(const json& j, const fs::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open for write: " + path.string());
  f << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Shared per-stage computations
// ---------------------------------------------------------------------------

struct TrainTraces {
  std::vector<std::size_t> indices;          // into dataset.samples
  std::vector<std::vector<double>> traces;
  std::vector<double> estimates;
  std::vector<double> abs_errors;
  std::vector<double> signed_errors;
};

TrainTraces compute_traces(const Agent& agent, const Dataset& ds, Split split) {
  TrainTraces out;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    if (ds.split[i] != split) continue;
    ForwardResult r = forward(agent, ds.samples[i].image);
    out.indices.push_back(i);
    out.traces.push_back(std::move(r.trace.values));
    out.estimates.push_back(r.estimate_m);
    double err = r.estimate_m - ds.samples[i].true_distance_m;
    out.signed_errors.push_back(err);
    out.abs_errors.push_back(std::abs(err));
  }
  return out;
}

std::string group_key(const SceneParams& p) {
  return std::string(to_string(p.weather)) + "|" + to_string(p.time_of_day);
}

std::vector<std::string> vocab_token_names(const Vocabulary& vocab, const Codebook& cb) {
  std::vector<std::string> names;
  names.reserve(static_cast<std::size_t>(vocab.size()));
  for (int t = 0; t < vocab.size(); ++t) names.push_back(vocab.token_name(t, &cb));
  return names;
}

// Calibration samples: every 4th train-split position.
bool is_calibration_position(std::size_t train_position) {
  return train_position % 4 == 3;
}

json reliability_to_json(const std::vector<ReliabilityEntry>& entries) {
  json arr = json::array();
  for (const auto& e : entries) {
    json je = {{"requirement", e.requirement},
               {"required_rate", e.required_rate},
               {"met", e.met},
               {"matching", e.matching},
               {"detected", e.detected},
               {"handed_off", e.handed_off}};
    if (e.achieved_rate.has_value())
      je["achieved_rate"] = *e.achieved_rate;
    else
      je["achieved_rate"] = nullptr;
    arr.push_back(std::move(je));
  }
  return arr;
}

}  // namespace

std::uint64_t file_hash(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot hash missing file: " + path.string());
  std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return fnv1a64(data.data(), data.size());
}

PipelineConfig parse_pipeline_config(const std::string& text) {
  ConfigReader r(parse_sections(text));
  PipelineConfig cfg;
  cfg.master_seed = r.get<std::uint64_t>("pipeline", "master_seed", cfg.master_seed);

  cfg.dataset_n = static_cast<std::size_t>(r.get<std::uint64_t>("dataset", "n", cfg.dataset_n));
  cfg.dataset_weights.obstacle_kind =
      r.weights<3>("dataset", "weights_kind", cfg.dataset_weights.obstacle_kind);
  cfg.dataset_weights.weather =
      r.weights<4>("dataset", "weights_weather", cfg.dataset_weights.weather);
  cfg.dataset_weights.time_of_day =
      r.weights<3>("dataset", "weights_time", cfg.dataset_weights.time_of_day);
  cfg.dataset_workers = r.get<int>("dataset", "workers", cfg.dataset_workers);

  cfg.agent_hp.lr = r.get<double>("agent", "lr", cfg.agent_hp.lr);
  cfg.agent_hp.momentum = r.get<double>("agent", "momentum", cfg.agent_hp.momentum);
  cfg.agent_hp.epochs = r.get<int>("agent", "epochs", cfg.agent_hp.epochs);
  cfg.agent_hp.batch = r.get<int>("agent", "batch", cfg.agent_hp.batch);

  std::string kmode = r.get<std::string>("strategy", "k_mode", "auto");
  if (kmode == "auto")
    cfg.k_mode = KMode::Auto;
  else if (kmode == "fixed")
    cfg.k_mode = KMode::Fixed;
  else
    throw ValidationError("config strategy.k_mode: expected auto or fixed");
  cfg.fixed_k = r.get<int>("strategy", "k", cfg.fixed_k);

  cfg.v_vis = r.get<int>("conditions", "v_vis", cfg.v_vis);
  cfg.topics = r.get<int>("conditions", "topics", cfg.topics);
  cfg.hdp_sweeps = r.get<int>("conditions", "sweeps", cfg.hdp_sweeps);
  cfg.hdp_burn_in = r.get<int>("conditions", "burn_in", cfg.hdp_burn_in);

  cfg.perf_cells = r.get<int>("predictors", "cells", cfg.perf_cells);
  cfg.logistic_epochs = r.get<int>("predictors", "epochs", cfg.logistic_epochs);

  cfg.episodes = static_cast<std::size_t>(r.get<std::uint64_t>("simulate", "episodes", cfg.episodes));
  cfg.gated = r.get<bool>("simulate", "gated", cfg.gated);
  std::string tmode = r.get<std::string>("simulate", "tag_mode", "truth");
  if (tmode == "truth")
    cfg.tag_mode = TagMode::GroundTruth;
  else if (tmode == "inferred")
    cfg.tag_mode = TagMode::Inferred;
  else
    throw ValidationError("config simulate.tag_mode: expected truth or inferred");
  cfg.episode_weights.obstacle_kind =
      r.weights<3>("simulate", "weights_kind", cfg.episode_weights.obstacle_kind);
  cfg.episode_weights.weather =
      r.weights<4>("simulate", "weights_weather", cfg.episode_weights.weather);
  cfg.episode_weights.time_of_day =
      r.weights<3>("simulate", "weights_time", cfg.episode_weights.time_of_day);
  cfg.requirements_path = r.get<std::string>("simulate", "requirements", "");
  cfg.sim_workers = r.get<int>("simulate", "workers", cfg.sim_workers);

  cfg.config_hash = fnv1a64(text.data(), text.size());
  return cfg;
}

PipelineConfig load_pipeline_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ValidationError("cannot open config file: " + path);
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse_pipeline_config(text);
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

void stage_gen_data(const PipelineConfig& cfg, const fs::path& workdir) {
  fs::create_directories(workdir);
  StageLock lock(workdir);
  Dataset ds = generate_dataset(cfg.dataset_n, cfg.seed_dataset(), cfg.dataset_weights,
                                cfg.dataset_workers);
  save_dataset(ds, (workdir / artifact::kDataset).string());
  write_manifest(workdir, artifact::kDataset, "gen-data", cfg, cfg.seed_dataset(), {});
}

void stage_train(const PipelineConfig& cfg, const fs::path& workdir) {
  StageLock lock(workdir);
  require_artifact(workdir, artifact::kDataset, "gen-data");
  Dataset ds = load_dataset((workdir / artifact::kDataset).string());

  AgentConfig acfg;
  acfg.init_seed = cfg.seed_agent_init();
  Agent agent = init_agent(acfg);
  TrainHyper hp = cfg.agent_hp;
  hp.shuffle_seed = cfg.seed_agent_shuffle();
  auto [trained, report] = train(agent, ds, hp);
  save_agent(trained, (workdir / artifact::kAgent).string());

  json jr;
  jr["format_version"] = 1;
  jr["epoch_train_mse"] = report.epoch_train_mse;
  if (report.final_assess_mse.has_value())
    jr["final_assess_mse"] = *report.final_assess_mse;
  else
    jr["final_assess_mse"] = nullptr;
  jr["hp"] = {{"lr", hp.lr},
              {"momentum", hp.momentum},
              {"epochs", hp.epochs},
              {"batch", hp.batch},
              {"shuffle_seed", hp.shuffle_seed}};
  write_json(jr, workdir / artifact::kTrainReport);

  write_manifest(workdir, artifact::kAgent, "train", cfg, cfg.seed_agent_init(),
                 {artifact::kDataset});
  write_manifest(workdir, artifact::kTrainReport, "train", cfg, cfg.seed_agent_init(),
                 {artifact::kDataset});
}

void stage_strategies(const PipelineConfig& cfg, const fs::path& workdir) {
  StageLock lock(workdir);
  require_artifact(workdir, artifact::kDataset, "gen-data");
  require_artifact(workdir, artifact::kAgent, "train");
  Dataset ds = load_dataset((workdir / artifact::kDataset).string());
  Agent agent = load_agent((workdir / artifact::kAgent).string());

  TrainTraces tt = compute_traces(agent, ds, Split::Train);
  StrategyOptions opts;
  opts.mode = cfg.k_mode;
  opts.k = cfg.fixed_k;
  opts.seed = cfg.seed_strategy();
  StrategyModel model = fit_strategies(tt.traces, opts);
  save_strategy_model(model, (workdir / artifact::kStrategy).string());

  // Affinity tables for the two environment factors.
  std::vector<std::string> time_tags, weather_tags;
  for (std::size_t i : tt.indices) {
    time_tags.push_back(to_string(ds.samples[i].params.time_of_day));
    weather_tags.push_back(to_string(ds.samples[i].params.weather));
  }
  auto affinity_json = [](const AffinityTable& t) {
    return json{{"levels", t.levels}, {"counts", t.counts}, {"freq", t.freq}};
  };
  json ja;
  ja["format_version"] = 1;
  ja["time_of_day"] = affinity_json(condition_affinity(model.assignments, time_tags));
  ja["weather"] = affinity_json(condition_affinity(model.assignments, weather_tags));
  write_json(ja, workdir / artifact::kAffinity);

  write_manifest(workdir, artifact::kStrategy, "strategies", cfg, cfg.seed_strategy(),
                 {artifact::kDataset, artifact::kAgent});
  write_manifest(workdir, artifact::kAffinity, "strategies", cfg, cfg.seed_strategy(),
                 {artifact::kDataset, artifact::kAgent});
}

void stage_conditions(const PipelineConfig& cfg, const fs::path& workdir) {
  StageLock lock(workdir);
  require_artifact(workdir, artifact::kDataset, "gen-data");
  require_artifact(workdir, artifact::kAgent, "train");
  require_artifact(workdir, artifact::kStrategy, "strategies");
  Dataset ds = load_dataset((workdir / artifact::kDataset).string());
  Agent agent = load_agent((workdir / artifact::kAgent).string());
  StrategyModel strategies = load_strategy_model((workdir / artifact::kStrategy).string());

  Codebook cb = build_codebook(ds, cfg.v_vis, cfg.seed_codebook());

  TrainTraces tt = compute_traces(agent, ds, Split::Train);
  if (tt.indices.size() != strategies.assignments.size())
    throw ValidationError("strategy assignments do not match the train split");

  Vocabulary vocab;
  vocab.v_vis = cb.vocab();
  vocab.n_strategies = strategies.k;
  auto [lo, hi] = error_terciles(tt.abs_errors);
  vocab.tercile_lo = lo;
  vocab.tercile_hi = hi;

  std::vector<Document> corpus;
  corpus.reserve(tt.indices.size());
  for (std::size_t j = 0; j < tt.indices.size(); ++j) {
    CompetencyLabel label{strategies.assignments[j], tt.abs_errors[j]};
    Document doc = tokenize(ds.samples[tt.indices[j]], cb, vocab, label);
    doc.doc_id = static_cast<std::int64_t>(tt.indices[j]);
    corpus.push_back(std::move(doc));
  }

  HdpConfig hcfg;
  hcfg.topics = cfg.topics;
  hcfg.sweeps = cfg.hdp_sweeps;
  hcfg.burn_in = cfg.hdp_burn_in;
  hcfg.seed = cfg.seed_hdp();
  hcfg.vocab_size = vocab.size();
  hcfg.n_visual = vocab.v_vis;
  hcfg.token_names = vocab_token_names(vocab, cb);
  ConditionModel model = fit_hdp(corpus, hcfg);

  save_condition_model(model, cb, vocab, (workdir / artifact::kConditions).string());
  write_manifest(workdir, artifact::kConditions, "conditions", cfg, cfg.seed_hdp(),
                 {artifact::kDataset, artifact::kAgent, artifact::kStrategy});
}

void stage_predictors(const PipelineConfig& cfg, const fs::path& workdir) {
  StageLock lock(workdir);
  require_artifact(workdir, artifact::kDataset, "gen-data");
  require_artifact(workdir, artifact::kAgent, "train");
  require_artifact(workdir, artifact::kStrategy, "strategies");
  require_artifact(workdir, artifact::kConditions, "conditions");
  Dataset ds = load_dataset((workdir / artifact::kDataset).string());
  Agent agent = load_agent((workdir / artifact::kAgent).string());
  StrategyModel strategies = load_strategy_model((workdir / artifact::kStrategy).string());
  LoadedConditionModel lcm = load_condition_model((workdir / artifact::kConditions).string());

  TrainTraces tt = compute_traces(agent, ds, Split::Train);

  // Inference-view thetas for every train sample.
  std::vector<std::vector<double>> thetas;
  thetas.reserve(tt.indices.size());
  for (std::size_t j = 0; j < tt.indices.size(); ++j) {
    Document doc = tokenize(ds.samples[tt.indices[j]], lcm.codebook, lcm.vocab);
    ConditionVector cv = infer_conditions(lcm.model, doc, 50,
                                          mix_seed(cfg.seed_predictors(), j));
    thetas.push_back(std::move(cv.theta));
  }

  LogisticHyper lh;
  lh.epochs = cfg.logistic_epochs;
  StrategyPredictor sp =
      fit_strategy_predictor(thetas, strategies.assignments, strategies.k, lh);

  std::vector<bool> calib_mask(tt.indices.size());
  for (std::size_t j = 0; j < calib_mask.size(); ++j)
    calib_mask[j] = is_calibration_position(j);
  PerfOptions popt;
  popt.cells = cfg.perf_cells;
  popt.seed = cfg.seed_predictors();
  PerformancePredictor pp =
      fit_performance_predictor(thetas, tt.signed_errors, calib_mask, popt);

  // Pooled in-band rates per (weather x time) group on the calibration split,
  // for the coarse fidelity mode.
  std::map<std::string, std::pair<std::size_t, std::size_t>> group_counts;
  for (std::size_t j = 0; j < tt.indices.size(); ++j) {
    if (!calib_mask[j]) continue;
    ConditionVector cv;
    cv.theta = thetas[j];
    ErrorBand band = predict_error_band(pp, cv);
    bool in = tt.signed_errors[j] >= band.q10 && tt.signed_errors[j] <= band.q90;
    auto& [tot, hit] = group_counts[group_key(ds.samples[tt.indices[j]].params)];
    ++tot;
    if (in) ++hit;
  }
  json jg = json::object();
  for (const auto& [key, counts] : group_counts)
    jg[key] = static_cast<double>(counts.second) / static_cast<double>(counts.first);

  // Tag probes for the inferred-tag monitor mode.
  std::vector<int> weather_levels, time_levels;
  for (std::size_t i : tt.indices) {
    weather_levels.push_back(static_cast<int>(ds.samples[i].params.weather));
    time_levels.push_back(static_cast<int>(ds.samples[i].params.time_of_day));
  }
  StrategyPredictor weather_probe = fit_strategy_predictor(thetas, weather_levels, 4, lh);
  StrategyPredictor time_probe = fit_strategy_predictor(thetas, time_levels, 3, lh);

  save_predictors(sp, pp, (workdir / artifact::kPredictors).string());
  json j = load_json(workdir / artifact::kPredictors);
  j["group_calibration_rates"] = jg;
  j["tag_probes"] = {{"weather",
                      {{"classes", weather_probe.classes},
                       {"dim", weather_probe.dim},
                       {"weights", weather_probe.weights},
                       {"diverged", weather_probe.diverged}}},
                     {"time_of_day",
                      {{"classes", time_probe.classes},
                       {"dim", time_probe.dim},
                       {"weights", time_probe.weights},
                       {"diverged", time_probe.diverged}}}};
  write_json(j, workdir / artifact::kPredictors);

  write_manifest(workdir, artifact::kPredictors, "predictors", cfg, cfg.seed_predictors(),
                 {artifact::kDataset, artifact::kAgent, artifact::kStrategy,
                  artifact::kConditions});
}

ModelBundle load_model_bundle(const fs::path& workdir) {
  require_artifact(workdir, artifact::kStrategy, "strategies");
  require_artifact(workdir, artifact::kConditions, "conditions");
  require_artifact(workdir, artifact::kPredictors, "predictors");
  ModelBundle b;
  LoadedConditionModel lcm = load_condition_model((workdir / artifact::kConditions).string());
  b.codebook = std::move(lcm.codebook);
  b.vocab = lcm.vocab;
  b.conditions = std::move(lcm.model);
  b.strategies = load_strategy_model((workdir / artifact::kStrategy).string());
  LoadedPredictors lp = load_predictors((workdir / artifact::kPredictors).string());
  b.strategy_predictor = std::move(lp.strategy);
  b.performance_predictor = std::move(lp.performance);
  return b;
}

TagProbes load_tag_probes(const fs::path& workdir) {
  require_artifact(workdir, artifact::kPredictors, "predictors");
  json j = load_json(workdir / artifact::kPredictors);
  if (!j.contains("tag_probes"))
    throw ValidationError("predictors artifact has no tag probes; rerun 'predictors'");
  auto read = [](const json& jp) {
    StrategyPredictor p;
    p.classes = jp.at("classes");
    p.dim = jp.at("dim");
    p.weights = jp.at("weights").get<std::vector<double>>();
    p.diverged = jp.at("diverged");
    return p;
  };
  TagProbes probes;
  probes.weather = read(j.at("tag_probes").at("weather"));
  probes.time_of_day = read(j.at("tag_probes").at("time_of_day"));
  return probes;
}

void stage_evaluate(const PipelineConfig& cfg, const fs::path& workdir) {
  StageLock lock(workdir);
  require_artifact(workdir, artifact::kDataset, "gen-data");
  require_artifact(workdir, artifact::kAgent, "train");
  require_artifact(workdir, artifact::kStrategy, "strategies");
  require_artifact(workdir, artifact::kConditions, "conditions");
  require_artifact(workdir, artifact::kPredictors, "predictors");
  Dataset ds = load_dataset((workdir / artifact::kDataset).string());
  Agent agent = load_agent((workdir / artifact::kAgent).string());
  ModelBundle bundle = load_model_bundle(workdir);
  json jp = load_json(workdir / artifact::kPredictors);

  // Assess-split predictions.
  struct Row {
    std::size_t index;
    double estimate, signed_err, abs_err;
    int observed_strategy;
    CompetencyEstimate comp;
  };
  std::vector<Row> rows;
  std::vector<std::vector<double>> thetas;
  bundle.infer_seed = cfg.seed_metrics();
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    if (ds.split[i] != Split::Assess) continue;
    ForwardResult fr = forward(agent, ds.samples[i].image);
    Row row;
    row.index = i;
    row.estimate = fr.estimate_m;
    row.signed_err = fr.estimate_m - ds.samples[i].true_distance_m;
    row.abs_err = std::abs(row.signed_err);
    row.observed_strategy = assign_strategy(bundle.strategies, fr.trace.values).strategy_id;
    row.comp = estimate_competency(bundle, ds.samples[i].image);
    thetas.push_back(row.comp.theta.theta);
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ValidationError("evaluate: assess split is empty");

  // Coverage factors: weather, time_of_day, obstacle_kind, distance tercile.
  std::vector<double> abs_errors;
  std::vector<FactorColumn> factors(4);
  factors[0] = {"weather", {}, 4};
  factors[1] = {"time_of_day", {}, 3};
  factors[2] = {"obstacle_kind", {}, 3};
  factors[3] = {"distance_tercile", {}, 3};
  std::vector<double> distances;
  for (const Row& r : rows) distances.push_back(ds.samples[r.index].true_distance_m);
  double d_lo = nearest_rank_percentile(distances, 100.0 / 3.0);
  double d_hi = nearest_rank_percentile(distances, 200.0 / 3.0);
  for (const Row& r : rows) {
    const SceneParams& p = ds.samples[r.index].params;
    abs_errors.push_back(r.abs_err);
    factors[0].levels.push_back(static_cast<int>(p.weather));
    factors[1].levels.push_back(static_cast<int>(p.time_of_day));
    factors[2].levels.push_back(static_cast<int>(p.obstacle_kind));
    double d = ds.samples[r.index].true_distance_m;
    factors[3].levels.push_back(d < d_lo ? 0 : (d < d_hi ? 1 : 2));
  }
  CoverageOptions copt;
  copt.seed = cfg.seed_metrics();
  CoverageResult coverage = compute_coverage(thetas, factors, abs_errors, copt);

  // Correctness.
  std::vector<std::vector<double>> predicted;
  std::vector<int> executed;
  for (const Row& r : rows) {
    predicted.push_back(r.comp.strategy_distribution);
    executed.push_back(r.observed_strategy);
  }
  double corr_point = compute_correctness(predicted, executed, CorrectnessMode::Point);
  double corr_dist =
      compute_correctness(predicted, executed, CorrectnessMode::Distribution);

  // Fidelity.
  std::map<std::string, double> group_rates;
  double pooled = jp.at("performance").at("pooled_calibration_rate");
  if (jp.contains("group_calibration_rates"))
    for (auto it = jp["group_calibration_rates"].begin();
         it != jp["group_calibration_rates"].end(); ++it)
      group_rates[it.key()] = it.value().get<double>();
  std::vector<FidelitySample> fsamples;
  for (const Row& r : rows) {
    FidelitySample s;
    s.forecast_p = r.comp.error_band.in_band_probability;
    s.q10 = r.comp.error_band.q10;
    s.q90 = r.comp.error_band.q90;
    s.signed_error_m = r.signed_err;
    s.group = group_key(ds.samples[r.index].params);
    if (!group_rates.count(s.group)) group_rates[s.group] = pooled;
    fsamples.push_back(std::move(s));
  }
  FidelityResult fid_fine = compute_fidelity(fsamples, FidelityMode::Fine);
  FidelityResult fid_coarse = compute_fidelity(fsamples, FidelityMode::Coarse, &group_rates);

  // Per-condition signed-error histograms for the plot export.
  constexpr double kHistLo = -10.0, kHistStep = 1.0;
  constexpr int kHistBins = 21;
  std::map<std::string, std::vector<std::size_t>> hists;
  for (const Row& r : rows) {
    auto& h = hists[group_key(ds.samples[r.index].params)];
    if (h.empty()) h.assign(kHistBins, 0);
    int bin = static_cast<int>(std::floor((r.signed_err - kHistLo) / kHistStep));
    bin = std::clamp(bin, 0, kHistBins - 1);
    h[static_cast<std::size_t>(bin)]++;
  }

  json jm;
  jm["format_version"] = 1;
  if (coverage.coverage.has_value())
    jm["coverage"] = *coverage.coverage;
  else
    jm["coverage"] = nullptr;
  jm["coverage_controlling"] = coverage.controlling_count;
  jm["coverage_identified"] = coverage.identified_count;
  json jf = json::array();
  for (const auto& f : coverage.factors)
    jf.push_back({{"name", f.name},
                  {"spread_m", f.spread_m},
                  {"p_value", f.p_value},
                  {"controlling", f.controlling},
                  {"probe_balanced_accuracy", f.probe_balanced_accuracy},
                  {"identified", f.identified}});
  jm["coverage_factors"] = jf;
  jm["correctness_point"] = corr_point;
  jm["correctness_distribution"] = corr_dist;
  jm["fidelity_fine"] = fid_fine.fidelity;
  jm["fidelity_coarse"] = fid_coarse.fidelity;
  jm["brier_fine"] = fid_fine.brier;
  jm["brier_coarse"] = fid_coarse.brier;
  jm["n_coverage"] = coverage.n;
  jm["n_correctness"] = predicted.size();
  jm["n_fidelity"] = fsamples.size();
  json jh = json::object();
  for (const auto& [key, h] : hists) jh[key] = h;
  jm["error_histograms"] = {{"lo", kHistLo}, {"step", kHistStep}, {"bins", jh}};
  write_json(jm, workdir / artifact::kMetrics);

  write_manifest(workdir, artifact::kMetrics, "evaluate", cfg, cfg.seed_metrics(),
                 {artifact::kDataset, artifact::kAgent, artifact::kStrategy,
                  artifact::kConditions, artifact::kPredictors});
}

void stage_simulate(const PipelineConfig& cfg, const fs::path& workdir) {
  StageLock lock(workdir);
  require_artifact(workdir, artifact::kAgent, "train");
  Agent agent = load_agent((workdir / artifact::kAgent).string());

  std::vector<Requirement> requirements;
  if (!cfg.requirements_path.empty())
    requirements = load_requirements(cfg.requirements_path);

  ModelBundle bundle;
  TagProbes probes;
  GuardBundle guard;
  const GuardBundle* guard_ptr = nullptr;
  if (cfg.gated) {
    bundle = load_model_bundle(workdir);
    guard.models = &bundle;
    guard.requirements = requirements;
    guard.tag_mode = cfg.tag_mode;
    if (cfg.tag_mode == TagMode::Inferred) {
      probes = load_tag_probes(workdir);
      guard.probes = &probes;
    }
    guard_ptr = &guard;
  }

  SimEstimator estimator = &agent;
  BatchResult batch = run_batch(cfg.episodes, cfg.episode_weights, estimator, guard_ptr,
                                cfg.seed_simulate(), cfg.sim_workers);
  save_episode_logs(batch.episodes, (workdir / artifact::kEpisodes).string());

  json js;
  js["format_version"] = 1;
  js["gated"] = cfg.gated;
  auto summary_json = [](const TagSummary& s) {
    json j = {{"episodes", s.episodes},   {"detected", s.detected},
              {"collisions", s.collisions}, {"handed_off", s.handed_off},
              {"premature", s.premature}};
    if (s.detection_rate.has_value())
      j["detection_rate"] = *s.detection_rate;
    else
      j["detection_rate"] = nullptr;
    return j;
  };
  js["overall"] = summary_json(batch.overall);
  json jt = json::object();
  for (const auto& [key, s] : batch.by_tags) jt[key] = summary_json(s);
  js["by_tags"] = jt;
  json jreqs = json::array();
  for (const auto& r : requirements) jreqs.push_back(format_requirement(r));
  js["requirements"] = jreqs;
  write_json(js, workdir / artifact::kSimSummary);

  std::vector<std::string> inputs = {artifact::kAgent};
  if (cfg.gated) {
    inputs.push_back(artifact::kStrategy);
    inputs.push_back(artifact::kConditions);
    inputs.push_back(artifact::kPredictors);
  }
  write_manifest(workdir, artifact::kEpisodes, "simulate", cfg, cfg.seed_simulate(), inputs);
  write_manifest(workdir, artifact::kSimSummary, "simulate", cfg, cfg.seed_simulate(), inputs);
}

void stage_report(const PipelineConfig& cfg, const fs::path& workdir) {
  StageLock lock(workdir);
  require_artifact(workdir, artifact::kMetrics, "evaluate");
  require_artifact(workdir, artifact::kEpisodes, "simulate");
  require_artifact(workdir, artifact::kSimSummary, "simulate");
  json jm = load_json(workdir / artifact::kMetrics);
  json js = load_json(workdir / artifact::kSimSummary);

  std::vector<Requirement> requirements;
  if (!cfg.requirements_path.empty())
    requirements = load_requirements(cfg.requirements_path);

  // Episode outcomes from the JSON-lines trailers.
  std::vector<EpisodeSummary> episodes;
  {
    std::ifstream f(workdir / artifact::kEpisodes);
    if (!f) throw IoError("cannot open episode log");
    std::string line;
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      json j = json::parse(line);
      if (!j.contains("outcome")) continue;
      EpisodeSummary e;
      std::string outcome = j.at("outcome");
      e.outcome = outcome == "detected_in_time" ? EpisodeOutcome::DetectedInTime
                  : outcome == "collision"      ? EpisodeOutcome::Collision
                                                : EpisodeOutcome::HandedOff;
      for (auto it = j.at("tags").begin(); it != j.at("tags").end(); ++it)
        e.tags[it.key()] = it.value().get<std::string>();
      episodes.push_back(std::move(e));
    }
  }
  std::vector<ReliabilityEntry> reliability = compute_reliability(episodes, requirements);

  json jr;
  jr["format_version"] = 1;
  jr["coverage"] = jm.at("coverage");
  jr["coverage_factors"] = jm.at("coverage_factors");
  jr["correctness_point"] = jm.at("correctness_point");
  jr["correctness_distribution"] = jm.at("correctness_distribution");
  jr["fidelity_coarse"] = jm.at("fidelity_coarse");
  jr["fidelity_fine"] = jm.at("fidelity_fine");
  jr["reliability"] = reliability_to_json(reliability);
  jr["counts"] = {{"coverage", jm.at("n_coverage")},
                  {"correctness", jm.at("n_correctness")},
                  {"fidelity", jm.at("n_fidelity")},
                  {"episodes", episodes.size()}};
  jr["simulation"] = js;
  write_json(jr, workdir / artifact::kReport);

  // Plot data CSV: per-condition error histograms + probe accuracies.
  std::ofstream csv(workdir / artifact::kPlotData, std::ios::trunc);
  if (!csv) throw IoError("cannot write plot data");
  csv << "table,key,x,value\n";
  const json& jh = jm.at("error_histograms");
  double lo = jh.at("lo");
  double step = jh.at("step");
  for (auto it = jh.at("bins").begin(); it != jh.at("bins").end(); ++it) {
    const auto& bins = it.value();
    for (std::size_t b = 0; b < bins.size(); ++b)
      csv << "error_hist," << it.key() << "," << (lo + (static_cast<double>(b) + 0.5) * step)
          << "," << bins[b].get<std::size_t>() << "\n";
  }
  for (const auto& f : jm.at("coverage_factors"))
    csv << "probe_accuracy," << f.at("name").get<std::string>() << ",,"
        << f.at("probe_balanced_accuracy").get<double>() << "\n";
  for (const auto& e : reliability)
    csv << "reliability,\"" << e.requirement << "\","
        << (e.achieved_rate.has_value() ? std::to_string(*e.achieved_rate) : "NA") << ","
        << (e.met ? 1 : 0) << "\n";

  write_manifest(workdir, artifact::kReport, "report", cfg, cfg.master_seed,
                 {artifact::kMetrics, artifact::kEpisodes, artifact::kSimSummary});
  write_manifest(workdir, artifact::kPlotData, "report", cfg, cfg.master_seed,
                 {artifact::kMetrics, artifact::kEpisodes, artifact::kSimSummary});
}

bool verify_manifests(const fs::path& workdir, std::string* first_error) {
  for (const auto& entry : fs::directory_iterator(workdir)) {
    const std::string name = entry.path().filename().string();
    if (name.size() < 14 || name.substr(name.size() - 14) != ".manifest.json") continue;
    json j = load_json(entry.path());
    for (auto it = j.at("inputs").begin(); it != j.at("inputs").end(); ++it) {
      fs::path input = workdir / it.key();
      if (!fs::exists(input)) {
        if (first_error) *first_error = "missing input " + it.key() + " for " + name;
        return false;
      }
      if (to_hex(file_hash(input)) != it.value().get<std::string>()) {
        if (first_error)
          *first_error = "hash mismatch on " + it.key() + " recorded by " + name;
        return false;
      }
    }
  }
  return true;
}

}  // namespace competency
