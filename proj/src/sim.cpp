#include "competency/sim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <thread>

#include <json.hpp>

namespace competency {

namespace {

constexpr int kMaxTicks = 100000;

std::pair<double, ActivationTrace> estimate(const SimEstimator& est, const Image& img,
                                            double true_m) {
  if (std::holds_alternative<const Agent*>(est)) {
    const Agent* a = std::get<const Agent*>(est);
    ForwardResult r = forward(*a, img);
    return {r.estimate_m, std::move(r.trace)};
  }
  if (std::holds_alternative<OracleEstimator>(est)) return {true_m, {}};
  if (std::holds_alternative<ConstantEstimator>(est))
    return {std::get<ConstantEstimator>(est).value_m, {}};
  if (std::holds_alternative<DarkBlindEstimator>(est)) {
    const auto& e = std::get<DarkBlindEstimator>(est);
    double mean = 0.0;
    for (double p : img.pixels) mean += p;
    mean /= static_cast<double>(img.pixels.size());
    return {mean < e.luminance_threshold ? e.blind_estimate_m : true_m, {}};
  }
  return {true_m + std::get<BiasedEstimator>(est).bias_m, {}};
}

std::string tags_key(const std::map<std::string, std::string>& tags) {
  std::string key;
  for (const auto& [k, v] : tags) {
    if (!key.empty()) key += ",";
    key += k + "=" + v;
  }
  return key;
}

std::map<std::string, std::string> infer_tags(const TagProbes& probes,
                                              const ConditionVector& theta) {
  std::map<std::string, std::string> tags;
  auto dist_w = predict_strategy_distribution(probes.weather, theta);
  tags["weather"] = to_string(static_cast<Weather>(argmax_strategy(dist_w)));
  auto dist_t = predict_strategy_distribution(probes.time_of_day, theta);
  tags["time"] = to_string(static_cast<TimeOfDay>(argmax_strategy(dist_t)));
  return tags;
}

void accumulate(TagSummary& s, const EpisodeLog& log) {
  s.episodes++;
  switch (log.outcome) {
    case EpisodeOutcome::DetectedInTime: s.detected++; break;
    case EpisodeOutcome::Collision: s.collisions++; break;
    case EpisodeOutcome::HandedOff: s.handed_off++; break;
  }
  if (log.premature) s.premature++;
}

void finish(TagSummary& s) {
  const std::size_t denom = s.episodes - s.handed_off;
  if (denom > 0)
    s.detection_rate = static_cast<double>(s.detected) / static_cast<double>(denom);
}

}  // namespace

std::map<std::string, std::string> SceneFactors::tags() const {
  return {{"kind", to_string(obstacle_kind)},
          {"weather", to_string(weather)},
          {"time", to_string(time_of_day)}};
}

EpisodeLog run_episode(const SimEstimator& estimator, const GuardBundle* guard,
                       const EpisodeConfig& config) {
  if (!(config.trigger_m > config.margin_m && config.margin_m > 0.0))
    throw ValidationError("episode config: need trigger > margin > 0");
  if (guard != nullptr) {
    if (guard->models == nullptr)
      throw ConfigError("gated episode without fitted guard models");
    if (guard->tag_mode == TagMode::Inferred && guard->probes == nullptr)
      throw ConfigError("inferred-tag mode without tag probes");
  }

  EpisodeLog log;
  log.seed = config.seed;
  log.tags = config.factors.tags();

  double true_m = config.initial_m;
  double speed = config.speed_mps;
  MonitorState mstate;
  bool done = false;

  for (int tick = 0; tick < kMaxTicks && !done; ++tick) {
    if (true_m < config.margin_m) {
      log.outcome = EpisodeOutcome::Collision;
      break;
    }

    SceneParams params;
    params.distance_m = std::min(30.0, std::max(2.0, true_m));
    params.obstacle_kind = config.factors.obstacle_kind;
    params.weather = config.factors.weather;
    params.time_of_day = config.factors.time_of_day;
    params.lateral_offset = config.factors.lateral_offset;
    params.noise_seed = mix_seed(config.seed, static_cast<std::uint64_t>(tick));
    Image img = render(params);

    auto [est_m, trace] = estimate(estimator, img, true_m);

    TickRecord rec;
    rec.tick = tick;
    rec.true_m = true_m;
    rec.estimate_m = est_m;

    bool maneuver = false;
    if (guard != nullptr) {
      CompetencyEstimate comp = estimate_competency(*guard->models, img);
      std::optional<int> observed;
      if (!trace.values.empty())
        observed = assign_strategy(guard->models->strategies, trace.values).strategy_id;
      std::map<std::string, std::string> tags =
          guard->tag_mode == TagMode::GroundTruth
              ? log.tags
              : infer_tags(*guard->probes, comp.theta);
      Action action = monitor_step(guard->requirements, est_m, comp, observed, tags,
                                   mstate, guard->policy);
      rec.action = action.kind;
      rec.p_miss = action.reason.p_miss;
      rec.novelty = action.reason.novelty;
      switch (action.kind) {
        case ActionKind::Handoff:
          log.outcome = EpisodeOutcome::HandedOff;
          done = true;
          break;
        case ActionKind::PreemptiveManeuver:
          maneuver = true;
          break;
        case ActionKind::ReduceSpeed:
          speed *= 0.5;  // takes effect from the next advance
          break;
        case ActionKind::Proceed:
          break;
      }
    }
    if (done) {
      log.ticks.push_back(rec);
      break;
    }

    if (est_m <= config.trigger_m) maneuver = true;

    if (maneuver) {
      log.premature = true_m > config.premature_m;
      log.outcome = true_m >= config.margin_m ? EpisodeOutcome::DetectedInTime
                                              : EpisodeOutcome::Collision;
      log.ticks.push_back(rec);
      break;
    }

    log.ticks.push_back(rec);
    true_m -= speed * config.tick_s;
  }
  return log;
}

BatchResult run_batch(std::size_t n, const FactorWeights& mix,
                      const SimEstimator& estimator, const GuardBundle* guard,
                      std::uint64_t master_seed, int workers) {
  if (n < 1) throw ValidationError("run_batch: need at least one episode");

  BatchResult result;
  result.episodes.resize(n);

  auto run_one = [&](std::size_t i) {
    const std::uint64_t ep_seed = mix_seed(master_seed, i);
    Rng rng(mix_seed(ep_seed, 997));
    EpisodeConfig cfg;
    cfg.seed = ep_seed;
    cfg.factors.obstacle_kind = static_cast<ObstacleKind>(
        rng.categorical({mix.obstacle_kind[0], mix.obstacle_kind[1], mix.obstacle_kind[2]}));
    cfg.factors.weather = static_cast<Weather>(rng.categorical(
        {mix.weather[0], mix.weather[1], mix.weather[2], mix.weather[3]}));
    cfg.factors.time_of_day = static_cast<TimeOfDay>(
        rng.categorical({mix.time_of_day[0], mix.time_of_day[1], mix.time_of_day[2]}));
    cfg.factors.lateral_offset = rng.uniform(-0.3, 0.3);
    result.episodes[i] = run_episode(estimator, guard, cfg);
  };

  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) run_one(i);
  } else {
    std::size_t w = std::min<std::size_t>(static_cast<std::size_t>(workers), n);
    std::vector<std::thread> pool;
    pool.reserve(w);
    for (std::size_t t = 0; t < w; ++t)
      pool.emplace_back([&, t] {
        for (std::size_t i = t; i < n; i += w) run_one(i);
      });
    for (auto& th : pool) th.join();
  }

  for (const EpisodeLog& log : result.episodes) {
    accumulate(result.by_tags[tags_key(log.tags)], log);
    accumulate(result.overall, log);
  }
  for (auto& [key, summary] : result.by_tags) finish(summary);
  finish(result.overall);
  return result;
}

void save_episode_logs(const std::vector<EpisodeLog>& logs, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open for write: " + path);
  for (std::size_t e = 0; e < logs.size(); ++e) {
    const EpisodeLog& log = logs[e];
    for (const TickRecord& t : log.ticks) {
      nlohmann::json j = {{"episode", e},          {"tick", t.tick},
                          {"true_m", t.true_m},    {"estimate_m", t.estimate_m},
                          {"action", to_string(t.action)}, {"p_miss", t.p_miss},
                          {"novelty", t.novelty}};
      f << j.dump() << "\n";
    }
    const char* outcome = log.outcome == EpisodeOutcome::DetectedInTime ? "detected_in_time"
                          : log.outcome == EpisodeOutcome::Collision    ? "collision"
                                                                        : "handed_off";
    nlohmann::json trailer = {{"episode", e},
                              {"outcome", outcome},
                              {"premature", log.premature},
                              {"tags", log.tags},
                              {"seed", log.seed}};
    f << trailer.dump() << "\n";
  }
}

std::vector<EpisodeSummary> episode_summaries(const std::vector<EpisodeLog>& logs) {
  std::vector<EpisodeSummary> out;
  out.reserve(logs.size());
  for (const auto& log : logs) out.push_back(EpisodeSummary{log.tags, log.outcome});
  return out;
}

}  // namespace competency
