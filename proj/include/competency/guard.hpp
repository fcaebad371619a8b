#pragma once
// Operator requirements and the online reliability monitor. Requirements
// follow a one-line grammar:
//   WHEN <tag>(=<level>)? (AND <tag>=<level>)* REQUIRE DETECT_WITHIN <n> M RATE >= <r>
//   WHEN * REQUIRE ...
// Keywords are case-insensitive; a bare tag (no =level) only requires the
// tag to be present.

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "competency/core.hpp"
#include "competency/predictors.hpp"

namespace competency {

struct PredicateTerm {
  std::string tag;
  std::optional<std::string> level;
  bool operator==(const PredicateTerm&) const = default;
};

struct Requirement {
  bool wildcard = false;
  std::vector<PredicateTerm> predicate;  // conjunction; empty only when wildcard
  double threshold_m = 8.0;
  double min_rate = 0.99;

  [[nodiscard]] bool matches(const std::map<std::string, std::string>& tags) const;
  bool operator==(const Requirement&) const = default;
};

// Throws ValidationError; syntax messages carry the byte offset.
[[nodiscard]] Requirement parse_requirement(const std::string& text);
[[nodiscard]] std::string format_requirement(const Requirement& req);

// One requirement per line; '#' starts a comment; blank lines skipped.
[[nodiscard]] std::vector<Requirement> load_requirements(const std::string& path);
[[nodiscard]] std::vector<Requirement> parse_requirements_text(const std::string& text);

enum class ActionKind { Proceed, ReduceSpeed, PreemptiveManeuver, Handoff };

[[nodiscard]] const char* to_string(ActionKind k);

struct ActionReason {
  std::optional<Requirement> requirement;  // set on fallbacks only
  double p_miss = 0.0;
  bool novelty = false;
  bool strategy_mismatch = false;
  std::string note;
};

struct Action {
  ActionKind kind = ActionKind::Proceed;
  ActionReason reason;
};

// Fallbacks are consumed in order, each at most once per episode.
struct MonitorPolicy {
  std::vector<ActionKind> fallbacks = {ActionKind::ReduceSpeed,
                                       ActionKind::PreemptiveManeuver,
                                       ActionKind::Handoff};
  double mismatch_threshold = 0.05;
};

struct MonitorState {
  std::set<ActionKind> used;
};

// P(true distance <= threshold while the estimate clears it), from a normal
// approximation of the signed-error band: sigma = (q90 - q10) / 2.5631,
// floored at 0.05 m. Defined 0 when the estimate is already at or below the
// threshold.
[[nodiscard]] double miss_probability(double estimate_m, double threshold_m,
                                      double band_mean, double q10, double q90);

[[nodiscard]] Action monitor_step(const std::vector<Requirement>& requirements,
                                  double estimate_m, const CompetencyEstimate& competency,
                                  std::optional<int> observed_strategy,
                                  const std::map<std::string, std::string>& tags,
                                  MonitorState& state, const MonitorPolicy& policy = {});

// One-paragraph explanation naming the dominant condition topic, the
// triggered requirement and the failure probability. Formatting is stable.
[[nodiscard]] std::string explain(const Action& action, const ConditionModel& model,
                                  const ConditionVector& theta,
                                  const Codebook* codebook = nullptr);

}  // namespace competency
