#include "competency/guard.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <fstream>
#include <sstream>

namespace competency {

namespace {

// 2 * z_{0.90}: width of a central 80% band in sigma units.
constexpr double kBandToSigma = 2.5631;
constexpr double kSigmaFloor = 0.05;

struct Token {
  enum Kind { Word, Number, Equals, GreaterEqual, Star, End } kind;
  std::string text;
  double value = 0.0;
  std::size_t offset = 0;
};

class Lexer {
 public:
  explicit Lexer(const std::string& s) : s_(s) {}

  Token next() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
    Token t;
    t.offset = pos_;
    if (pos_ >= s_.size()) {
      t.kind = Token::End;
      return t;
    }
    char c = s_[pos_];
    if (c == '*') {
      ++pos_;
      t.kind = Token::Star;
      t.text = "*";
      return t;
    }
    if (c == '=') {
      ++pos_;
      t.kind = Token::Equals;
      t.text = "=";
      return t;
    }
    if (c == '>' && pos_ + 1 < s_.size() && s_[pos_ + 1] == '=') {
      pos_ += 2;
      t.kind = Token::GreaterEqual;
      t.text = ">=";
      return t;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.' || c == '-' || c == '+') {
      std::size_t end = pos_;
      while (end < s_.size() &&
             (std::isdigit(static_cast<unsigned char>(s_[end])) || s_[end] == '.' ||
              s_[end] == '-' || s_[end] == '+' || s_[end] == 'e' || s_[end] == 'E'))
        ++end;
      t.text = s_.substr(pos_, end - pos_);
      char* stop = nullptr;
      t.value = std::strtod(t.text.c_str(), &stop);
      if (stop != t.text.c_str() + t.text.size())
        throw ValidationError("requirement syntax error at byte " + std::to_string(pos_) +
                              ": bad number '" + t.text + "'");
      t.kind = Token::Number;
      pos_ = end;
      return t;
    }
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      std::size_t end = pos_;
      while (end < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[end])) ||
                                 s_[end] == '_'))
        ++end;
      t.kind = Token::Word;
      t.text = s_.substr(pos_, end - pos_);
      pos_ = end;
      return t;
    }
    throw ValidationError("requirement syntax error at byte " + std::to_string(pos_) +
                          ": unexpected character '" + std::string(1, c) + "'");
  }

 private:
  const std::string& s_;
  std::size_t pos_ = 0;
};

std::string upper(std::string s) {
  for (char& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

[[noreturn]] void fail_at(const Token& t, const std::string& expected) {
  throw ValidationError("requirement syntax error at byte " + std::to_string(t.offset) +
                        ": expected " + expected +
                        (t.text.empty() ? "" : ", got '" + t.text + "'"));
}

void expect_keyword(const Token& t, const char* kw) {
  if (t.kind != Token::Word || upper(t.text) != kw) fail_at(t, std::string("'") + kw + "'");
}

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

// Shortest representation that parses back to the same double.
std::string format_number(double v) {
  char buf[64];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

}  // namespace

bool Requirement::matches(const std::map<std::string, std::string>& tags) const {
  if (wildcard) return true;
  for (const auto& term : predicate) {
    auto it = tags.find(term.tag);
    if (it == tags.end()) return false;
    if (term.level.has_value() && it->second != *term.level) return false;
  }
  return true;
}

Requirement parse_requirement(const std::string& text) {
  Lexer lex(text);
  Requirement req;

  Token t = lex.next();
  expect_keyword(t, "WHEN");

  t = lex.next();
  if (t.kind == Token::Star) {
    req.wildcard = true;
    t = lex.next();
  } else {
    for (;;) {
      if (t.kind != Token::Word) fail_at(t, "a condition tag or '*'");
      PredicateTerm term;
      term.tag = t.text;
      t = lex.next();
      if (t.kind == Token::Equals) {
        t = lex.next();
        if (t.kind != Token::Word) fail_at(t, "a level name after '='");
        term.level = t.text;
        t = lex.next();
      }
      req.predicate.push_back(std::move(term));
      if (t.kind == Token::Word && upper(t.text) == "AND") {
        t = lex.next();
        continue;
      }
      break;
    }
  }

  expect_keyword(t, "REQUIRE");
  t = lex.next();
  expect_keyword(t, "DETECT_WITHIN");
  t = lex.next();
  if (t.kind != Token::Number) fail_at(t, "a distance in meters");
  req.threshold_m = t.value;
  t = lex.next();
  expect_keyword(t, "M");
  t = lex.next();
  expect_keyword(t, "RATE");
  t = lex.next();
  if (t.kind != Token::GreaterEqual) fail_at(t, "'>='");
  t = lex.next();
  if (t.kind != Token::Number) fail_at(t, "a rate");
  req.min_rate = t.value;
  t = lex.next();
  if (t.kind != Token::End) fail_at(t, "end of requirement");

  if (!(req.min_rate > 0.0 && req.min_rate <= 1.0))
    throw ValidationError("requirement semantic error: rate must be in (0, 1]");
  if (!(req.threshold_m > 0.0))
    throw ValidationError("requirement semantic error: detection threshold must be > 0");
  return req;
}

std::string format_requirement(const Requirement& req) {
  std::ostringstream out;
  out << "WHEN ";
  if (req.wildcard) {
    out << "*";
  } else {
    for (std::size_t i = 0; i < req.predicate.size(); ++i) {
      if (i) out << " AND ";
      out << req.predicate[i].tag;
      if (req.predicate[i].level.has_value()) out << "=" << *req.predicate[i].level;
    }
  }
  out << " REQUIRE DETECT_WITHIN " << format_number(req.threshold_m) << " M RATE >= "
      << format_number(req.min_rate);
  return out.str();
}

std::vector<Requirement> parse_requirements_text(const std::string& text) {
  std::vector<Requirement> out;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    try {
      out.push_back(parse_requirement(line));
    } catch (const ValidationError& e) {
      throw ValidationError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<Requirement> load_requirements(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open requirements file: " + path);
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse_requirements_text(text);
}

const char* to_string(ActionKind k) {
  switch (k) {
    case ActionKind::Proceed: return "proceed";
    case ActionKind::ReduceSpeed: return "reduce_speed";
    case ActionKind::PreemptiveManeuver: return "preemptive_maneuver";
    case ActionKind::Handoff: return "handoff";
  }
  return "?";
}

double miss_probability(double estimate_m, double threshold_m, double band_mean,
                        double q10, double q90) {
  if (estimate_m <= threshold_m) return 0.0;
  double sigma = std::max((q90 - q10) / kBandToSigma, kSigmaFloor);
  double p = norm_cdf((threshold_m - (estimate_m - band_mean)) / sigma);
  // The true tail probability is positive whenever the estimate clears the
  // threshold; keep it positive where erfc underflows.
  return std::max(p, std::numeric_limits<double>::min());
}

Action monitor_step(const std::vector<Requirement>& requirements, double estimate_m,
                    const CompetencyEstimate& competency,
                    std::optional<int> observed_strategy,
                    const std::map<std::string, std::string>& tags, MonitorState& state,
                    const MonitorPolicy& policy) {
  const ErrorBand& band = competency.error_band;
  if (band.q90 < band.q10) {
    Action a;
    a.kind = ActionKind::Handoff;
    a.reason.note = "corrupt performance band (q90 < q10); failing closed";
    state.used.insert(ActionKind::Handoff);
    return a;
  }

  bool mismatch = false;
  if (observed_strategy.has_value())
    mismatch = strategy_mismatch(competency.strategy_distribution, *observed_strategy,
                                 policy.mismatch_threshold);

  double max_p_miss = 0.0;
  for (const Requirement& req : requirements) {
    if (!req.matches(tags)) continue;
    double pm = miss_probability(estimate_m, req.threshold_m, band.mean, band.q10, band.q90);
    max_p_miss = std::max(max_p_miss, pm);
    bool at_risk = pm > (1.0 - req.min_rate) || competency.novelty.flag || mismatch;
    if (!at_risk) continue;

    ActionKind kind = ActionKind::Handoff;
    for (ActionKind cand : policy.fallbacks) {
      if (!state.used.count(cand)) {
        kind = cand;
        break;
      }
    }
    state.used.insert(kind);
    Action a;
    a.kind = kind;
    a.reason.requirement = req;
    a.reason.p_miss = pm;
    a.reason.novelty = competency.novelty.flag;
    a.reason.strategy_mismatch = mismatch;
    return a;
  }

  Action a;
  a.kind = ActionKind::Proceed;
  a.reason.p_miss = max_p_miss;
  a.reason.novelty = competency.novelty.flag;
  a.reason.strategy_mismatch = mismatch;
  return a;
}

std::string explain(const Action& action, const ConditionModel& model,
                    const ConditionVector& theta, const Codebook* codebook) {
  int top = 0;
  for (std::size_t t = 1; t < theta.theta.size(); ++t)
    if (theta.theta[t] > theta.theta[static_cast<std::size_t>(top)])
      top = static_cast<int>(t);

  std::string topic_str = "topic " + std::to_string(top) + " (";
  if (top < model.config.topics && model.active[static_cast<std::size_t>(top)]) {
    auto tokens = describe_topic(model, top, 3, codebook);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (i) topic_str += ", ";
      topic_str += tokens[i].name;
    }
  } else {
    topic_str += "inactive";
  }
  topic_str += ")";

  char buf[160];
  std::string out;
  if (action.kind == ActionKind::Proceed) {
    out = "No active requirement at risk. Dominant condition " + topic_str + ".";
    return out;
  }
  if (!action.reason.requirement.has_value()) {
    out = std::string("Handoff: ") + action.reason.note + ".";
    return out;
  }
  std::snprintf(buf, sizeof buf, "%s: requirement '%s' at risk (miss probability %.3f",
                to_string(action.kind),
                format_requirement(*action.reason.requirement).c_str(),
                action.reason.p_miss);
  out = buf;
  if (action.reason.novelty) out += ", novel conditions";
  if (action.reason.strategy_mismatch) out += ", strategy mismatch";
  out += "). Dominant condition " + topic_str + ".";
  return out;
}

}  // namespace competency
