#include "competency/conditions.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "competency/cluster.hpp"

namespace competency {

namespace {

constexpr int kConditionFormatVersion = 1;

struct SamplerState {
  // Owned by fit; infer uses frozen topic counts with local doc counts.
  std::vector<std::vector<int>> topic_token;  // T x V
  std::vector<long long> topic_total;         // T
};

// p(z = t | rest) up to a constant.
inline double topic_weight(int n_dt, double alpha0_beta, int n_tw, long long n_t,
                           double eta, double eta_v) {
  return (static_cast<double>(n_dt) + alpha0_beta) *
         (static_cast<double>(n_tw) + eta) / (static_cast<double>(n_t) + eta_v);
}

void check_doc_tokens(const Document& d, int vocab) {
  for (int t : d.tokens)
    if (t < 0 || t >= vocab)
      throw ValidationError("document token id out of vocabulary range");
}

}  // namespace

std::vector<std::vector<double>> patch_descriptors(const Image& image) {
  if (image.width % kPatchGridX != 0 || image.height % kPatchGridY != 0)
    throw ValidationError("image geometry not divisible into the patch grid");
  const int pw = image.width / kPatchGridX;
  const int ph = image.height / kPatchGridY;
  std::vector<std::vector<double>> out;
  out.reserve(kPatchCount);
  for (int gy = 0; gy < kPatchGridY; ++gy) {
    for (int gx = 0; gx < kPatchGridX; ++gx) {
      double sum = 0.0, gxsum = 0.0, gysum = 0.0;
      const int x0 = gx * pw, y0 = gy * ph;
      for (int y = y0; y < y0 + ph; ++y)
        for (int x = x0; x < x0 + pw; ++x) sum += image.at(x, y);
      for (int y = y0; y < y0 + ph; ++y)
        for (int x = x0; x < x0 + pw - 1; ++x)
          gxsum += std::abs(image.at(x + 1, y) - image.at(x, y));
      for (int y = y0; y < y0 + ph - 1; ++y)
        for (int x = x0; x < x0 + pw; ++x)
          gysum += std::abs(image.at(x, y + 1) - image.at(x, y));
      out.push_back({sum / (pw * ph),
                     gxsum / ((pw - 1) * ph),
                     gysum / (pw * (ph - 1))});
    }
  }
  return out;
}

Codebook build_codebook(const Dataset& dataset, int v_vis, std::uint64_t seed) {
  if (v_vis < 1) throw ValidationError("build_codebook: v_vis must be >= 1");
  std::vector<std::vector<double>> descriptors;
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    if (dataset.split[i] != Split::Train) continue;
    auto d = patch_descriptors(dataset.samples[i].image);
    descriptors.insert(descriptors.end(), d.begin(), d.end());
  }
  if (descriptors.empty()) throw ValidationError("build_codebook: empty train split");

  Codebook cb;
  std::vector<std::vector<double>> distinct = descriptors;
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (distinct.size() < static_cast<std::size_t>(v_vis)) {
    cb.degenerate = true;
    // Pad with duplicates of the first distinct descriptor.
    cb.centroids = distinct;
    while (cb.centroids.size() < static_cast<std::size_t>(v_vis))
      cb.centroids.push_back(distinct[0]);
    return cb;
  }

  KMeansOptions opts;
  opts.restarts = 2;
  KMeansResult r = kmeans(descriptors, v_vis, seed, opts);
  cb.centroids = std::move(r.centroids);
  return cb;
}

int quantize(const Codebook& cb, const std::vector<double>& descriptor) {
  if (cb.centroids.empty()) throw ValidationError("quantize: empty codebook");
  int best = 0;
  double best_d = squared_distance(descriptor, cb.centroids[0]);
  for (std::size_t c = 1; c < cb.centroids.size(); ++c) {
    double d = squared_distance(descriptor, cb.centroids[c]);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  return best;
}

std::pair<double, double> error_terciles(const std::vector<double>& abs_errors) {
  if (abs_errors.empty()) throw ValidationError("error_terciles: empty input");
  double lo = nearest_rank_percentile(abs_errors, 100.0 / 3.0);
  double hi = nearest_rank_percentile(abs_errors, 200.0 / 3.0);
  return {lo, hi};
}

std::string Vocabulary::token_name(int token, const Codebook* cb) const {
  char buf[96];
  if (token < v_vis) {
    if (cb != nullptr && token < cb->vocab()) {
      const auto& c = cb->centroids[static_cast<std::size_t>(token)];
      std::snprintf(buf, sizeof buf, "vis%02d[i=%.2f,gx=%.2f,gy=%.2f]", token,
                    c[0], c[1], c[2]);
    } else {
      std::snprintf(buf, sizeof buf, "vis%02d", token);
    }
    return buf;
  }
  if (token < v_vis + n_strategies) {
    std::snprintf(buf, sizeof buf, "strategy=%d", token - v_vis);
    return buf;
  }
  int p = token - perf_token_base();
  const char* names[3] = {"perf=lo", "perf=md", "perf=hi"};
  if (p >= 0 && p < 3) return names[p];
  throw ValidationError("token id out of vocabulary range");
}

Document tokenize(const Sample& sample, const Codebook& codebook,
                  const Vocabulary& vocab, std::optional<CompetencyLabel> competency) {
  Document doc;
  auto descs = patch_descriptors(sample.image);
  doc.tokens.reserve(descs.size() + 2);
  for (const auto& d : descs) doc.tokens.push_back(quantize(codebook, d));
  if (competency.has_value()) {
    if (competency->strategy_id < 0 || competency->strategy_id >= vocab.n_strategies)
      throw ValidationError("tokenize: strategy id outside vocabulary");
    doc.tokens.push_back(vocab.strategy_token(competency->strategy_id));
    doc.tokens.push_back(vocab.perf_token(competency->abs_error_m));
    doc.competency_tokens_present = true;
  }
  return doc;
}

long long ConditionModel::total_tokens() const {
  long long n = 0;
  for (long long t : topic_total) n += t;
  return n;
}

std::vector<double> ConditionModel::phi_row(int topic) const {
  const int v = config.vocab_size;
  std::vector<double> phi(static_cast<std::size_t>(v));
  const double denom =
      static_cast<double>(topic_total[static_cast<std::size_t>(topic)]) + config.eta * v;
  for (int w = 0; w < v; ++w)
    phi[static_cast<std::size_t>(w)] =
        (topic_token[static_cast<std::size_t>(topic)][static_cast<std::size_t>(w)] +
         config.eta) /
        denom;
  return phi;
}

ConditionModel fit_hdp(const std::vector<Document>& corpus, const HdpConfig& config) {
  if (corpus.empty()) throw ValidationError("fit_hdp: empty corpus");
  if (config.topics < 2) throw ConfigError("fit_hdp: truncation must be >= 2");
  if (config.vocab_size < 1) throw ConfigError("fit_hdp: vocab_size not set");
  for (const auto& d : corpus) check_doc_tokens(d, config.vocab_size);

  const int T = config.topics;
  const int V = config.vocab_size;
  const double eta_v = config.eta * V;

  ConditionModel m;
  m.config = config;
  m.beta.assign(static_cast<std::size_t>(T), 1.0 / T);
  m.topic_token.assign(static_cast<std::size_t>(T), std::vector<int>(static_cast<std::size_t>(V), 0));
  m.topic_total.assign(static_cast<std::size_t>(T), 0);
  m.assignments.resize(corpus.size());

  std::vector<std::vector<int>> doc_topic(corpus.size(),
                                          std::vector<int>(static_cast<std::size_t>(T), 0));

  long long corpus_tokens = 0;
  for (const auto& d : corpus) corpus_tokens += static_cast<long long>(d.tokens.size());

  Rng rng(config.seed);
  std::vector<double> weights(static_cast<std::size_t>(T));

  // Initial assignment by sequential draws from the same conditional.
  for (std::size_t di = 0; di < corpus.size(); ++di) {
    const auto& tokens = corpus[di].tokens;
    m.assignments[di].resize(tokens.size());
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      const int w = tokens[i];
      for (int t = 0; t < T; ++t)
        weights[static_cast<std::size_t>(t)] = topic_weight(
            doc_topic[di][static_cast<std::size_t>(t)],
            config.alpha0 * m.beta[static_cast<std::size_t>(t)],
            m.topic_token[static_cast<std::size_t>(t)][static_cast<std::size_t>(w)],
            m.topic_total[static_cast<std::size_t>(t)], config.eta, eta_v);
      int z = static_cast<int>(rng.categorical(weights));
      m.assignments[di][i] = z;
      doc_topic[di][static_cast<std::size_t>(z)]++;
      m.topic_token[static_cast<std::size_t>(z)][static_cast<std::size_t>(w)]++;
      m.topic_total[static_cast<std::size_t>(z)]++;
    }
  }

  const bool track = config.track_marginals;
  std::vector<std::vector<double>> marginal;
  std::vector<std::vector<double>> co;
  std::size_t flat_tokens = 0;
  if (track) {
    flat_tokens = static_cast<std::size_t>(corpus_tokens);
    marginal.assign(flat_tokens, std::vector<double>(static_cast<std::size_t>(T), 0.0));
    if (flat_tokens <= 64)
      co.assign(flat_tokens, std::vector<double>(flat_tokens, 0.0));
  }
  long long tracked_sweeps = 0;

  std::vector<double> dir_alpha(static_cast<std::size_t>(T));
  for (int sweep = 0; sweep < config.sweeps; ++sweep) {
    for (std::size_t di = 0; di < corpus.size(); ++di) {
      const auto& tokens = corpus[di].tokens;
      for (std::size_t i = 0; i < tokens.size(); ++i) {
        const int w = tokens[i];
        const int old = m.assignments[di][i];
        doc_topic[di][static_cast<std::size_t>(old)]--;
        m.topic_token[static_cast<std::size_t>(old)][static_cast<std::size_t>(w)]--;
        m.topic_total[static_cast<std::size_t>(old)]--;
        for (int t = 0; t < T; ++t)
          weights[static_cast<std::size_t>(t)] = topic_weight(
              doc_topic[di][static_cast<std::size_t>(t)],
              config.alpha0 * m.beta[static_cast<std::size_t>(t)],
              m.topic_token[static_cast<std::size_t>(t)][static_cast<std::size_t>(w)],
              m.topic_total[static_cast<std::size_t>(t)], config.eta, eta_v);
        int z = static_cast<int>(rng.categorical(weights));
        m.assignments[di][i] = z;
        doc_topic[di][static_cast<std::size_t>(z)]++;
        m.topic_token[static_cast<std::size_t>(z)][static_cast<std::size_t>(w)]++;
        m.topic_total[static_cast<std::size_t>(z)]++;
      }
    }

    // Truncated stick-breaking surrogate for the top level.
    if (config.resample_beta) {
      for (int t = 0; t < T; ++t)
        dir_alpha[static_cast<std::size_t>(t)] =
            static_cast<double>(m.topic_total[static_cast<std::size_t>(t)]) +
            config.gamma / T;
      m.beta = rng.dirichlet(dir_alpha);
    }

    long long total = 0;
    for (long long t : m.topic_total) total += t;
    if (total != corpus_tokens)
      throw NumericError("token count not conserved after sweep " + std::to_string(sweep));

    if (track && sweep >= config.burn_in) {
      ++tracked_sweeps;
      std::size_t flat = 0;
      for (std::size_t di = 0; di < corpus.size(); ++di)
        for (std::size_t i = 0; i < corpus[di].tokens.size(); ++i, ++flat)
          marginal[flat][static_cast<std::size_t>(m.assignments[di][i])] += 1.0;
      if (!co.empty()) {
        std::vector<int> zs;
        zs.reserve(flat_tokens);
        for (const auto& za : m.assignments)
          zs.insert(zs.end(), za.begin(), za.end());
        for (std::size_t a = 0; a < zs.size(); ++a)
          for (std::size_t b = 0; b < zs.size(); ++b)
            if (zs[a] == zs[b]) co[a][b] += 1.0;
      }
    }
  }

  if (track && tracked_sweeps > 0) {
    for (auto& row : marginal)
      for (double& v : row) v /= static_cast<double>(tracked_sweeps);
    for (auto& row : co)
      for (double& v : row) v /= static_cast<double>(tracked_sweeps);
    m.token_topic_marginal = std::move(marginal);
    m.coassignment = std::move(co);
  }

  m.active.assign(static_cast<std::size_t>(T), false);
  m.active_topics = 0;
  for (int t = 0; t < T; ++t)
    if (m.topic_total[static_cast<std::size_t>(t)] > 0) {
      m.active[static_cast<std::size_t>(t)] = true;
      ++m.active_topics;
    }

  m.doc_theta.resize(corpus.size());
  for (std::size_t di = 0; di < corpus.size(); ++di) {
    const double nd = static_cast<double>(corpus[di].tokens.size());
    std::vector<double> theta(static_cast<std::size_t>(T));
    for (int t = 0; t < T; ++t)
      theta[static_cast<std::size_t>(t)] =
          (doc_topic[di][static_cast<std::size_t>(t)] +
           config.alpha0 * m.beta[static_cast<std::size_t>(t)]) /
          (nd + config.alpha0);
    m.doc_theta[di] = std::move(theta);
  }

  if (config.compute_novelty_threshold && config.n_visual > 0) {
    std::vector<double> scores;
    scores.reserve(corpus.size());
    for (const auto& d : corpus) {
      Document view;
      view.doc_id = d.doc_id;
      for (int tok : d.tokens)
        if (tok < config.n_visual) view.tokens.push_back(tok);
      if (view.tokens.empty()) continue;
      NoveltyScore ns = novelty(m, view);
      scores.push_back(ns.score);
    }
    if (!scores.empty())
      m.novelty_threshold = nearest_rank_percentile(scores, 1.0);
  }
  return m;
}

ConditionVector infer_conditions(const ConditionModel& model, const Document& doc,
                                 int fold_in_sweeps, std::uint64_t seed) {
  if (doc.competency_tokens_present)
    throw ValidationError("infer_conditions: competency tokens present at inference");
  const int n_visual = model.config.n_visual > 0 ? model.config.n_visual
                                                 : model.config.vocab_size;
  for (int t : doc.tokens)
    if (t < 0 || t >= n_visual)
      throw ValidationError("infer_conditions: token outside the inference vocabulary");
  if (doc.tokens.empty()) throw ValidationError("infer_conditions: empty document");
  if (fold_in_sweeps < 1) throw ValidationError("infer_conditions: sweeps must be >= 1");

  const int T = model.config.topics;
  const int V = model.config.vocab_size;
  const double eta_v = model.config.eta * V;
  const double alpha0 = model.config.alpha0;
  const double nd = static_cast<double>(doc.tokens.size());

  Rng rng(seed);
  std::vector<int> local(static_cast<std::size_t>(T), 0);
  std::vector<int> z(doc.tokens.size(), 0);
  std::vector<double> weights(static_cast<std::size_t>(T));

  auto weight_for = [&](int t, int w) {
    return topic_weight(
        local[static_cast<std::size_t>(t)],
        alpha0 * model.beta[static_cast<std::size_t>(t)],
        model.topic_token[static_cast<std::size_t>(t)][static_cast<std::size_t>(w)],
        model.topic_total[static_cast<std::size_t>(t)], model.config.eta, eta_v);
  };

  for (std::size_t i = 0; i < doc.tokens.size(); ++i) {
    for (int t = 0; t < T; ++t)
      weights[static_cast<std::size_t>(t)] = weight_for(t, doc.tokens[i]);
    z[i] = static_cast<int>(rng.categorical(weights));
    local[static_cast<std::size_t>(z[i])]++;
  }

  const int avg_from = std::max(0, fold_in_sweeps - std::max(1, fold_in_sweeps / 2));
  std::vector<double> theta_acc(static_cast<std::size_t>(T), 0.0);
  int averaged = 0;
  for (int sweep = 0; sweep < fold_in_sweeps; ++sweep) {
    for (std::size_t i = 0; i < doc.tokens.size(); ++i) {
      local[static_cast<std::size_t>(z[i])]--;
      for (int t = 0; t < T; ++t)
        weights[static_cast<std::size_t>(t)] = weight_for(t, doc.tokens[i]);
      z[i] = static_cast<int>(rng.categorical(weights));
      local[static_cast<std::size_t>(z[i])]++;
    }
    if (sweep >= avg_from) {
      for (int t = 0; t < T; ++t)
        theta_acc[static_cast<std::size_t>(t)] +=
            (local[static_cast<std::size_t>(t)] +
             alpha0 * model.beta[static_cast<std::size_t>(t)]) /
            (nd + alpha0);
      ++averaged;
    }
  }

  ConditionVector cv;
  cv.theta.resize(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t)
    cv.theta[static_cast<std::size_t>(t)] =
        theta_acc[static_cast<std::size_t>(t)] / static_cast<double>(averaged);
  return cv;
}

NoveltyScore novelty(const ConditionModel& model, const Document& doc,
                     std::uint64_t seed) {
  ConditionVector cv = infer_conditions(model, doc, 50, seed);
  const int T = model.config.topics;
  const int V = model.config.vocab_size;
  double acc = 0.0;
  for (int w : doc.tokens) {
    double p = 0.0;
    for (int t = 0; t < T; ++t) {
      const double phi =
          (model.topic_token[static_cast<std::size_t>(t)][static_cast<std::size_t>(w)] +
           model.config.eta) /
          (static_cast<double>(model.topic_total[static_cast<std::size_t>(t)]) +
           model.config.eta * V);
      p += cv.theta[static_cast<std::size_t>(t)] * phi;
    }
    acc += std::log(p);
  }
  NoveltyScore ns;
  ns.score = acc / static_cast<double>(doc.tokens.size());
  ns.threshold = model.novelty_threshold;
  ns.flag = ns.score < ns.threshold;
  return ns;
}

std::vector<TopicToken> describe_topic(const ConditionModel& model, int topic_id,
                                       int top_n, const Codebook* codebook) {
  if (topic_id < 0 || topic_id >= model.config.topics)
    throw ValidationError("describe_topic: topic id out of range");
  if (!model.active[static_cast<std::size_t>(topic_id)])
    throw ValidationError("describe_topic: topic is inactive");

  std::vector<double> phi = model.phi_row(topic_id);
  std::vector<int> order(phi.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (phi[static_cast<std::size_t>(a)] != phi[static_cast<std::size_t>(b)])
      return phi[static_cast<std::size_t>(a)] > phi[static_cast<std::size_t>(b)];
    return a < b;
  });

  Vocabulary vocab;  // only used for names when token_names is absent
  vocab.v_vis = model.config.n_visual;
  vocab.n_strategies = model.config.vocab_size - model.config.n_visual - 3;
  const bool have_names =
      static_cast<int>(model.config.token_names.size()) == model.config.vocab_size;
  const bool vocab_naming = model.config.n_visual > 0 && vocab.n_strategies >= 0;

  std::vector<TopicToken> out;
  const int n = std::min<int>(top_n, static_cast<int>(phi.size()));
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    TopicToken tt;
    tt.token = order[static_cast<std::size_t>(i)];
    tt.weight = phi[static_cast<std::size_t>(tt.token)];
    if (have_names)
      tt.name = model.config.token_names[static_cast<std::size_t>(tt.token)];
    else if (vocab_naming)
      tt.name = vocab.token_name(tt.token, codebook);
    else
      tt.name = "token" + std::to_string(tt.token);
    out.push_back(std::move(tt));
  }
  return out;
}

void save_condition_model(const ConditionModel& m, const Codebook& cb,
                          const Vocabulary& vocab, const std::string& path) {
  nlohmann::json j;
  j["format_version"] = kConditionFormatVersion;
  j["config"] = {{"topics", m.config.topics},     {"gamma", m.config.gamma},
                 {"alpha0", m.config.alpha0},     {"eta", m.config.eta},
                 {"sweeps", m.config.sweeps},     {"burn_in", m.config.burn_in},
                 {"seed", m.config.seed},         {"vocab_size", m.config.vocab_size},
                 {"n_visual", m.config.n_visual}, {"token_names", m.config.token_names}};
  j["beta"] = m.beta;
  j["topic_token"] = m.topic_token;
  j["topic_total"] = m.topic_total;
  j["assignments"] = m.assignments;
  j["doc_theta"] = m.doc_theta;
  j["active"] = m.active;
  j["active_topics"] = m.active_topics;
  j["novelty_threshold"] = m.novelty_threshold;
  j["codebook"] = {{"patch_w", cb.patch_w},
                   {"patch_h", cb.patch_h},
                   {"centroids", cb.centroids},
                   {"degenerate", cb.degenerate}};
  j["vocab"] = {{"v_vis", vocab.v_vis},
                {"n_strategies", vocab.n_strategies},
                {"tercile_lo", vocab.tercile_lo},
                {"tercile_hi", vocab.tercile_hi}};
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open for write: " + path);
  f << j.dump(2) << "\n";
}

LoadedConditionModel load_condition_model(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open condition model: " + path);
  nlohmann::json j = nlohmann::json::parse(f);
  int version = j.value("format_version", -1);
  if (version != kConditionFormatVersion)
    throw IoError("condition model version mismatch: file has " + std::to_string(version) +
                  ", expected " + std::to_string(kConditionFormatVersion));
  LoadedConditionModel out;
  ConditionModel& m = out.model;
  const auto& jc = j.at("config");
  m.config.topics = jc.at("topics");
  m.config.gamma = jc.at("gamma");
  m.config.alpha0 = jc.at("alpha0");
  m.config.eta = jc.at("eta");
  m.config.sweeps = jc.at("sweeps");
  m.config.burn_in = jc.at("burn_in");
  m.config.seed = jc.at("seed");
  m.config.vocab_size = jc.at("vocab_size");
  m.config.n_visual = jc.at("n_visual");
  m.config.token_names = jc.at("token_names").get<std::vector<std::string>>();
  m.beta = j.at("beta").get<std::vector<double>>();
  m.topic_token = j.at("topic_token").get<std::vector<std::vector<int>>>();
  m.topic_total = j.at("topic_total").get<std::vector<long long>>();
  m.assignments = j.at("assignments").get<std::vector<std::vector<int>>>();
  m.doc_theta = j.at("doc_theta").get<std::vector<std::vector<double>>>();
  m.active = j.at("active").get<std::vector<bool>>();
  m.active_topics = j.at("active_topics");
  m.novelty_threshold = j.at("novelty_threshold");
  out.codebook.patch_w = j.at("codebook").at("patch_w");
  out.codebook.patch_h = j.at("codebook").at("patch_h");
  out.codebook.centroids = j.at("codebook").at("centroids").get<std::vector<std::vector<double>>>();
  out.codebook.degenerate = j.at("codebook").at("degenerate");
  out.vocab.v_vis = j.at("vocab").at("v_vis");
  out.vocab.n_strategies = j.at("vocab").at("n_strategies");
  out.vocab.tercile_lo = j.at("vocab").at("tercile_lo");
  out.vocab.tercile_hi = j.at("vocab").at("tercile_hi");
  return out;
}

}  // namespace competency
