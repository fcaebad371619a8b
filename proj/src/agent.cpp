#include "competency/agent.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <unordered_set>

#include <json.hpp>

namespace competency {

namespace {

constexpr int kAgentFormatVersion = 1;

struct Cache {
  std::vector<double> conv1_pre, conv1_act;
  std::vector<double> pool1;
  std::vector<int> pool1_arg;
  std::vector<double> conv2_pre, conv2_act;
  std::vector<double> pool2;
  std::vector<int> pool2_arg;
  std::vector<double> dense_pre, dense_act;
  double estimate = 0.0;
};

void conv_forward(const std::vector<double>& in, int ic, int ih, int iw,
                  const std::vector<double>& w, const std::vector<double>& b,
                  int oc, int k, std::vector<double>& pre) {
  const int oh = ih - k + 1;
  const int ow = iw - k + 1;
  pre.assign(static_cast<std::size_t>(oc) * oh * ow, 0.0);
  for (int o = 0; o < oc; ++o) {
    double* out = pre.data() + static_cast<std::size_t>(o) * oh * ow;
    for (int i = 0; i < static_cast<int>(static_cast<std::size_t>(oh) * ow); ++i) out[i] = b[o];
    for (int c = 0; c < ic; ++c) {
      const double* wp = w.data() + ((static_cast<std::size_t>(o) * ic + c) * k) * k;
      const double* inp = in.data() + static_cast<std::size_t>(c) * ih * iw;
      for (int oy = 0; oy < oh; ++oy) {
        for (int ky = 0; ky < k; ++ky) {
          const double* row = inp + static_cast<std::size_t>(oy + ky) * iw;
          const double* wr = wp + static_cast<std::size_t>(ky) * k;
          double* orow = out + static_cast<std::size_t>(oy) * ow;
          for (int ox = 0; ox < ow; ++ox) {
            double acc = 0.0;
            for (int kx = 0; kx < k; ++kx) acc += wr[kx] * row[ox + kx];
            orow[ox] += acc;
          }
        }
      }
    }
  }
}

void relu(const std::vector<double>& pre, std::vector<double>& act) {
  act.resize(pre.size());
  for (std::size_t i = 0; i < pre.size(); ++i) act[i] = pre[i] > 0.0 ? pre[i] : 0.0;
}

void maxpool_forward(const std::vector<double>& in, int c, int ih, int iw,
                     std::vector<double>& out, std::vector<int>& arg) {
  const int oh = ih / 2;
  const int ow = iw / 2;
  out.assign(static_cast<std::size_t>(c) * oh * ow, 0.0);
  arg.assign(out.size(), 0);
  for (int ch = 0; ch < c; ++ch) {
    const double* inp = in.data() + static_cast<std::size_t>(ch) * ih * iw;
    double* op = out.data() + static_cast<std::size_t>(ch) * oh * ow;
    int* ap = arg.data() + static_cast<std::size_t>(ch) * oh * ow;
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        int base = (2 * oy) * iw + 2 * ox;
        int best = base;
        double bv = inp[base];
        const int cands[3] = {base + 1, base + iw, base + iw + 1};
        for (int cand : cands) {
          if (inp[cand] > bv) { bv = inp[cand]; best = cand; }
        }
        op[oy * ow + ox] = bv;
        ap[oy * ow + ox] = best + ch * ih * iw;
      }
    }
  }
}

void run_forward(const Agent& a, const AgentDims& d, const Image& img, Cache& c) {
  conv_forward(img.pixels, 1, a.config.input_height, a.config.input_width,
               a.conv1_w, a.conv1_b, d.c1, a.config.kernel, c.conv1_pre);
  relu(c.conv1_pre, c.conv1_act);
  maxpool_forward(c.conv1_act, d.c1, d.h1, d.w1, c.pool1, c.pool1_arg);
  conv_forward(c.pool1, d.c1, d.p1h, d.p1w, a.conv2_w, a.conv2_b, d.c2,
               a.config.kernel, c.conv2_pre);
  relu(c.conv2_pre, c.conv2_act);
  maxpool_forward(c.conv2_act, d.c2, d.h2, d.w2, c.pool2, c.pool2_arg);

  c.dense_pre.assign(static_cast<std::size_t>(d.units), 0.0);
  for (int u = 0; u < d.units; ++u) {
    const double* wp = a.dense_w.data() + static_cast<std::size_t>(u) * d.flat;
    double acc = a.dense_b[static_cast<std::size_t>(u)];
    for (int i = 0; i < d.flat; ++i) acc += wp[i] * c.pool2[static_cast<std::size_t>(i)];
    c.dense_pre[static_cast<std::size_t>(u)] = acc;
  }
  relu(c.dense_pre, c.dense_act);
  double est = a.out_b[0];
  for (int u = 0; u < d.units; ++u)
    est += a.out_w[static_cast<std::size_t>(u)] * c.dense_act[static_cast<std::size_t>(u)];
  c.estimate = est;
}

struct Grads {
  std::vector<double> conv1_w, conv1_b, conv2_w, conv2_b, dense_w, dense_b, out_w, out_b;

  explicit Grads(const Agent& a) { resize_like(a); }
  void resize_like(const Agent& a) {
    conv1_w.assign(a.conv1_w.size(), 0.0);
    conv1_b.assign(a.conv1_b.size(), 0.0);
    conv2_w.assign(a.conv2_w.size(), 0.0);
    conv2_b.assign(a.conv2_b.size(), 0.0);
    dense_w.assign(a.dense_w.size(), 0.0);
    dense_b.assign(a.dense_b.size(), 0.0);
    out_w.assign(a.out_w.size(), 0.0);
    out_b.assign(a.out_b.size(), 0.0);
  }
  void zero() {
    auto z = [](std::vector<double>& v) { std::fill(v.begin(), v.end(), 0.0); };
    z(conv1_w); z(conv1_b); z(conv2_w); z(conv2_b);
    z(dense_w); z(dense_b); z(out_w); z(out_b);
  }
};

void conv_backward(const std::vector<double>& in, int ic, int ih, int iw,
                   const std::vector<double>& w, int oc, int k,
                   const std::vector<double>& g_pre, std::vector<double>& g_w,
                   std::vector<double>& g_b, std::vector<double>* g_in) {
  const int oh = ih - k + 1;
  const int ow = iw - k + 1;
  if (g_in) g_in->assign(static_cast<std::size_t>(ic) * ih * iw, 0.0);
  for (int o = 0; o < oc; ++o) {
    const double* gp = g_pre.data() + static_cast<std::size_t>(o) * oh * ow;
    double gb = 0.0;
    for (int i = 0; i < oh * ow; ++i) gb += gp[i];
    g_b[static_cast<std::size_t>(o)] += gb;
    for (int c = 0; c < ic; ++c) {
      const double* inp = in.data() + static_cast<std::size_t>(c) * ih * iw;
      double* gw = g_w.data() + ((static_cast<std::size_t>(o) * ic + c) * k) * k;
      const double* wp = w.data() + ((static_cast<std::size_t>(o) * ic + c) * k) * k;
      double* gi = g_in ? g_in->data() + static_cast<std::size_t>(c) * ih * iw : nullptr;
      for (int oy = 0; oy < oh; ++oy) {
        for (int ky = 0; ky < k; ++ky) {
          const double* row = inp + static_cast<std::size_t>(oy + ky) * iw;
          const double* grow = gp + static_cast<std::size_t>(oy) * ow;
          double* gwr = gw + static_cast<std::size_t>(ky) * k;
          for (int kx = 0; kx < k; ++kx) {
            double acc = 0.0;
            for (int ox = 0; ox < ow; ++ox) acc += grow[ox] * row[ox + kx];
            gwr[kx] += acc;
          }
          if (gi) {
            double* girow = gi + static_cast<std::size_t>(oy + ky) * iw;
            const double* wr = wp + static_cast<std::size_t>(ky) * k;
            for (int ox = 0; ox < ow; ++ox)
              for (int kx = 0; kx < k; ++kx) girow[ox + kx] += grow[ox] * wr[kx];
          }
        }
      }
    }
  }
}

// dL/d(estimate) in, gradients accumulated into g.
void run_backward(const Agent& a, const AgentDims& d, const Image& img,
                  const Cache& c, double g_est, Grads& g) {
  std::vector<double> g_dense_act(static_cast<std::size_t>(d.units));
  for (int u = 0; u < d.units; ++u) {
    g.out_w[static_cast<std::size_t>(u)] += g_est * c.dense_act[static_cast<std::size_t>(u)];
    g_dense_act[static_cast<std::size_t>(u)] = g_est * a.out_w[static_cast<std::size_t>(u)];
  }
  g.out_b[0] += g_est;

  std::vector<double> g_pool2(static_cast<std::size_t>(d.flat), 0.0);
  for (int u = 0; u < d.units; ++u) {
    if (c.dense_pre[static_cast<std::size_t>(u)] <= 0.0) continue;
    double gu = g_dense_act[static_cast<std::size_t>(u)];
    g.dense_b[static_cast<std::size_t>(u)] += gu;
    double* gw = g.dense_w.data() + static_cast<std::size_t>(u) * d.flat;
    const double* wp = a.dense_w.data() + static_cast<std::size_t>(u) * d.flat;
    for (int i = 0; i < d.flat; ++i) {
      gw[i] += gu * c.pool2[static_cast<std::size_t>(i)];
      g_pool2[static_cast<std::size_t>(i)] += gu * wp[i];
    }
  }

  std::vector<double> g_conv2_act(c.conv2_act.size(), 0.0);
  for (std::size_t i = 0; i < g_pool2.size(); ++i)
    g_conv2_act[static_cast<std::size_t>(c.pool2_arg[i])] += g_pool2[i];
  std::vector<double> g_conv2_pre(c.conv2_pre.size());
  for (std::size_t i = 0; i < g_conv2_pre.size(); ++i)
    g_conv2_pre[i] = c.conv2_pre[i] > 0.0 ? g_conv2_act[i] : 0.0;

  std::vector<double> g_pool1;
  conv_backward(c.pool1, d.c1, d.p1h, d.p1w, a.conv2_w, d.c2, a.config.kernel,
                g_conv2_pre, g.conv2_w, g.conv2_b, &g_pool1);

  std::vector<double> g_conv1_act(c.conv1_act.size(), 0.0);
  for (std::size_t i = 0; i < g_pool1.size(); ++i)
    g_conv1_act[static_cast<std::size_t>(c.pool1_arg[i])] += g_pool1[i];
  std::vector<double> g_conv1_pre(c.conv1_pre.size());
  for (std::size_t i = 0; i < g_conv1_pre.size(); ++i)
    g_conv1_pre[i] = c.conv1_pre[i] > 0.0 ? g_conv1_act[i] : 0.0;

  conv_backward(img.pixels, 1, a.config.input_height, a.config.input_width,
                a.conv1_w, d.c1, a.config.kernel, g_conv1_pre, g.conv1_w,
                g.conv1_b, nullptr);
}

std::vector<std::vector<double>*> param_arrays(Agent& a) {
  return {&a.conv1_w, &a.conv1_b, &a.conv2_w, &a.conv2_b,
          &a.dense_w, &a.dense_b, &a.out_w, &a.out_b};
}
std::vector<std::vector<double>*> grad_arrays(Grads& g) {
  return {&g.conv1_w, &g.conv1_b, &g.conv2_w, &g.conv2_b,
          &g.dense_w, &g.dense_b, &g.out_w, &g.out_b};
}

double& param_at(Agent& a, std::size_t idx) {
  for (auto* arr : param_arrays(a)) {
    if (idx < arr->size()) return (*arr)[idx];
    idx -= arr->size();
  }
  throw ValidationError("parameter index out of range");
}

double grad_at(Grads& g, std::size_t idx) {
  for (auto* arr : grad_arrays(g)) {
    if (idx < arr->size()) return (*arr)[idx];
    idx -= arr->size();
  }
  throw ValidationError("gradient index out of range");
}

void check_image(const Agent& a, const Image& img) {
  if (img.width != a.config.input_width || img.height != a.config.input_height)
    throw ValidationError("image dimensions do not match agent config");
}

bool all_finite(const std::vector<double>& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

ActivationTrace extract_trace(const AgentConfig& cfg, const AgentDims& d, const Cache& c) {
  ActivationTrace t;
  t.layout = trace_layout(cfg);
  t.values.resize(static_cast<std::size_t>(t.layout.length));
  for (int ch = 0; ch < d.c1; ++ch) {
    double s = 0.0;
    const double* p = c.conv1_act.data() + static_cast<std::size_t>(ch) * d.h1 * d.w1;
    for (int i = 0; i < d.h1 * d.w1; ++i) s += p[i];
    t.values[static_cast<std::size_t>(t.layout.conv1_offset + ch)] =
        s / static_cast<double>(d.h1 * d.w1);
  }
  for (int ch = 0; ch < d.c2; ++ch) {
    double s = 0.0;
    const double* p = c.conv2_act.data() + static_cast<std::size_t>(ch) * d.h2 * d.w2;
    for (int i = 0; i < d.h2 * d.w2; ++i) s += p[i];
    t.values[static_cast<std::size_t>(t.layout.conv2_offset + ch)] =
        s / static_cast<double>(d.h2 * d.w2);
  }
  for (int u = 0; u < d.units; ++u)
    t.values[static_cast<std::size_t>(t.layout.dense_offset + u)] =
        c.dense_act[static_cast<std::size_t>(u)];
  return t;
}

}  // namespace

AgentDims agent_dims(const AgentConfig& cfg) {
  if (cfg.conv1_filters < 1 || cfg.conv2_filters < 1 || cfg.dense_units < 1 ||
      cfg.kernel < 1 || cfg.input_width < 1 || cfg.input_height < 1)
    throw ConfigError("agent config fields must be positive");
  AgentDims d;
  d.c1 = cfg.conv1_filters;
  d.h1 = cfg.input_height - cfg.kernel + 1;
  d.w1 = cfg.input_width - cfg.kernel + 1;
  d.p1h = d.h1 / 2;
  d.p1w = d.w1 / 2;
  d.c2 = cfg.conv2_filters;
  d.h2 = d.p1h - cfg.kernel + 1;
  d.w2 = d.p1w - cfg.kernel + 1;
  d.p2h = d.h2 / 2;
  d.p2w = d.w2 / 2;
  d.flat = d.c2 * d.p2h * d.p2w;
  d.units = cfg.dense_units;
  if (d.h1 < 1 || d.w1 < 1 || d.p1h < 1 || d.p1w < 1 || d.h2 < 1 || d.w2 < 1 ||
      d.p2h < 1 || d.p2w < 1)
    throw ConfigError("agent layer shapes collapse below 1x1");
  return d;
}

TraceLayout trace_layout(const AgentConfig& cfg) {
  TraceLayout t;
  t.conv1_offset = 0;
  t.conv2_offset = cfg.conv1_filters;
  t.dense_offset = cfg.conv1_filters + cfg.conv2_filters;
  t.length = cfg.conv1_filters + cfg.conv2_filters + cfg.dense_units;
  return t;
}

std::size_t Agent::parameter_count() const {
  return conv1_w.size() + conv1_b.size() + conv2_w.size() + conv2_b.size() +
         dense_w.size() + dense_b.size() + out_w.size() + out_b.size();
}

Agent init_agent(const AgentConfig& cfg) {
  AgentDims d = agent_dims(cfg);
  Agent a;
  a.config = cfg;
  const int k = cfg.kernel;
  a.conv1_w.resize(static_cast<std::size_t>(d.c1) * 1 * k * k);
  a.conv1_b.assign(static_cast<std::size_t>(d.c1), 0.0);
  a.conv2_w.resize(static_cast<std::size_t>(d.c2) * d.c1 * k * k);
  a.conv2_b.assign(static_cast<std::size_t>(d.c2), 0.0);
  a.dense_w.resize(static_cast<std::size_t>(d.units) * d.flat);
  a.dense_b.assign(static_cast<std::size_t>(d.units), 0.0);
  a.out_w.resize(static_cast<std::size_t>(d.units));
  a.out_b.assign(1, 0.0);

  Rng rng(cfg.init_seed);
  const double s = cfg.init_scale;
  for (auto* arr : {&a.conv1_w, &a.conv2_w, &a.dense_w, &a.out_w})
    for (double& w : *arr) w = rng.uniform(-s, s);
  return a;
}

ForwardResult forward(const Agent& agent, const Image& image) {
  check_image(agent, image);
  AgentDims d = agent_dims(agent.config);
  Cache c;
  run_forward(agent, d, image, c);
  ForwardResult r;
  r.estimate_m = c.estimate;
  r.trace = extract_trace(agent.config, d, c);
  return r;
}

double mse_on_split(const Agent& agent, const Dataset& data, Split split) {
  AgentDims d = agent_dims(agent.config);
  Cache c;
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    if (data.split[i] != split) continue;
    check_image(agent, data.samples[i].image);
    run_forward(agent, d, data.samples[i].image, c);
    double e = c.estimate - data.samples[i].true_distance_m;
    sum += e * e;
    ++n;
  }
  if (n == 0) throw ValidationError("mse_on_split: empty split");
  return sum / static_cast<double>(n);
}

std::pair<Agent, TrainReport> train(const Agent& agent, const Dataset& data,
                                    const TrainHyper& hp) {
  if (data.samples.empty()) throw ValidationError("train: empty dataset");
  std::vector<std::size_t> train_idx;
  for (std::size_t i = 0; i < data.samples.size(); ++i)
    if (data.split[i] == Split::Train) train_idx.push_back(i);
  if (train_idx.empty()) throw ValidationError("train: empty train split");
  if (hp.batch < 1) throw ValidationError("train: batch must be >= 1");

  Agent a = agent;
  AgentDims d = agent_dims(a.config);
  Grads g(a);
  Grads vel(a);
  Cache cache;
  TrainReport report;
  report.hp = hp;

  if (hp.warm_start_bias && hp.epochs > 0) {
    double mean_target = 0.0;
    for (std::size_t i : train_idx) mean_target += data.samples[i].true_distance_m;
    a.out_b[0] = mean_target / static_cast<double>(train_idx.size());
  }

  for (int epoch = 0; epoch < hp.epochs; ++epoch) {
    std::vector<std::size_t> order = train_idx;
    Rng rng(mix_seed(hp.shuffle_seed, static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);

    double epoch_sq = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(hp.batch)) {
      std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(hp.batch));
      const double bn = static_cast<double>(end - start);
      g.zero();
      double batch_sq = 0.0;
      for (std::size_t j = start; j < end; ++j) {
        const Sample& s = data.samples[order[j]];
        check_image(a, s.image);
        run_forward(a, d, s.image, cache);
        double err = cache.estimate - s.true_distance_m;
        batch_sq += err * err;
        run_backward(a, d, s.image, cache, 2.0 * err / bn, g);
      }
      if (!std::isfinite(batch_sq))
        throw NumericError("non-finite training loss at epoch " + std::to_string(epoch));
      epoch_sq += batch_sq;

      if (hp.clip_norm > 0.0) {
        double norm_sq = 0.0;
        for (auto* arr : grad_arrays(g))
          for (double v : *arr) norm_sq += v * v;
        if (norm_sq > hp.clip_norm * hp.clip_norm) {
          const double scale = hp.clip_norm / std::sqrt(norm_sq);
          for (auto* arr : grad_arrays(g))
            for (double& v : *arr) v *= scale;
        }
      }

      auto pa = param_arrays(a);
      auto ga = grad_arrays(g);
      auto va = grad_arrays(vel);
      for (std::size_t arr = 0; arr < pa.size(); ++arr) {
        std::vector<double>& w = *pa[arr];
        std::vector<double>& gr = *ga[arr];
        std::vector<double>& v = *va[arr];
        for (std::size_t i = 0; i < w.size(); ++i) {
          v[i] = hp.momentum * v[i] - hp.lr * gr[i];
          w[i] += v[i];
        }
      }
    }
    report.epoch_train_mse.push_back(epoch_sq / static_cast<double>(order.size()));

    for (auto* arr : param_arrays(a))
      if (!all_finite(*arr))
        throw NumericError("non-finite weights at epoch " + std::to_string(epoch));
  }

  if (data.count(Split::Assess) > 0)
    report.final_assess_mse = mse_on_split(a, data, Split::Assess);
  return {std::move(a), std::move(report)};
}

double gradient_check(const Agent& agent, const Image& image, double target_m,
                      std::uint64_t seed, int subset) {
  check_image(agent, image);
  Agent a = agent;
  AgentDims d = agent_dims(a.config);
  Cache c;

  // Nudge biases until every rectifier pre-activation clears the margin, so
  // central differences never cross a kink (the loss is piecewise-polynomial
  // in any single weight).
  const double margin = 2e-3;
  const double bump = 5.1e-3;
  for (int iter = 0; iter < 100; ++iter) {
    run_forward(a, d, image, c);
    bool dirty = false;
    for (int ch = 0; ch < d.c1; ++ch) {
      const double* p = c.conv1_pre.data() + static_cast<std::size_t>(ch) * d.h1 * d.w1;
      for (int i = 0; i < d.h1 * d.w1; ++i)
        if (std::abs(p[i]) < margin) { a.conv1_b[static_cast<std::size_t>(ch)] += bump; dirty = true; break; }
    }
    for (int ch = 0; ch < d.c2; ++ch) {
      const double* p = c.conv2_pre.data() + static_cast<std::size_t>(ch) * d.h2 * d.w2;
      for (int i = 0; i < d.h2 * d.w2; ++i)
        if (std::abs(p[i]) < margin) { a.conv2_b[static_cast<std::size_t>(ch)] += bump; dirty = true; break; }
    }
    for (int u = 0; u < d.units; ++u)
      if (std::abs(c.dense_pre[static_cast<std::size_t>(u)]) < margin) {
        a.dense_b[static_cast<std::size_t>(u)] += bump;
        dirty = true;
      }
    if (!dirty) break;
  }

  run_forward(a, d, image, c);
  Grads g(a);
  run_backward(a, d, image, c, 2.0 * (c.estimate - target_m), g);

  const std::size_t total = a.parameter_count();
  std::vector<std::size_t> chosen;
  if (total <= static_cast<std::size_t>(subset)) {
    chosen.resize(total);
    for (std::size_t i = 0; i < total; ++i) chosen[i] = i;
  } else {
    Rng rng(seed);
    std::unordered_set<std::size_t> seen;
    while (seen.size() < static_cast<std::size_t>(subset))
      seen.insert(rng.below(total));
    chosen.assign(seen.begin(), seen.end());
    std::sort(chosen.begin(), chosen.end());
  }

  const double h = 1e-4;
  double max_rel = 0.0;
  for (std::size_t idx : chosen) {
    double& w = param_at(a, idx);
    const double saved = w;
    w = saved + h;
    run_forward(a, d, image, c);
    double lp = (c.estimate - target_m) * (c.estimate - target_m);
    w = saved - h;
    run_forward(a, d, image, c);
    double lm = (c.estimate - target_m) * (c.estimate - target_m);
    w = saved;
    double numeric = (lp - lm) / (2.0 * h);
    double analytic = grad_at(g, idx);
    double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-8});
    max_rel = std::max(max_rel, std::abs(numeric - analytic) / denom);
  }
  return max_rel;
}

void save_agent(const Agent& a, const std::string& path) {
  nlohmann::json j;
  j["format_version"] = kAgentFormatVersion;
  j["config"] = {{"input_width", a.config.input_width},
                 {"input_height", a.config.input_height},
                 {"conv1_filters", a.config.conv1_filters},
                 {"conv2_filters", a.config.conv2_filters},
                 {"kernel", a.config.kernel},
                 {"dense_units", a.config.dense_units},
                 {"init_scale", a.config.init_scale},
                 {"init_seed", a.config.init_seed}};
  j["conv1_w"] = a.conv1_w;
  j["conv1_b"] = a.conv1_b;
  j["conv2_w"] = a.conv2_w;
  j["conv2_b"] = a.conv2_b;
  j["dense_w"] = a.dense_w;
  j["dense_b"] = a.dense_b;
  j["out_w"] = a.out_w;
  j["out_b"] = a.out_b;
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open for write: " + path);
  f << j.dump(2) << "\n";
}

Agent load_agent(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open agent file: " + path);
  nlohmann::json j = nlohmann::json::parse(f);
  int version = j.value("format_version", -1);
  if (version != kAgentFormatVersion)
    throw IoError("agent format version mismatch: file has " + std::to_string(version) +
                  ", expected " + std::to_string(kAgentFormatVersion));
  Agent a;
  const auto& jc = j.at("config");
  a.config.input_width = jc.at("input_width");
  a.config.input_height = jc.at("input_height");
  a.config.conv1_filters = jc.at("conv1_filters");
  a.config.conv2_filters = jc.at("conv2_filters");
  a.config.kernel = jc.at("kernel");
  a.config.dense_units = jc.at("dense_units");
  a.config.init_scale = jc.at("init_scale");
  a.config.init_seed = jc.at("init_seed");
  a.conv1_w = j.at("conv1_w").get<std::vector<double>>();
  a.conv1_b = j.at("conv1_b").get<std::vector<double>>();
  a.conv2_w = j.at("conv2_w").get<std::vector<double>>();
  a.conv2_b = j.at("conv2_b").get<std::vector<double>>();
  a.dense_w = j.at("dense_w").get<std::vector<double>>();
  a.dense_b = j.at("dense_b").get<std::vector<double>>();
  a.out_w = j.at("out_w").get<std::vector<double>>();
  a.out_b = j.at("out_b").get<std::vector<double>>();
  (void)agent_dims(a.config);  // shape consistency check
  return a;
}

}  // namespace competency
