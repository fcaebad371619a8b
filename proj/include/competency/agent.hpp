#pragma once
// Small trainable convolutional distance estimator. Two valid (unpadded)
// conv+maxpool stages, one rectified dense layer, linear scalar output in
// meters. Forward passes also expose an activation trace used for strategy
// clustering: per-channel means of both conv stages plus all dense
// activations, everything post-rectifier.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "competency/core.hpp"
#include "competency/scene.hpp"

namespace competency {

struct AgentConfig {
  int input_width = kImageWidth;
  int input_height = kImageHeight;
  int conv1_filters = 8;
  int conv2_filters = 16;
  int kernel = 3;
  int dense_units = 32;
  double init_scale = 0.1;  // weights uniform in +/- init_scale, biases zero
  std::uint64_t init_seed = 0;
};

struct AgentDims {
  int c1, h1, w1;   // conv1 output
  int p1h, p1w;     // pool1 output
  int c2, h2, w2;   // conv2 output
  int p2h, p2w;     // pool2 output
  int flat;         // dense input size
  int units;
};

// Throws ConfigError when any derived layer dimension collapses below 1.
[[nodiscard]] AgentDims agent_dims(const AgentConfig& cfg);

struct TraceLayout {
  int conv1_offset = 0;
  int conv2_offset = 0;
  int dense_offset = 0;
  int length = 0;
};

[[nodiscard]] TraceLayout trace_layout(const AgentConfig& cfg);

struct ActivationTrace {
  std::vector<double> values;
  TraceLayout layout;
};

struct Agent {
  AgentConfig config;
  std::vector<double> conv1_w, conv1_b;  // [oc][ic=1][ky][kx], [oc]
  std::vector<double> conv2_w, conv2_b;  // [oc][ic][ky][kx], [oc]
  std::vector<double> dense_w, dense_b;  // [unit][flat], [unit]
  std::vector<double> out_w, out_b;      // [unit], [1]

  std::size_t parameter_count() const;
};

[[nodiscard]] Agent init_agent(const AgentConfig& cfg);

struct ForwardResult {
  double estimate_m = 0.0;
  ActivationTrace trace;
};

[[nodiscard]] ForwardResult forward(const Agent& agent, const Image& image);

struct TrainHyper {
  double lr = 0.01;
  double momentum = 0.9;
  int epochs = 30;
  int batch = 32;
  std::uint64_t shuffle_seed = 0;
  // Warm-start the output bias at the train-target mean before the first
  // step; without it the meter-scale error transient kills the rectifier
  // units. Applied only when epochs > 0.
  bool warm_start_bias = true;
  double clip_norm = 10.0;  // global gradient-norm cap per batch; 0 disables
};

struct TrainReport {
  std::vector<double> epoch_train_mse;    // m^2
  std::optional<double> final_assess_mse; // m^2, absent when assess split empty
  TrainHyper hp;
};

// Mini-batch gradient descent with momentum on MSE over the train split.
// Deterministic given shuffle_seed. Throws NumericError naming the epoch if
// the loss goes non-finite.
[[nodiscard]] std::pair<Agent, TrainReport> train(const Agent& agent,
                                                  const Dataset& data,
                                                  const TrainHyper& hp);

[[nodiscard]] double mse_on_split(const Agent& agent, const Dataset& data, Split split);

// Central finite differences (step 1e-4) against the analytic gradient of
// (estimate - target)^2 on a random subset of at most `subset` parameters.
// Evaluation happens on a copy whose biases were nudged until no rectifier
// pre-activation sits within 2e-3 of zero, so the finite-difference window
// never straddles a kink. Returns the max relative error.
[[nodiscard]] double gradient_check(const Agent& agent, const Image& image,
                                    double target_m, std::uint64_t seed = 0,
                                    int subset = 100);

void save_agent(const Agent& agent, const std::string& path);
[[nodiscard]] Agent load_agent(const std::string& path);

}  // namespace competency
