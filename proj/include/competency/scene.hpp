#pragma once
// Procedural labeled obstacle scenes: a tiny grayscale renderer with
// controllable weather / time-of-day factors, plus deterministic dataset
// generation and a binary on-disk format.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "competency/core.hpp"

namespace competency {

enum class ObstacleKind : std::uint8_t { Box = 0, Barrel = 1, Wall = 2 };
enum class Weather : std::uint8_t { Clear = 0, Rain = 1, Snow = 2, Fog = 3 };
enum class TimeOfDay : std::uint8_t { Day = 0, Dusk = 1, Night = 2 };

inline constexpr int kImageWidth = 32;
inline constexpr int kImageHeight = 24;

[[nodiscard]] const char* to_string(ObstacleKind k);
[[nodiscard]] const char* to_string(Weather w);
[[nodiscard]] const char* to_string(TimeOfDay t);

struct Image {
  int width = kImageWidth;
  int height = kImageHeight;
  std::vector<double> pixels;  // row-major luminance, each in [0, 1]

  Image() : pixels(static_cast<std::size_t>(kImageWidth) * kImageHeight, 0.0) {}
  Image(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, 0.0) {}

  double& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  double at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
};

struct SceneParams {
  double distance_m = 10.0;       // [2, 30]
  ObstacleKind obstacle_kind = ObstacleKind::Box;
  Weather weather = Weather::Clear;
  TimeOfDay time_of_day = TimeOfDay::Day;
  double lateral_offset = 0.0;    // [-0.3, 0.3] fraction of image width
  std::uint64_t noise_seed = 0;
};

struct Sample {
  Image image;
  SceneParams params;
  double true_distance_m = 0.0;  // == params.distance_m
};

enum class Split : std::uint8_t { Train = 0, Assess = 1 };

// Level weights per categorical factor; distance and lateral offset are
// always uniform over their ranges.
struct FactorWeights {
  std::array<double, 3> obstacle_kind{1.0, 1.0, 1.0};
  std::array<double, 4> weather{1.0, 1.0, 1.0, 1.0};
  std::array<double, 3> time_of_day{1.0, 1.0, 1.0};
};

struct Dataset {
  std::vector<Sample> samples;
  std::vector<Split> split;  // parallel to samples
  std::uint64_t master_seed = 0;
  FactorWeights weights;

  std::size_t size() const { return samples.size(); }
  std::size_t count(Split s) const;
};

// Pinhole constants: apparent height = round(f * H_obj / distance).
inline constexpr double kFocalPxM = 40.0;
inline constexpr double kObstacleHeightM = 2.0;

[[nodiscard]] int obstacle_height_px(double distance_m);

// Geometry + brightness + fog only (everything before the stochastic
// effects). Exposed so tests can assert exact pixel math.
[[nodiscard]] Image render_base(const SceneParams& params);

// Full render: base, then rain streaks, snow pixels, additive noise from a
// generator seeded with params.noise_seed, final clamp to [0, 1].
[[nodiscard]] Image render(const SceneParams& params);

// Per-sample randomness derives from mix_seed(master_seed, index), so the
// result is identical for any worker count. Even indices -> train split.
[[nodiscard]] Dataset generate_dataset(std::size_t n, std::uint64_t master_seed,
                                       const FactorWeights& weights,
                                       int workers = 1);

// Re-derives the sample at `index` exactly as generate_dataset would.
[[nodiscard]] Sample generate_sample(std::uint64_t master_seed, std::size_t index,
                                     const FactorWeights& weights);

// Binary dataset format (little-endian) plus a JSON sidecar at path + ".json"
// carrying master_seed and the factor weights.
void save_dataset(const Dataset& ds, const std::string& path);
[[nodiscard]] Dataset load_dataset(const std::string& path);

void validate(const SceneParams& params);

}  // namespace competency
