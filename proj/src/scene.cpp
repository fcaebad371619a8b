#include "competency/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <thread>

#include <json.hpp>

namespace competency {

namespace {

constexpr double kSkyLum = 0.85;
constexpr double kGroundLum = 0.45;
constexpr double kObstacleLum = 0.15;
constexpr int kRainStreaks = 12;
constexpr int kSnowPixels = 40;
constexpr double kNoiseAmp = 0.02;

int horizon_row(int height) { return height / 2; }

double brightness_scale(TimeOfDay t) {
  switch (t) {
    case TimeOfDay::Day: return 1.0;
    case TimeOfDay::Dusk: return 0.5;
    case TimeOfDay::Night: return 0.2;
  }
  return 1.0;
}

int obstacle_width_px(ObstacleKind kind, int h_px, int image_width) {
  int w = h_px;
  switch (kind) {
    case ObstacleKind::Box: w = h_px; break;
    case ObstacleKind::Barrel: w = std::max(1, (h_px + 1) / 2); break;
    case ObstacleKind::Wall: w = 3 * h_px; break;
  }
  return std::min(w, image_width);
}

template <typename F>
void parallel_indices(std::size_t n, int workers, F&& fn) {
  if (workers <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::size_t w = std::min<std::size_t>(static_cast<std::size_t>(workers), n);
  std::vector<std::thread> pool;
  pool.reserve(w);
  for (std::size_t t = 0; t < w; ++t) {
    pool.emplace_back([=, &fn] {
      for (std::size_t i = t; i < n; i += w) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

void check_weights(const FactorWeights& w) {
  auto check = [](const auto& arr, const char* name) {
    double sum = 0.0;
    for (double v : arr) {
      if (v < 0.0) throw ValidationError(std::string("negative weight for factor ") + name);
      sum += v;
    }
    if (!(sum > 0.0)) throw ValidationError(std::string() + "all weights zero for factor " + name);
  };
  check(w.obstacle_kind, "obstacle_kind");
  check(w.weather, "weather");
  check(w.time_of_day, "time_of_day");
}

template <std::size_t N>
std::size_t draw_level(Rng& rng, const std::array<double, N>& w) {
  return rng.categorical(std::vector<double>(w.begin(), w.end()));
}

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>((v >> 8) & 0xFF));
}
void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
void put_f32(std::string& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(out, bits);
}

class ByteReader {
 public:
  ByteReader(const std::string& data, const std::string& path) : data_(data), path_(path) {}
  std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
  std::uint16_t u16() {
    const char* p = take(2);
    return static_cast<std::uint16_t>((std::uint8_t)p[0] | ((std::uint16_t)(std::uint8_t)p[1] << 8));
  }
  std::uint32_t u32() {
    const char* p = take(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | (std::uint8_t)p[i];
    return v;
  }
  std::uint64_t u64() {
    const char* p = take(8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | (std::uint8_t)p[i];
    return v;
  }
  float f32() {
    std::uint32_t bits = u32();
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
  }
  const char* take(std::size_t n) {
    if (pos_ + n > data_.size()) throw IoError("truncated dataset file: " + path_);
    const char* p = data_.data() + pos_;
    pos_ += n;
    return p;
  }

 private:
  const std::string& data_;
  std::string path_;
  std::size_t pos_ = 0;
};

constexpr char kMagic[8] = {'C', 'A', 'M', 'L', 'D', 'S', '1', '\0'};

}  // namespace

const char* to_string(ObstacleKind k) {
  switch (k) {
    case ObstacleKind::Box: return "box";
    case ObstacleKind::Barrel: return "barrel";
    case ObstacleKind::Wall: return "wall";
  }
  return "?";
}
const char* to_string(Weather w) {
  switch (w) {
    case Weather::Clear: return "clear";
    case Weather::Rain: return "rain";
    case Weather::Snow: return "snow";
    case Weather::Fog: return "fog";
  }
  return "?";
}
const char* to_string(TimeOfDay t) {
  switch (t) {
    case TimeOfDay::Day: return "day";
    case TimeOfDay::Dusk: return "dusk";
    case TimeOfDay::Night: return "night";
  }
  return "?";
}

std::size_t Dataset::count(Split s) const {
  std::size_t n = 0;
  for (Split v : split)
    if (v == s) ++n;
  return n;
}

void validate(const SceneParams& p) {
  if (!(p.distance_m >= 2.0 && p.distance_m <= 30.0))
    throw ValidationError("distance_m out of [2, 30]");
  if (!(p.lateral_offset >= -0.3 && p.lateral_offset <= 0.3))
    throw ValidationError("lateral_offset out of [-0.3, 0.3]");
}

int obstacle_height_px(double distance_m) {
  int h = static_cast<int>(std::llround(kFocalPxM * kObstacleHeightM / distance_m));
  return std::clamp(h, 1, kImageHeight);
}

Image render_base(const SceneParams& p) {
  validate(p);
  Image img;
  const int hz = horizon_row(img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      img.at(x, y) = (y < hz) ? kSkyLum : kGroundLum;

  // Obstacle: vertically centered on the horizon, width depends on kind.
  const int h_px = obstacle_height_px(p.distance_m);
  const int w_px = obstacle_width_px(p.obstacle_kind, h_px, img.width);
  const double cx = (0.5 + p.lateral_offset) * img.width;
  const int left = static_cast<int>(std::llround(cx - w_px / 2.0));
  const int top = hz - h_px / 2;
  std::vector<std::uint8_t> mask(img.pixels.size(), 0);
  for (int y = std::max(0, top); y < std::min(img.height, top + h_px); ++y) {
    for (int x = std::max(0, left); x < std::min(img.width, left + w_px); ++x) {
      img.at(x, y) = kObstacleLum;
      mask[static_cast<std::size_t>(y) * img.width + x] = 1;
    }
  }

  const double scale = brightness_scale(p.time_of_day);
  for (double& v : img.pixels) v *= scale;

  if (p.weather == Weather::Fog) {
    const double f = std::min(1.0, p.distance_m / 30.0) * 0.7;
    for (std::size_t i = 0; i < img.pixels.size(); ++i)
      if (mask[i]) img.pixels[i] += (0.5 - img.pixels[i]) * f;
  }
  return img;
}

Image render(const SceneParams& p) {
  Image img = render_base(p);
  Rng rng(p.noise_seed);
  if (p.weather == Weather::Rain) {
    for (int s = 0; s < kRainStreaks; ++s) {
      int col = static_cast<int>(rng.below(static_cast<std::uint64_t>(img.width)));
      for (int y = 0; y < img.height; ++y) img.at(col, y) -= 0.2;
    }
  }
  if (p.weather == Weather::Snow) {
    for (int s = 0; s < kSnowPixels; ++s) {
      int x = static_cast<int>(rng.below(static_cast<std::uint64_t>(img.width)));
      int y = static_cast<int>(rng.below(static_cast<std::uint64_t>(img.height)));
      img.at(x, y) = 1.0;
    }
  }
  for (double& v : img.pixels) v += rng.uniform(-kNoiseAmp, kNoiseAmp);
  for (double& v : img.pixels) v = std::clamp(v, 0.0, 1.0);
  return img;
}

Sample generate_sample(std::uint64_t master_seed, std::size_t index,
                       const FactorWeights& w) {
  Rng rng(mix_seed(master_seed, index));
  SceneParams p;
  p.distance_m = rng.uniform(2.0, 30.0);
  p.obstacle_kind = static_cast<ObstacleKind>(draw_level(rng, w.obstacle_kind));
  p.weather = static_cast<Weather>(draw_level(rng, w.weather));
  p.time_of_day = static_cast<TimeOfDay>(draw_level(rng, w.time_of_day));
  p.lateral_offset = rng.uniform(-0.3, 0.3);
  p.noise_seed = mix_seed(master_seed, index);
  Sample s;
  s.params = p;
  s.true_distance_m = p.distance_m;
  s.image = render(p);
  return s;
}

Dataset generate_dataset(std::size_t n, std::uint64_t master_seed,
                         const FactorWeights& weights, int workers) {
  if (n < 2 || n % 2 != 0)
    throw ValidationError("dataset size must be even and >= 2");
  check_weights(weights);
  Dataset ds;
  ds.master_seed = master_seed;
  ds.weights = weights;
  ds.samples.resize(n);
  ds.split.resize(n);
  parallel_indices(n, workers, [&](std::size_t i) {
    ds.samples[i] = generate_sample(master_seed, i, weights);
    ds.split[i] = (i % 2 == 0) ? Split::Train : Split::Assess;
  });
  return ds;
}

void save_dataset(const Dataset& ds, const std::string& path) {
  std::string out;
  out.reserve(ds.samples.size() * (24 + 4 * kImageWidth * kImageHeight) + 16);
  out.append(kMagic, 8);
  put_u32(out, static_cast<std::uint32_t>(ds.samples.size()));
  put_u16(out, static_cast<std::uint16_t>(kImageWidth));
  put_u16(out, static_cast<std::uint16_t>(kImageHeight));
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const Sample& s = ds.samples[i];
    put_f32(out, static_cast<float>(s.params.distance_m));
    out.push_back(static_cast<char>(s.params.obstacle_kind));
    out.push_back(static_cast<char>(s.params.weather));
    out.push_back(static_cast<char>(s.params.time_of_day));
    put_f32(out, static_cast<float>(s.params.lateral_offset));
    put_u64(out, s.params.noise_seed);
    out.push_back(static_cast<char>(ds.split[i]));
    for (double v : s.image.pixels) put_f32(out, static_cast<float>(v));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for write: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("write failed: " + path);

  nlohmann::json side;
  side["master_seed"] = ds.master_seed;
  side["weights"]["obstacle_kind"] = ds.weights.obstacle_kind;
  side["weights"]["weather"] = ds.weights.weather;
  side["weights"]["time_of_day"] = ds.weights.time_of_day;
  std::ofstream sf(path + ".json", std::ios::trunc);
  if (!sf) throw IoError("cannot open for write: " + path + ".json");
  sf << side.dump(2) << "\n";
}

Dataset load_dataset(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open dataset: " + path);
  std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  ByteReader r(data, path);
  const char* magic = r.take(8);
  if (std::memcmp(magic, kMagic, 8) != 0) throw IoError("bad dataset magic: " + path);
  std::uint32_t n = r.u32();
  std::uint16_t w = r.u16();
  std::uint16_t h = r.u16();
  if (w != kImageWidth || h != kImageHeight)
    throw IoError("unexpected image geometry in " + path);
  Dataset ds;
  ds.samples.resize(n);
  ds.split.resize(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    Sample& s = ds.samples[i];
    s.params.distance_m = r.f32();
    s.params.obstacle_kind = static_cast<ObstacleKind>(r.u8());
    s.params.weather = static_cast<Weather>(r.u8());
    s.params.time_of_day = static_cast<TimeOfDay>(r.u8());
    s.params.lateral_offset = r.f32();
    s.params.noise_seed = r.u64();
    ds.split[i] = static_cast<Split>(r.u8());
    s.true_distance_m = s.params.distance_m;
    s.image = Image(w, h);
    for (double& px : s.image.pixels) px = r.f32();
  }
  std::ifstream sf(path + ".json");
  if (sf) {
    nlohmann::json side = nlohmann::json::parse(sf);
    ds.master_seed = side.value("master_seed", std::uint64_t{0});
    if (side.contains("weights")) {
      auto& jw = side["weights"];
      ds.weights.obstacle_kind = jw["obstacle_kind"].get<std::array<double, 3>>();
      ds.weights.weather = jw["weather"].get<std::array<double, 4>>();
      ds.weights.time_of_day = jw["time_of_day"].get<std::array<double, 3>>();
    }
  }
  return ds;
}

}  // namespace competency
