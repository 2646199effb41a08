#pragma once

// Procedural "moving shapes" corpus and the slow/fast tempo-pair sampler.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include "vthcl/errors.hpp"
#include "vthcl/random.hpp"
#include "vthcl/tensor.hpp"

namespace vthcl {

inline constexpr int kRawClipFrames = 64;

enum class ShapeLabel : int { circle = 0, square = 1, triangle = 2 };
enum class SpeedLabel : int { slow = 0, medium = 1, fast = 2 };
inline constexpr int kNumShapes = 3;
inline constexpr int kNumSpeeds = 3;

inline std::string_view to_string(ShapeLabel s) {
  switch (s) {
    case ShapeLabel::circle: return "circle";
    case ShapeLabel::square: return "square";
    case ShapeLabel::triangle: return "triangle";
  }
  return "?";
}
inline std::string_view to_string(SpeedLabel s) {
  switch (s) {
    case SpeedLabel::slow: return "slow";
    case SpeedLabel::medium: return "medium";
    case SpeedLabel::fast: return "fast";
  }
  return "?";
}
inline ShapeLabel parse_shape_label(std::string_view s) {
  if (s == "circle") return ShapeLabel::circle;
  if (s == "square") return ShapeLabel::square;
  if (s == "triangle") return ShapeLabel::triangle;
  throw FormatError("unknown shape label '" + std::string(s) + "'");
}
inline SpeedLabel parse_speed_label(std::string_view s) {
  if (s == "slow") return SpeedLabel::slow;
  if (s == "medium") return SpeedLabel::medium;
  if (s == "fast") return SpeedLabel::fast;
  throw FormatError("unknown speed label '" + std::string(s) + "'");
}

struct GeneratorConfig {
  int height = 64;
  int width = 64;
  int channels = 3;
  int frames = 64;               // T_total
  double background = 0.4;       // mean background intensity
  double noise_sigma = 0.05;     // static per-instance background texture
  double min_radius = 7.0;       // shape size range, pixels
  double max_radius = 10.0;
  std::array<double, 3> speeds{0.25, 0.5, 1.0};  // px/frame for slow, medium, fast
  double speed_jitter = 0.1;     // relative, uniform in [-j, +j]
  double min_brightness = 0.75;
  double max_brightness = 0.95;

  void validate() const {
    if (height < 16 || width < 16) throw ConfigError("generator: height and width must be >= 16");
    if (channels < 1) throw ConfigError("generator: channels must be >= 1");
    if (frames < kRawClipFrames) throw ConfigError("generator: frames (T_total) must be >= 64");
    if (!(noise_sigma >= 0)) throw ConfigError("generator: noise_sigma must be >= 0");
    if (!(min_radius > 0) || !(max_radius >= min_radius))
      throw ConfigError("generator: need 0 < min_radius <= max_radius");
    if (2 * max_radius >= std::min(height, width))
      throw ConfigError("generator: max_radius too large for frame size");
    for (double v : speeds)
      if (!(v > 0)) throw ConfigError("generator: speeds must be positive");
    if (!(speed_jitter >= 0 && speed_jitter < 1)) throw ConfigError("generator: speed_jitter in [0,1)");
    if (!(min_brightness <= max_brightness)) throw ConfigError("generator: brightness range");
  }
};

// One labelled video. Labels are generator-side metadata used only for
// probing; pretraining consumes TempoPair, which carries none.
struct VideoInstance {
  int instance_id = 0;
  Tensor<float> frames;  // [T_total, H, W, C], values in [0,1]
  Tensor<float> mask;    // [T_total, H, W], 1 where the object is
  ShapeLabel shape_label = ShapeLabel::circle;
  SpeedLabel speed_label = SpeedLabel::slow;
  std::uint64_t seed = 0;  // per-instance derived seed

  int total_frames() const { return static_cast<int>(frames.dim(0)); }
};

struct RawClip {
  Tensor<float> frames;  // [64, H, W, C]
  int instance_id = 0;
  int start_frame = 0;
};

struct TempoPair {
  Tensor<float> slow;  // [64/tau, H, W, C]
  Tensor<float> fast;  // [alpha*64/tau, H, W, C]
  int instance_id = 0;
  int alpha = 1;
  int tau = 1;
};

namespace detail {

inline bool inside_shape(ShapeLabel shape, double dx, double dy, double r) {
  switch (shape) {
    case ShapeLabel::circle:
      return dx * dx + dy * dy <= r * r;
    case ShapeLabel::square: {
      const double s = r * std::sqrt(std::numbers::pi) / 2.0;  // equal area to the circle
      return std::abs(dx) <= s && std::abs(dy) <= s;
    }
    case ShapeLabel::triangle: {
      // Upward equilateral triangle with circumradius R, equal area to the circle.
      const double R = r * std::sqrt(4.0 * std::numbers::pi / (3.0 * std::sqrt(3.0)));
      const double y = -dy;  // image rows grow downwards
      if (y < -R / 2.0) return false;
      const double half_width = (R - y) / std::sqrt(3.0);
      return std::abs(dx) <= half_width;
    }
  }
  return false;
}

// Reflect a coordinate moving with velocity v into [lo, hi].
inline void bounce(double& p, double& v, double lo, double hi) {
  for (int guard = 0; guard < 8 && (p < lo || p > hi); ++guard) {
    if (p < lo) {
      p = 2 * lo - p;
      v = -v;
    } else if (p > hi) {
      p = 2 * hi - p;
      v = -v;
    }
  }
}

}  // namespace detail

inline ShapeLabel shape_for_instance(int instance_id) {
  return static_cast<ShapeLabel>((instance_id % 9) % 3);
}
inline SpeedLabel speed_for_instance(int instance_id) {
  return static_cast<SpeedLabel>((instance_id % 9) / 3);
}

// Renders instance `instance_id`. Frames depend only on (seed, instance_id, cfg).
inline VideoInstance generate_instance(int instance_id, std::uint64_t seed, const GeneratorConfig& cfg) {
  cfg.validate();
  if (instance_id < 0) throw ConfigError("instance_id must be >= 0");

  VideoInstance v;
  v.instance_id = instance_id;
  v.shape_label = shape_for_instance(instance_id);
  v.speed_label = speed_for_instance(instance_id);
  v.seed = derive_seed(seed, {stream::generator, static_cast<std::uint64_t>(instance_id)});

  Rng rng(v.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double r = cfg.min_radius + (cfg.max_radius - cfg.min_radius) * unit(rng);
  const double lo_x = r, hi_x = cfg.width - r;
  const double lo_y = r, hi_y = cfg.height - r;
  double px = lo_x + (hi_x - lo_x) * unit(rng);
  double py = lo_y + (hi_y - lo_y) * unit(rng);
  const double angle = 2.0 * std::numbers::pi * unit(rng);
  const double speed = cfg.speeds[static_cast<int>(v.speed_label)] *
                       (1.0 + cfg.speed_jitter * (2.0 * unit(rng) - 1.0));
  double vx = speed * std::cos(angle);
  double vy = speed * std::sin(angle);
  const double brightness =
      cfg.min_brightness + (cfg.max_brightness - cfg.min_brightness) * unit(rng);

  const std::size_t T = cfg.frames, H = cfg.height, W = cfg.width, C = cfg.channels;
  Tensor<float> texture({H, W, C});
  std::normal_distribution<double> noise(0.0, cfg.noise_sigma);
  for (auto& px_val : texture.storage()) {
    const double val = cfg.background + (cfg.noise_sigma > 0 ? noise(rng) : 0.0);
    px_val = static_cast<float>(std::clamp(val, 0.0, 1.0));
  }

  v.frames = Tensor<float>({T, H, W, C});
  v.mask = Tensor<float>({T, H, W});
  const float fg = static_cast<float>(std::clamp(brightness, 0.0, 1.0));
  for (std::size_t t = 0; t < T; ++t) {
    if (t > 0) {
      px += vx;
      py += vy;
      detail::bounce(px, vx, lo_x, hi_x);
      detail::bounce(py, vy, lo_y, hi_y);
    }
    float* frame = v.frames.data() + t * H * W * C;
    float* mask = v.mask.data() + t * H * W;
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        const double dx = (static_cast<double>(x) + 0.5) - px;
        const double dy = (static_cast<double>(y) + 0.5) - py;
        const bool on = detail::inside_shape(v.shape_label, dx, dy, r);
        mask[y * W + x] = on ? 1.0f : 0.0f;
        for (std::size_t c = 0; c < C; ++c)
          frame[(y * W + x) * C + c] = on ? fg : texture[(y * W + x) * C + c];
      }
    }
  }
  return v;
}

// Labels cycle through the 3x3 (shape, speed) grid by instance id, so any
// prefix of ids is balanced to within one instance per cell.
inline std::vector<VideoInstance> generate_dataset(int num_instances, std::uint64_t seed,
                                                   const GeneratorConfig& cfg = {}) {
  if (num_instances < 1) throw ConfigError("num_instances must be >= 1");
  cfg.validate();
  std::vector<VideoInstance> out;
  out.reserve(num_instances);
  for (int i = 0; i < num_instances; ++i) out.push_back(generate_instance(i, seed, cfg));
  return out;
}

inline RawClip sample_raw_clip(const VideoInstance& v, int start) {
  const int total = v.total_frames();
  if (start < 0 || start + kRawClipFrames > total)
    throw BoundsError("raw clip start " + std::to_string(start) + " + 64 exceeds " +
                      std::to_string(total) + " frames");
  const std::size_t frame_size = v.frames.size() / total;
  Shape shape = v.frames.shape();
  shape[0] = kRawClipFrames;
  std::vector<float> data(v.frames.data() + start * frame_size,
                          v.frames.data() + (start + kRawClipFrames) * frame_size);
  return RawClip{Tensor<float>(std::move(shape), std::move(data)), v.instance_id, start};
}

// Uniform start when the video is longer than a raw clip, 0 otherwise.
inline int choose_clip_start(const VideoInstance& v, Rng& rng) {
  const int slack = v.total_frames() - kRawClipFrames;
  if (slack <= 0) return 0;
  return std::uniform_int_distribution<int>(0, slack)(rng);
}

inline void validate_tempo(int tau, int alpha) {
  if (tau < 1 || kRawClipFrames % tau != 0)
    throw ConfigError("tau=" + std::to_string(tau) + " must divide 64");
  if (alpha < 1 || tau % alpha != 0)
    throw ConfigError("alpha=" + std::to_string(alpha) + " must divide tau=" + std::to_string(tau));
}

// Frame indices (into the raw clip) used by each pathway.
inline std::vector<int> slow_frame_indices(int tau) {
  std::vector<int> idx;
  for (int j = 0; j * tau < kRawClipFrames; ++j) idx.push_back(j * tau);
  return idx;
}
inline std::vector<int> fast_frame_indices(int tau, int alpha) {
  return slow_frame_indices(tau / alpha);
}

namespace detail {
inline Tensor<float> gather_frames(const Tensor<float>& frames, const std::vector<int>& idx) {
  const std::size_t frame_size = frames.size() / frames.dim(0);
  Shape shape = frames.shape();
  shape[0] = idx.size();
  Tensor<float> out(shape);
  for (std::size_t j = 0; j < idx.size(); ++j)
    std::copy_n(frames.data() + idx[j] * frame_size, frame_size, out.data() + j * frame_size);
  return out;
}
}  // namespace detail

inline TempoPair make_tempo_pair(const RawClip& raw, int tau, int alpha) {
  validate_tempo(tau, alpha);
  if (raw.frames.rank() != 4 || raw.frames.dim(0) != static_cast<std::size_t>(kRawClipFrames))
    throw ShapeError("raw clip must be [64,H,W,C], got " + shape_str(raw.frames.shape()));
  TempoPair p;
  p.instance_id = raw.instance_id;
  p.alpha = alpha;
  p.tau = tau;
  p.slow = detail::gather_frames(raw.frames, slow_frame_indices(tau));
  p.fast = detail::gather_frames(raw.frames, fast_frame_indices(tau, alpha));
  return p;
}

// Object mask restricted to the raw-clip frames `idx`: [idx.size(), H, W].
inline Tensor<float> clip_mask(const VideoInstance& v, int start, const std::vector<int>& idx) {
  const std::size_t H = v.mask.dim(1), W = v.mask.dim(2);
  Tensor<float> out({idx.size(), H, W});
  for (std::size_t j = 0; j < idx.size(); ++j) {
    const int t = start + idx[j];
    if (t < 0 || t >= v.total_frames()) throw BoundsError("mask frame out of range");
    std::copy_n(v.mask.data() + t * H * W, H * W, out.data() + j * H * W);
  }
  return out;
}

}  // namespace vthcl
