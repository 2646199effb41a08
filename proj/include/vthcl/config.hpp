#pragma once

// Plain-text `key = value` configuration. Lines starting with '#' and blank
// lines are ignored; unknown keys, malformed values and constraint
// violations are rejected with the offending key named.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "vthcl/contrastive.hpp"
#include "vthcl/encoder.hpp"
#include "vthcl/errors.hpp"
#include "vthcl/synth_data.hpp"

namespace vthcl {

namespace kv {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

using Entries = std::vector<std::pair<std::string, std::string>>;

inline Entries parse(std::string_view text, const std::string& origin = "config") {
  Entries out;
  std::map<std::string, int> seen;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key=value, got '" + t + "'");
    auto key = trim(std::string_view(t).substr(0, eq));
    auto value = trim(std::string_view(t).substr(eq + 1));
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
    if (seen[key]++) throw KeyError(key, "duplicate key");
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

inline std::string format_double(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline double to_double(const std::string& key, const std::string& v) {
  double out = 0;
  auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) throw KeyError(key, "expected a real number, got '" + v + "'");
  return out;
}

inline long long to_int(const std::string& key, const std::string& v) {
  long long out = 0;
  auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) throw KeyError(key, "expected an integer, got '" + v + "'");
  return out;
}

inline std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size())
    throw KeyError(key, "expected a non-negative integer, got '" + v + "'");
  return out;
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw KeyError(key, "expected true|false, got '" + v + "'");
}

inline std::vector<std::string> to_list(const std::string& v) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(v);
  while (std::getline(in, item, ',')) {
    auto t = trim(item);
    if (!t.empty()) out.push_back(std::move(t));
  }
  return out;
}

template <typename T, typename F>
std::string join(const std::vector<T>& xs, F&& fmt) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ",";
    out += fmt(xs[i]);
  }
  return out;
}

// Typed field table: one entry per configuration key.
template <typename Config>
struct Field {
  std::string key;
  std::string doc;
  std::function<void(Config&, const std::string&)> set;
  std::function<std::string(const Config&)> get;
};

template <typename Config>
void apply(Config& cfg, const std::vector<Field<Config>>& fields, const Entries& entries) {
  for (const auto& [key, value] : entries) {
    const Field<Config>* f = nullptr;
    for (const auto& cand : fields)
      if (cand.key == key) f = &cand;
    if (!f) throw KeyError(key, "unknown key");
    f->set(cfg, value);
  }
}

template <typename Config>
std::string to_text(const Config& cfg, const std::vector<Field<Config>>& fields) {
  std::string out;
  for (const auto& f : fields) out += f.key + "=" + f.get(cfg) + "\n";
  return out;
}

}  // namespace kv

enum class PairMode { tempo, instance_discrimination };

inline std::string_view to_string(PairMode m) {
  return m == PairMode::tempo ? "tempo" : "instance_discrimination";
}

struct TrainConfig {
  double lr0 = 0.03;
  int batch_size = 32;
  double sgd_momentum = 0.9;
  double weight_decay = 1e-4;
  int epochs = 50;
  double temperature = 0.07;
  int alpha = 2;
  int tau = 8;
  std::vector<std::string> taps{"res3", "res4", "res5"};
  std::vector<double> level_weights;  // aligned with taps; empty means all 1
  double bank_momentum = 0.5;
  bool renormalize_bank = true;
  int embedding_dim = 128;
  int num_negatives = 0;  // 0: min(16384, n - 1)
  std::vector<int> stage_channels{8, 16, 32, 64};
  std::vector<bool> temporal_kernel{true, true, true, true};
  double fast_width_multiplier = 0.5;
  double bn_momentum = 0.1;
  std::uint64_t seed = 0;
  PairMode pair_mode = PairMode::tempo;

  int slow_frames() const { return kRawClipFrames / tau; }
  int fast_frames() const {
    return pair_mode == PairMode::instance_discrimination ? slow_frames() : alpha * slow_frames();
  }

  EncoderConfig encoder_config(Pathway p) const {
    EncoderConfig e;
    e.pathway = p;
    e.stage_channels = stage_channels;
    e.temporal_kernel = temporal_kernel;
    e.taps = taps;
    e.width_multiplier = p == Pathway::fast ? fast_width_multiplier : 1.0;
    e.clip_frames = p == Pathway::fast ? fast_frames() : slow_frames();
    return e;
  }

  LossConfig loss_config() const {
    LossConfig l;
    l.temperature = temperature;
    l.num_negatives = num_negatives;
    l.taps = taps;
    for (std::size_t i = 0; i < level_weights.size() && i < taps.size(); ++i)
      l.level_weights[taps[i]] = level_weights[i];
    return l;
  }

  void validate() const {
    auto positive = [](const char* key, double v) {
      if (!(v > 0)) throw KeyError(key, "must be positive");
    };
    positive("lr0", lr0);
    positive("batch_size", batch_size);
    positive("temperature", temperature);
    positive("embedding_dim", embedding_dim);
    positive("fast_width_multiplier", fast_width_multiplier);
    if (epochs < 0) throw KeyError("epochs", "must be >= 0");
    if (!(sgd_momentum >= 0 && sgd_momentum < 1)) throw KeyError("sgd_momentum", "must be in [0,1)");
    if (!(weight_decay >= 0)) throw KeyError("weight_decay", "must be >= 0");
    if (!(bank_momentum >= 0 && bank_momentum <= 1)) throw KeyError("bank_momentum", "must be in [0,1]");
    if (!(bn_momentum > 0 && bn_momentum <= 1)) throw KeyError("bn_momentum", "must be in (0,1]");
    if (fast_width_multiplier > 1) throw KeyError("fast_width_multiplier", "fast encoder may not be wider than slow");
    if (num_negatives < 0) throw KeyError("num_negatives", "must be >= 0 (0 = automatic)");
    if (tau < 1 || kRawClipFrames % tau != 0) throw KeyError("tau", "must divide 64");
    if (alpha < 1) throw KeyError("alpha", "must be >= 1");
    if (tau % alpha != 0)
      throw KeyError("alpha", "alpha=" + std::to_string(alpha) + " must divide tau=" + std::to_string(tau));
    if (!level_weights.empty() && level_weights.size() != taps.size())
      throw KeyError("level_weights", "need one weight per tap");
    for (double w : level_weights)
      if (!(w >= 0)) throw KeyError("level_weights", "weights must be >= 0");
    if (!level_weights.empty() && std::none_of(level_weights.begin(), level_weights.end(), [](double w) { return w > 0; }))
      throw KeyError("level_weights", "at least one weight must be positive");
    try {
      encoder_config(Pathway::slow).validate();
      encoder_config(Pathway::fast).validate();
    } catch (const ConfigError& e) {
      throw KeyError("taps", e.what());
    }
  }
};

inline const std::vector<kv::Field<TrainConfig>>& train_config_fields() {
  using C = TrainConfig;
  using namespace kv;
  auto dbl = [](const char* k, double C::*m, const char* doc) {
    return Field<C>{k, doc, [k, m](C& c, const std::string& v) { c.*m = to_double(k, v); },
                    [m](const C& c) { return format_double(c.*m); }};
  };
  auto integer = [](const char* k, int C::*m, const char* doc) {
    return Field<C>{k, doc, [k, m](C& c, const std::string& v) { c.*m = static_cast<int>(to_int(k, v)); },
                    [m](const C& c) { return std::to_string(c.*m); }};
  };
  static const std::vector<Field<C>> fields = {
      dbl("lr0", &C::lr0, "initial learning rate of the half-period cosine schedule"),
      integer("batch_size", &C::batch_size, "instances per SGD step"),
      dbl("sgd_momentum", &C::sgd_momentum, "SGD momentum"),
      dbl("weight_decay", &C::weight_decay, "L2 weight decay (not applied to batch-norm parameters)"),
      integer("epochs", &C::epochs, "passes over the corpus"),
      dbl("temperature", &C::temperature, "softmax temperature T of the similarity"),
      integer("alpha", &C::alpha, "fast clip samples alpha times more densely than the slow clip"),
      integer("tau", &C::tau, "slow clip stride; the slow clip has 64/tau frames"),
      {"taps", "comma list of encoder depths contributing a loss level",
       [](C& c, const std::string& v) { c.taps = to_list(v); },
       [](const C& c) { return join(c.taps, [](const std::string& s) { return s; }); }},
      {"level_weights", "comma list of per-tap loss weights (empty: all 1)",
       [](C& c, const std::string& v) {
         c.level_weights.clear();
         for (const auto& s : to_list(v)) c.level_weights.push_back(to_double("level_weights", s));
       },
       [](const C& c) { return join(c.level_weights, [](double d) { return format_double(d); }); }},
      dbl("bank_momentum", &C::bank_momentum, "memory bank momentum m"),
      {"renormalize_bank", "re-normalize bank rows after each momentum update",
       [](C& c, const std::string& v) { c.renormalize_bank = to_bool("renormalize_bank", v); },
       [](const C& c) { return std::string(c.renormalize_bank ? "true" : "false"); }},
      integer("embedding_dim", &C::embedding_dim, "projection output dimension d"),
      integer("num_negatives", &C::num_negatives, "negatives per query (0: min(16384, n-1))"),
      {"stage_channels", "comma list of slow encoder stage widths",
       [](C& c, const std::string& v) {
         c.stage_channels.clear();
         for (const auto& s : to_list(v)) c.stage_channels.push_back(static_cast<int>(to_int("stage_channels", s)));
       },
       [](const C& c) { return join(c.stage_channels, [](int i) { return std::to_string(i); }); }},
      {"temporal_kernel", "comma list of per-stage flags: 1 = 3x3x3 kernel, 0 = 1x3x3",
       [](C& c, const std::string& v) {
         c.temporal_kernel.clear();
         for (const auto& s : to_list(v)) c.temporal_kernel.push_back(to_bool("temporal_kernel", s));
       },
       [](const C& c) { return join(c.temporal_kernel, [](bool b) { return std::string(b ? "1" : "0"); }); }},
      dbl("fast_width_multiplier", &C::fast_width_multiplier, "fast encoder width relative to slow"),
      dbl("bn_momentum", &C::bn_momentum, "batch-norm running statistics momentum"),
      {"seed", "seed for initialization, ordering, clip starts and negative sampling",
       [](C& c, const std::string& v) { c.seed = to_u64("seed", v); },
       [](const C& c) { return std::to_string(c.seed); }},
      {"pair_mode", "tempo | instance_discrimination (fast input := slow clip)",
       [](C& c, const std::string& v) {
         if (v == "tempo") c.pair_mode = PairMode::tempo;
         else if (v == "instance_discrimination") c.pair_mode = PairMode::instance_discrimination;
         else throw KeyError("pair_mode", "expected tempo|instance_discrimination, got '" + v + "'");
       },
       [](const C& c) { return std::string(to_string(c.pair_mode)); }},
  };
  return fields;
}

inline TrainConfig parse_train_config(std::string_view text, const TrainConfig& base = {},
                                      const std::string& origin = "config") {
  TrainConfig c = base;
  kv::apply(c, train_config_fields(), kv::parse(text, origin));
  c.validate();
  return c;
}

inline std::string to_text(const TrainConfig& c) { return kv::to_text(c, train_config_fields()); }

inline const std::vector<kv::Field<GeneratorConfig>>& generator_config_fields() {
  using C = GeneratorConfig;
  using namespace kv;
  auto dbl = [](const char* k, double C::*m, const char* doc) {
    return Field<C>{k, doc, [k, m](C& c, const std::string& v) { c.*m = to_double(k, v); },
                    [m](const C& c) { return format_double(c.*m); }};
  };
  auto integer = [](const char* k, int C::*m, const char* doc) {
    return Field<C>{k, doc, [k, m](C& c, const std::string& v) { c.*m = static_cast<int>(to_int(k, v)); },
                    [m](const C& c) { return std::to_string(c.*m); }};
  };
  static const std::vector<Field<C>> fields = {
      integer("height", &C::height, "frame height (>= 16)"),
      integer("width", &C::width, "frame width (>= 16)"),
      integer("channels", &C::channels, "colour channels"),
      integer("frames", &C::frames, "frames per video (>= 64)"),
      dbl("background", &C::background, "mean background intensity"),
      dbl("noise_sigma", &C::noise_sigma, "std of the static background texture"),
      dbl("min_radius", &C::min_radius, "smallest shape radius (px)"),
      dbl("max_radius", &C::max_radius, "largest shape radius (px)"),
      {"speeds", "px/frame for slow,medium,fast",
       [](C& c, const std::string& v) {
         auto items = to_list(v);
         if (items.size() != 3) throw KeyError("speeds", "need exactly three values");
         for (int i = 0; i < 3; ++i) c.speeds[i] = to_double("speeds", items[i]);
       },
       [](const C& c) {
         return join(std::vector<double>(c.speeds.begin(), c.speeds.end()), [](double d) { return format_double(d); });
       }},
      dbl("speed_jitter", &C::speed_jitter, "relative per-instance speed jitter"),
      dbl("min_brightness", &C::min_brightness, "shape intensity lower bound"),
      dbl("max_brightness", &C::max_brightness, "shape intensity upper bound"),
  };
  return fields;
}

inline GeneratorConfig parse_generator_config(std::string_view text, const std::string& origin = "config") {
  GeneratorConfig c;
  kv::apply(c, generator_config_fields(), kv::parse(text, origin));
  c.validate();
  return c;
}

// EncoderConfig <-> key=value with an "encoder." prefix (checkpoint metadata).
inline std::string encoder_config_text(const EncoderConfig& e) {
  using kv::join;
  std::string out;
  out += "encoder.pathway=" + std::string(to_string(e.pathway)) + "\n";
  out += "encoder.in_channels=" + std::to_string(e.in_channels) + "\n";
  out += "encoder.stage_channels=" + join(e.stage_channels, [](int i) { return std::to_string(i); }) + "\n";
  out += "encoder.temporal_kernel=" + join(e.temporal_kernel, [](bool b) { return std::string(b ? "1" : "0"); }) + "\n";
  out += "encoder.taps=" + join(e.taps, [](const std::string& s) { return s; }) + "\n";
  out += "encoder.width_multiplier=" + kv::format_double(e.width_multiplier) + "\n";
  out += "encoder.clip_frames=" + std::to_string(e.clip_frames) + "\n";
  out += "encoder.bn_eps=" + kv::format_double(e.bn_eps) + "\n";
  return out;
}

inline EncoderConfig encoder_config_from_entries(const kv::Entries& entries) {
  EncoderConfig e;
  bool any = false;
  for (const auto& [key, v] : entries) {
    if (key.rfind("encoder.", 0) != 0) continue;
    any = true;
    const auto k = key.substr(8);
    if (k == "pathway") e.pathway = parse_pathway(v);
    else if (k == "in_channels") e.in_channels = static_cast<int>(kv::to_int(key, v));
    else if (k == "stage_channels") {
      e.stage_channels.clear();
      for (const auto& s : kv::to_list(v)) e.stage_channels.push_back(static_cast<int>(kv::to_int(key, s)));
    } else if (k == "temporal_kernel") {
      e.temporal_kernel.clear();
      for (const auto& s : kv::to_list(v)) e.temporal_kernel.push_back(kv::to_bool(key, s));
    } else if (k == "taps") e.taps = kv::to_list(v);
    else if (k == "width_multiplier") e.width_multiplier = kv::to_double(key, v);
    else if (k == "clip_frames") e.clip_frames = static_cast<int>(kv::to_int(key, v));
    else if (k == "bn_eps") e.bn_eps = kv::to_double(key, v);
    else throw KeyError(key, "unknown encoder key");
  }
  if (!any) throw FormatError("no encoder configuration present");
  e.validate();
  return e;
}

}  // namespace vthcl
