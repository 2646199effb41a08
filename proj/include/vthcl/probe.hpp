#pragma once

// Frozen-encoder linear probing on generator labels, and the alpha x depth
// ablation grid built on top of it.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "vthcl/checkpoint.hpp"
#include "vthcl/dataset_io.hpp"
#include "vthcl/encoder.hpp"
#include "vthcl/synth_data.hpp"
#include "vthcl/trainer.hpp"

namespace vthcl {

enum class ProbeLabel { shape, speed };

inline std::string_view to_string(ProbeLabel l) { return l == ProbeLabel::shape ? "shape" : "speed"; }
inline ProbeLabel parse_probe_label(std::string_view s) {
  if (s == "shape") return ProbeLabel::shape;
  if (s == "speed") return ProbeLabel::speed;
  throw ConfigError("unknown label '" + std::string(s) + "' (expected shape|speed)");
}

// One labelled probe input: the slow-stride clip starting at frame 0.
struct ProbeSample {
  int instance_id = 0;
  int shape = 0;
  int speed = 0;
  Tensor<float> clip;  // [64/tau, H, W, C]

  int label(ProbeLabel l) const { return l == ProbeLabel::shape ? shape : speed; }
};

inline ProbeSample make_probe_sample(const VideoInstance& v, int tau) {
  validate_tempo(tau, 1);
  return {v.instance_id, static_cast<int>(v.shape_label), static_cast<int>(v.speed_label),
          make_tempo_pair(sample_raw_clip(v, 0), tau, 1).slow};
}

// Loads instances one at a time so only the slow clips stay resident.
inline std::vector<ProbeSample> load_probe_samples(const std::filesystem::path& root, int tau) {
  const auto info = read_dataset_info(root);
  std::vector<ProbeSample> out;
  out.reserve(info.num_instances);
  for (int i = 0; i < info.num_instances; ++i) out.push_back(make_probe_sample(load_instance(root, i), tau));
  return out;
}

inline std::vector<ProbeSample> generate_probe_samples(int num, std::uint64_t seed, int tau,
                                                       const GeneratorConfig& cfg = {}) {
  std::vector<ProbeSample> out;
  out.reserve(num);
  for (int i = 0; i < num; ++i) out.push_back(make_probe_sample(generate_instance(i, seed, cfg), tau));
  return out;
}

// GAP of the final tap of the encoder, using running statistics.
template <typename T>
std::vector<T> extract_representation(const Encoder<T>& enc, const Tensor<float>& clip) {
  if (enc.config.taps.empty()) throw ConfigError("encoder has no taps to read a representation from");
  const int s = enc.config.stage_index(enc.config.taps.back());
  auto tr = encoder_forward(enc, pack_clips<T>({&clip}), BnMode::running_stats);
  return pool_batch(tr.outputs[s]).to_vector();
}

// [N, C_final] representations, batched for speed; identical to per-clip calls
// because running-statistics inference treats samples independently.
inline Tensor<double> extract_features(const Encoder<float>& enc, const std::vector<ProbeSample>& samples,
                                       std::size_t batch = 32) {
  if (enc.config.taps.empty()) throw ConfigError("encoder has no taps to read a representation from");
  const int s = enc.config.stage_index(enc.config.taps.back());
  const std::size_t C = enc.config.widths()[s];
  Tensor<double> out({samples.size(), C});
  for (std::size_t i0 = 0; i0 < samples.size(); i0 += batch) {
    std::vector<const Tensor<float>*> clips;
    for (std::size_t i = i0; i < std::min(samples.size(), i0 + batch); ++i) clips.push_back(&samples[i].clip);
    auto tr = encoder_forward(enc, pack_clips<float>(clips), BnMode::running_stats);
    const auto pooled = pool_batch(tr.outputs[s]);
    for (std::size_t k = 0; k < pooled.size(); ++k) out[i0 * C + k] = pooled[k];
  }
  return out;
}

// Per-channel mean intensity of the clip: the trivial appearance baseline.
inline Tensor<double> pixel_mean_features(const std::vector<ProbeSample>& samples) {
  if (samples.empty()) return Tensor<double>({0, 0});
  const std::size_t C = samples.front().clip.dim(3);
  Tensor<double> out({samples.size(), C});
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& clip = samples[i].clip;
    const std::size_t P = clip.size() / C;
    for (std::size_t p = 0; p < P; ++p)
      for (std::size_t c = 0; c < C; ++c) out[i * C + c] += clip[p * C + c];
    for (std::size_t c = 0; c < C; ++c) out[i * C + c] /= static_cast<double>(P);
  }
  return out;
}

struct ProbeConfig {
  int epochs = 30;
  int batch_size = 16;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::uint64_t seed = 0;
  double train_fraction = 2.0 / 3.0;  // split by instance id
};

// Softmax regression on standardized features.
struct LinearClassifier {
  Tensor<double> weight;  // [K, D]
  std::vector<double> bias, mean, scale;

  std::size_t classes() const { return weight.dim(0); }

  int predict(std::span<const double> x) const {
    const std::size_t K = weight.dim(0), D = weight.dim(1);
    int best = 0;
    double best_score = -INFINITY;
    for (std::size_t k = 0; k < K; ++k) {
      double s = bias[k];
      for (std::size_t j = 0; j < D; ++j) s += weight[k * D + j] * (x[j] - mean[j]) * scale[j];
      if (s > best_score) {
        best_score = s;
        best = static_cast<int>(k);
      }
    }
    return best;
  }
};

inline LinearClassifier train_linear_probe(const Tensor<double>& X, const std::vector<int>& y, int num_classes,
                                           const ProbeConfig& cfg) {
  if (X.rank() != 2 || X.dim(0) != y.size()) throw ShapeError("probe: one label per feature row");
  if (X.dim(0) == 0) throw DegenerateInputError("probe: empty training split");
  if (num_classes < 2) throw ConfigError("probe: need at least 2 classes");
  for (int l : y)
    if (l < 0 || l >= num_classes) throw BoundsError("probe: label " + std::to_string(l) + " out of range");
  const std::size_t N = X.dim(0), D = X.dim(1), K = num_classes;
  LinearClassifier c;
  c.weight = Tensor<double>({K, D});
  c.bias.assign(K, 0.0);
  c.mean.assign(D, 0.0);
  c.scale.assign(D, 0.0);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < D; ++j) c.mean[j] += X[i * D + j] / static_cast<double>(N);
  for (std::size_t j = 0; j < D; ++j) {
    double var = 0;
    for (std::size_t i = 0; i < N; ++i) var += (X[i * D + j] - c.mean[j]) * (X[i * D + j] - c.mean[j]);
    const double sd = std::sqrt(var / static_cast<double>(N));
    c.scale[j] = sd > 1e-12 ? 1.0 / sd : 0.0;  // constant features carry no signal
  }
  Tensor<double> Z({N, D});
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < D; ++j) Z[i * D + j] = (X[i * D + j] - c.mean[j]) * c.scale[j];

  Tensor<double> vw({K, D});
  std::vector<double> vb(K, 0.0), logits(K), gw(K * D), gb(K);
  std::vector<std::size_t> order(N);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = make_rng(cfg.seed, {stream::probe});
  const std::size_t B = std::max(1, cfg.batch_size);
  const std::size_t steps_per_epoch = (N + B - 1) / B;
  const std::uint64_t total = steps_per_epoch * static_cast<std::uint64_t>(cfg.epochs);
  std::uint64_t step = 0;
  for (int e = 0; e < cfg.epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t b0 = 0; b0 < N; b0 += B, ++step) {
      const std::size_t b1 = std::min(N, b0 + B);
      std::fill(gw.begin(), gw.end(), 0.0);
      std::fill(gb.begin(), gb.end(), 0.0);
      for (std::size_t r = b0; r < b1; ++r) {
        const double* z = Z.data() + order[r] * D;
        for (std::size_t k = 0; k < K; ++k) {
          double s = c.bias[k];
          for (std::size_t j = 0; j < D; ++j) s += c.weight[k * D + j] * z[j];
          logits[k] = s;
        }
        const double mx = *std::max_element(logits.begin(), logits.end());
        double sum = 0;
        for (auto& l : logits) sum += (l = std::exp(l - mx));
        const int label = y[order[r]];
        for (std::size_t k = 0; k < K; ++k) {
          const double g = logits[k] / sum - (static_cast<int>(k) == label ? 1.0 : 0.0);
          gb[k] += g;
          for (std::size_t j = 0; j < D; ++j) gw[k * D + j] += g * z[j];
        }
      }
      const double inv = 1.0 / static_cast<double>(b1 - b0);
      const double lr = cosine_lr(step, total, cfg.lr);
      for (std::size_t k = 0; k < K; ++k) {
        for (std::size_t j = 0; j < D; ++j) {
          const std::size_t i = k * D + j;
          vw[i] = cfg.momentum * vw[i] + gw[i] * inv + cfg.weight_decay * c.weight[i];
          c.weight[i] -= lr * vw[i];
        }
        vb[k] = cfg.momentum * vb[k] + gb[k] * inv;
        c.bias[k] -= lr * vb[k];
      }
    }
  }
  return c;
}

struct ProbeScore {
  double accuracy = 0;
  std::vector<std::vector<int>> confusion;  // [true][predicted]
};

inline ProbeScore evaluate_probe(const LinearClassifier& c, const Tensor<double>& X, const std::vector<int>& y) {
  ProbeScore s;
  const std::size_t K = c.classes();
  s.confusion.assign(K, std::vector<int>(K, 0));
  if (y.empty()) throw DegenerateInputError("probe: empty test split");
  int correct = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const int p = c.predict(X.row(i));
    s.confusion.at(y[i]).at(p) += 1;
    correct += p == y[i];
  }
  s.accuracy = static_cast<double>(correct) / static_cast<double>(y.size());
  return s;
}

inline double majority_accuracy(const std::vector<int>& train_labels, const std::vector<int>& test_labels,
                                int num_classes) {
  std::vector<int> counts(num_classes, 0);
  for (int l : train_labels) ++counts.at(l);
  const int majority = static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
  const auto hits = std::count(test_labels.begin(), test_labels.end(), majority);
  return test_labels.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(test_labels.size());
}

struct LabelReport {
  ProbeLabel label = ProbeLabel::speed;
  int num_classes = 3;
  ProbeScore encoder;       // probed checkpoint
  ProbeScore random_init;   // same architecture, untrained, identical protocol
  ProbeScore pixel_mean;    // trivial feature, identical protocol
  double majority = 0;
  std::vector<int> support;  // test examples per class
};

struct ProbeReport {
  std::map<std::string, LabelReport> labels;  // "shape", "speed"
  std::string fingerprint;
  std::size_t train_size = 0, test_size = 0;
  std::size_t feature_dim = 0;

  double accuracy(ProbeLabel l) const { return labels.at(std::string(to_string(l))).encoder.accuracy; }
};

struct ProbeSplit {
  std::vector<ProbeSample> train, test;
};

// Deterministic split by instance id; ids never straddle the two sides.
inline ProbeSplit split_by_id(std::vector<ProbeSample> samples, const ProbeConfig& cfg) {
  if (samples.size() < 2) throw DegenerateInputError("probe needs at least 2 labelled instances");
  std::sort(samples.begin(), samples.end(), [](const auto& a, const auto& b) { return a.instance_id < b.instance_id; });
  std::vector<std::size_t> idx(samples.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng = make_rng(cfg.seed, {stream::probe, 1});
  std::shuffle(idx.begin(), idx.end(), rng);
  const std::size_t n_train = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::lround(cfg.train_fraction * samples.size())), 1, samples.size() - 1);
  ProbeSplit s;
  for (std::size_t k = 0; k < idx.size(); ++k) (k < n_train ? s.train : s.test).push_back(samples[idx[k]]);
  return s;
}

inline void check_disjoint(const std::vector<ProbeSample>& train, const std::vector<ProbeSample>& test) {
  std::set<int> ids;
  for (const auto& s : train) ids.insert(s.instance_id);
  for (const auto& s : test)
    if (ids.count(s.instance_id))
      throw ValidationError("label leakage: instance " + std::to_string(s.instance_id) + " is in both splits");
}

namespace detail {

inline std::string fingerprint(const EncoderConfig& enc, const ProbeConfig& cfg, const std::vector<ProbeSample>& train,
                               const std::vector<ProbeSample>& test) {
  std::string text = encoder_config_text(enc);
  text += "probe.epochs=" + std::to_string(cfg.epochs) + "\nprobe.batch_size=" + std::to_string(cfg.batch_size) +
          "\nprobe.lr=" + kv::format_double(cfg.lr) + "\nprobe.momentum=" + kv::format_double(cfg.momentum) +
          "\nprobe.weight_decay=" + kv::format_double(cfg.weight_decay) + "\nprobe.seed=" + std::to_string(cfg.seed);
  for (const auto& s : train) text += " " + std::to_string(s.instance_id);
  text += " |";
  for (const auto& s : test) text += " " + std::to_string(s.instance_id);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(text)));
  return buf;
}

inline ProbeScore probe_feature(const Tensor<double>& train_x, const std::vector<int>& train_y,
                                const Tensor<double>& test_x, const std::vector<int>& test_y, int K,
                                const ProbeConfig& cfg) {
  return evaluate_probe(train_linear_probe(train_x, train_y, K, cfg), test_x, test_y);
}

}  // namespace detail

// Probes `encoder` (frozen) and, under the identical protocol, a random-init
// encoder of the same architecture and the pixel-mean feature.
inline ProbeReport linear_probe(const std::vector<ProbeSample>& train, const std::vector<ProbeSample>& test,
                                const Encoder<float>& encoder, const ProbeConfig& cfg = {},
                                std::uint64_t random_init_seed = 0) {
  check_disjoint(train, test);
  if (train.empty() || test.empty()) throw DegenerateInputError("probe needs non-empty train and test splits");
  ProbeReport rep;
  rep.train_size = train.size();
  rep.test_size = test.size();
  rep.fingerprint = detail::fingerprint(encoder.config, cfg, train, test);

  const auto random_enc = init_encoder<float>(encoder.config, random_init_seed);
  const auto f_train = extract_features(encoder, train), f_test = extract_features(encoder, test);
  const auto r_train = extract_features(random_enc, train), r_test = extract_features(random_enc, test);
  const auto p_train = pixel_mean_features(train), p_test = pixel_mean_features(test);
  rep.feature_dim = f_train.dim(1);

  for (auto label : {ProbeLabel::shape, ProbeLabel::speed}) {
    const int K = label == ProbeLabel::shape ? kNumShapes : kNumSpeeds;
    std::vector<int> ytr, yte;
    for (const auto& s : train) ytr.push_back(s.label(label));
    for (const auto& s : test) yte.push_back(s.label(label));
    LabelReport lr;
    lr.label = label;
    lr.num_classes = K;
    lr.encoder = detail::probe_feature(f_train, ytr, f_test, yte, K, cfg);
    lr.random_init = detail::probe_feature(r_train, ytr, r_test, yte, K, cfg);
    lr.pixel_mean = detail::probe_feature(p_train, ytr, p_test, yte, K, cfg);
    lr.majority = majority_accuracy(ytr, yte, K);
    lr.support.assign(K, 0);
    for (int l : yte) ++lr.support[l];
    rep.labels.emplace(std::string(to_string(label)), std::move(lr));
  }
  return rep;
}

inline nlohmann::json to_json(const ProbeReport& r) {
  nlohmann::json j;
  j["fingerprint"] = r.fingerprint;
  j["train_size"] = r.train_size;
  j["test_size"] = r.test_size;
  j["feature_dim"] = r.feature_dim;
  for (const auto& [name, l] : r.labels) {
    j["labels"][name] = {{"accuracy", l.encoder.accuracy},
                         {"random_init_accuracy", l.random_init.accuracy},
                         {"pixel_mean_accuracy", l.pixel_mean.accuracy},
                         {"majority_accuracy", l.majority},
                         {"support", l.support},
                         {"confusion", l.encoder.confusion},
                         {"random_init_confusion", l.random_init.confusion}};
  }
  return j;
}

inline std::string to_table(const ProbeReport& r) {
  std::string out = "label   encoder  random-init  pixel-mean  majority\n";
  char buf[128];
  for (const auto& [name, l] : r.labels) {
    std::snprintf(buf, sizeof buf, "%-7s %7.2f%% %11.2f%% %10.2f%% %8.2f%%\n", name.c_str(), 100 * l.encoder.accuracy,
                  100 * l.random_init.accuracy, 100 * l.pixel_mean.accuracy, 100 * l.majority);
    out += buf;
  }
  out += "train=" + std::to_string(r.train_size) + " test=" + std::to_string(r.test_size) +
         " fingerprint=" + r.fingerprint + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Ablation over the fast-clip stride coefficient alpha and the number of
// contrastive levels D (D=1: res5; D=2: res4,res5; D=3: res3,res4,res5).

inline std::vector<std::string> taps_for_depth(int depth) {
  static const std::vector<std::string> all{"res3", "res4", "res5"};
  if (depth < 1 || depth > 3) throw ConfigError("depth must be in 1..3, got " + std::to_string(depth));
  return {all.end() - depth, all.end()};
}

struct AblationGrid {
  std::vector<int> alphas{1, 2, 4};
  std::vector<int> depths{1, 2, 3};
  std::vector<std::uint64_t> seeds{0};  // each cell reports the median over seeds
  TrainConfig base;
};

struct AblationCell {
  int alpha = 0;
  int depth = 0;
  std::vector<double> speed_accuracy, shape_accuracy;  // one per seed
  std::vector<ProbeReport> reports;
  std::string error;  // sub-run failure, if any

  bool ok() const { return error.empty(); }
  double median_speed() const;
  double median_shape() const;
};

inline double median(std::vector<double> v) {
  if (v.empty()) return NAN;
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}
inline double AblationCell::median_speed() const { return median(speed_accuracy); }
inline double AblationCell::median_shape() const { return median(shape_accuracy); }

struct AblationResult {
  std::vector<AblationCell> cells;
  // Directional checks on the speed label; absent when a needed cell is missing.
  std::optional<bool> alpha_trend;  // acc(alpha=2) >= acc(alpha=1) at the deepest D
  std::optional<bool> depth_trend;  // acc(D=3) >= acc(D=1) at alpha=2

  const AblationCell* find(int alpha, int depth) const {
    for (const auto& c : cells)
      if (c.alpha == alpha && c.depth == depth && c.ok()) return &c;
    return nullptr;
  }
};

inline TrainConfig ablation_config(const TrainConfig& base, int alpha, int depth, std::uint64_t seed) {
  TrainConfig c = base;
  c.alpha = alpha;
  c.taps = taps_for_depth(depth);
  c.level_weights.clear();
  c.seed = seed;
  c.validate();
  return c;
}

inline void compute_trends(AblationResult& r) {
  int deepest = 0;
  for (const auto& c : r.cells) deepest = std::max(deepest, c.depth);
  if (auto a1 = r.find(1, deepest), a2 = r.find(2, deepest); a1 && a2)
    r.alpha_trend = a2->median_speed() >= a1->median_speed();
  if (auto d1 = r.find(2, 1), d3 = r.find(2, 3); d1 && d3) r.depth_trend = d3->median_speed() >= d1->median_speed();
}

// Runs every (alpha, depth, seed) cell; a failing cell is recorded, not fatal.
// `cell_dir(alpha, depth, seed)` may name an output directory per run.
inline AblationResult ablation_suite(
    const std::vector<VideoInstance>& dataset, const ProbeSplit& probe_split, const AblationGrid& grid,
    const ProbeConfig& probe_cfg = {},
    const std::function<std::filesystem::path(int, int, std::uint64_t)>& cell_dir = {},
    const std::function<void(const AblationCell&)>& on_cell = {}) {
  AblationResult res;
  for (int depth : grid.depths) {
    for (int alpha : grid.alphas) {
      AblationCell cell;
      cell.alpha = alpha;
      cell.depth = depth;
      try {
        for (auto seed : grid.seeds) {
          const auto cfg = ablation_config(grid.base, alpha, depth, seed);
          PretrainOptions opt;
          if (cell_dir) opt.out_dir = cell_dir(alpha, depth, seed);
          auto trained = pretrain(dataset, cfg, opt);
          auto rep = linear_probe(probe_split.train, probe_split.test, trained.state.model.slow, probe_cfg, seed);
          cell.speed_accuracy.push_back(rep.accuracy(ProbeLabel::speed));
          cell.shape_accuracy.push_back(rep.accuracy(ProbeLabel::shape));
          cell.reports.push_back(std::move(rep));
        }
      } catch (const Error& e) {
        cell.error = std::string(e.error_class()) + ": " + e.what();
      }
      if (on_cell) on_cell(cell);
      res.cells.push_back(std::move(cell));
    }
  }
  compute_trends(res);
  return res;
}

inline nlohmann::json to_json(const AblationResult& r) {
  nlohmann::json j;
  j["cells"] = nlohmann::json::array();
  for (const auto& c : r.cells) {
    nlohmann::json cj = {{"alpha", c.alpha}, {"depth", c.depth}, {"taps", taps_for_depth(c.depth)}};
    if (!c.ok()) {
      cj["error"] = c.error;
    } else {
      cj["speed_accuracy"] = c.speed_accuracy;
      cj["shape_accuracy"] = c.shape_accuracy;
      cj["median_speed_accuracy"] = c.median_speed();
      cj["median_shape_accuracy"] = c.median_shape();
      cj["random_init_speed_accuracy"] = c.reports.front().labels.at("speed").random_init.accuracy;
    }
    j["cells"].push_back(cj);
  }
  j["trends"]["alpha"] = r.alpha_trend ? nlohmann::json(*r.alpha_trend) : nlohmann::json();
  j["trends"]["depth"] = r.depth_trend ? nlohmann::json(*r.depth_trend) : nlohmann::json();
  return j;
}

inline std::string to_table(const AblationResult& r) {
  std::string out = "alpha  D  taps            speed    shape\n";
  char buf[160];
  for (const auto& c : r.cells) {
    std::string taps;
    for (const auto& t : taps_for_depth(c.depth)) taps += (taps.empty() ? "" : ",") + t;
    if (c.ok())
      std::snprintf(buf, sizeof buf, "%5d  %d  %-14s %6.2f%%  %6.2f%%\n", c.alpha, c.depth, taps.c_str(),
                    100 * c.median_speed(), 100 * c.median_shape());
    else
      std::snprintf(buf, sizeof buf, "%5d  %d  %-14s failed: %s\n", c.alpha, c.depth, taps.c_str(), c.error.c_str());
    out += buf;
  }
  auto flag = [](const std::optional<bool>& f) { return f ? (*f ? "holds" : "violated") : "n/a"; };
  out += std::string("trend alpha=2 >= alpha=1: ") + flag(r.alpha_trend) + "\n";
  out += std::string("trend D=3 >= D=1: ") + flag(r.depth_trend) + "\n";
  return out;
}

}  // namespace vthcl
