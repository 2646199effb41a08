#pragma once

// Tiny 3D convolutional encoder with named depth taps.
//
// Stage s (named "res{s+2}") is conv(kt x 3 x 3, stride 1x2x2) -> batch norm
// -> ReLU, so spatial size halves per stage and frame count is preserved:
//
//   input  [Cin, T, H, W]
//   res2   [c0,  T, ceil(H/2),  ceil(W/2)]
//   res3   [c1,  T, ceil(H/4),  ceil(W/4)]
//   res4   [c2,  T, ceil(H/8),  ceil(W/8)]
//   res5   [c3,  T, ceil(H/16), ceil(W/16)]
//
// Stage widths are round(stage_channels[s] * width_multiplier), at least 1.

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "vthcl/conv3d.hpp"
#include "vthcl/errors.hpp"
#include "vthcl/random.hpp"
#include "vthcl/tensor.hpp"

namespace vthcl {

enum class Pathway : int { slow = 0, fast = 1 };

inline std::string_view to_string(Pathway p) { return p == Pathway::slow ? "slow" : "fast"; }
inline Pathway parse_pathway(std::string_view s) {
  if (s == "slow") return Pathway::slow;
  if (s == "fast") return Pathway::fast;
  throw ConfigError("unknown pathway '" + std::string(s) + "' (expected slow|fast)");
}

inline std::string stage_name(int stage) { return "res" + std::to_string(stage + 2); }

struct EncoderConfig {
  Pathway pathway = Pathway::slow;
  int in_channels = 3;
  std::vector<int> stage_channels{8, 16, 32, 64};
  std::vector<bool> temporal_kernel{true, true, true, true};
  std::vector<std::string> taps{"res3", "res4", "res5"};
  double width_multiplier = 1.0;
  int clip_frames = 0;  // expected input frames; 0 accepts any
  double bn_eps = 1e-5;

  int num_stages() const { return static_cast<int>(stage_channels.size()); }

  std::vector<int> widths() const {
    std::vector<int> w;
    for (int c : stage_channels)
      w.push_back(std::max(1, static_cast<int>(std::lround(c * width_multiplier))));
    return w;
  }

  int stage_index(std::string_view name) const {
    for (int s = 0; s < num_stages(); ++s)
      if (stage_name(s) == name) return s;
    throw ConfigError("unknown tap '" + std::string(name) + "'");
  }

  std::vector<int> tap_indices() const {
    std::vector<int> idx;
    for (const auto& t : taps) idx.push_back(stage_index(t));
    return idx;
  }

  int kernel_frames(int stage) const { return temporal_kernel.at(stage) ? 3 : 1; }

  void validate() const {
    if (in_channels < 1) throw ConfigError("encoder: in_channels must be >= 1");
    if (stage_channels.empty() || stage_channels.size() > 4)
      throw ConfigError("encoder: need 1..4 stages");
    for (int c : stage_channels)
      if (c < 1) throw ConfigError("encoder: stage widths must be >= 1");
    if (temporal_kernel.size() != stage_channels.size())
      throw ConfigError("encoder: temporal_kernel needs one flag per stage");
    if (taps.empty()) throw ConfigError("encoder: taps must be non-empty");
    int prev = -1;
    for (int s : tap_indices()) {
      if (s <= prev) throw ConfigError("encoder: taps must be ordered by depth and unique");
      prev = s;
    }
    if (!(width_multiplier > 0 && width_multiplier <= 1))
      throw ConfigError("encoder: width_multiplier must be in (0, 1]");
    if (clip_frames < 0) throw ConfigError("encoder: clip_frames must be >= 0");
    if (!(bn_eps > 0)) throw ConfigError("encoder: bn_eps must be positive");
  }
};

// Learnable encoder parameters excluding batch-norm running statistics.
inline std::int64_t count_params(const EncoderConfig& cfg) {
  cfg.validate();
  const auto w = cfg.widths();
  std::int64_t n = 0;
  int in = cfg.in_channels;
  for (int s = 0; s < cfg.num_stages(); ++s) {
    n += static_cast<std::int64_t>(w[s]) * in * cfg.kernel_frames(s) * 9;  // conv
    n += 2 * w[s];                                                         // bn affine
    in = w[s];
  }
  return n;
}

template <typename T>
struct ConvStage {
  Tensor<T> weight;  // [out, in, kt, 3, 3]
  Tensor<T> gamma;   // [out]
  Tensor<T> beta;    // [out]
  Tensor<T> running_mean;
  Tensor<T> running_var;

  std::size_t out_ch() const { return weight.dim(0); }
  std::size_t in_ch() const { return weight.dim(1); }
  std::size_t kt() const { return weight.dim(2); }
};

template <typename T>
struct Encoder {
  EncoderConfig config;
  std::vector<ConvStage<T>> stages;

  // f(name, tensor, weight_decay_applies)
  template <typename F>
  void for_each_parameter(F&& f) {
    for (std::size_t s = 0; s < stages.size(); ++s) {
      const auto n = stage_name(static_cast<int>(s));
      f(n + ".conv.weight", stages[s].weight, true);
      f(n + ".bn.weight", stages[s].gamma, false);
      f(n + ".bn.bias", stages[s].beta, false);
    }
  }
  template <typename F>
  void for_each_parameter(F&& f) const {
    const_cast<Encoder*>(this)->for_each_parameter(
        [&](const std::string& n, Tensor<T>& t, bool d) { f(n, static_cast<const Tensor<T>&>(t), d); });
  }
  template <typename F>
  void for_each_buffer(F&& f) {
    for (std::size_t s = 0; s < stages.size(); ++s) {
      const auto n = stage_name(static_cast<int>(s));
      f(n + ".bn.running_mean", stages[s].running_mean);
      f(n + ".bn.running_var", stages[s].running_var);
    }
  }
  template <typename F>
  void for_each_buffer(F&& f) const {
    const_cast<Encoder*>(this)->for_each_buffer(
        [&](const std::string& n, Tensor<T>& t) { f(n, static_cast<const Tensor<T>&>(t)); });
  }

  template <typename U>
  Encoder<U> cast() const {
    Encoder<U> out;
    out.config = config;
    for (const auto& st : stages)
      out.stages.push_back({st.weight.template cast<U>(), st.gamma.template cast<U>(),
                            st.beta.template cast<U>(), st.running_mean.template cast<U>(),
                            st.running_var.template cast<U>()});
    return out;
  }
};

// Same structure, every tensor zero. Used as a gradient accumulator.
template <typename T>
Encoder<T> zeros_like(const Encoder<T>& e) {
  Encoder<T> z;
  z.config = e.config;
  for (const auto& st : e.stages)
    z.stages.push_back({zeros_like(st.weight), zeros_like(st.gamma), zeros_like(st.beta),
                        zeros_like(st.running_mean), zeros_like(st.running_var)});
  return z;
}

// Kaiming-normal conv weights, unit gamma, zero beta.
template <typename T>
Encoder<T> init_encoder(const EncoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Encoder<T> e;
  e.config = cfg;
  Rng rng = make_rng(seed, {stream::encoder_init, static_cast<std::uint64_t>(cfg.pathway)});
  const auto widths = cfg.widths();
  std::size_t in = cfg.in_channels;
  for (int s = 0; s < cfg.num_stages(); ++s) {
    const std::size_t out = widths[s], kt = cfg.kernel_frames(s);
    ConvStage<T> st;
    st.weight = Tensor<T>({out, in, kt, 3, 3});
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(in * kt * 9)));
    for (auto& w : st.weight.storage()) w = static_cast<T>(dist(rng));
    st.gamma = Tensor<T>({out}, T(1));
    st.beta = Tensor<T>({out}, T(0));
    st.running_mean = Tensor<T>({out}, T(0));
    st.running_var = Tensor<T>({out}, T(1));
    e.stages.push_back(std::move(st));
    in = out;
  }
  return e;
}

enum class BnMode { batch_stats, running_stats };

// Everything the backward pass needs from one batched forward pass.
template <typename T>
struct EncoderTrace {
  BnMode mode = BnMode::batch_stats;
  Tensor<T> input;                   // [B, Cin, T, H, W]
  std::vector<conv::Geometry> geometry;
  std::vector<Tensor<T>> outputs;    // per stage, post-ReLU [B, C, T, H', W']
  std::vector<Tensor<T>> normalized; // per stage, pre-affine
  std::vector<std::vector<T>> mean, var, inv_std;  // per stage, per channel

  std::size_t batch() const { return input.dim(0); }
};

// [T, H, W, C] clips -> [B, C, T, H, W].
template <typename T>
Tensor<T> pack_clips(const std::vector<const Tensor<float>*>& clips) {
  if (clips.empty()) throw ShapeError("empty clip batch");
  const Shape s = clips.front()->shape();
  if (s.size() != 4) throw ShapeError("clip must be [T,H,W,C], got " + shape_str(s));
  const std::size_t Tn = s[0], H = s[1], W = s[2], C = s[3];
  Tensor<T> out({clips.size(), C, Tn, H, W});
  for (std::size_t b = 0; b < clips.size(); ++b) {
    require_shape(clips[b]->shape(), s, "clip batch");
    const float* src = clips[b]->data();
    T* dst = out.data() + b * C * Tn * H * W;
    for (std::size_t t = 0; t < Tn; ++t)
      for (std::size_t p = 0; p < H * W; ++p)
        for (std::size_t c = 0; c < C; ++c)
          dst[(c * Tn + t) * H * W + p] = static_cast<T>(src[(t * H * W + p) * C + c]);
  }
  return out;
}

template <typename T>
EncoderTrace<T> encoder_forward(const Encoder<T>& enc, Tensor<T> input, BnMode mode) {
  const auto& cfg = enc.config;
  if (input.rank() != 5) throw ShapeError("encoder input must be [B,C,T,H,W], got " + shape_str(input.shape()));
  if (input.dim(1) != static_cast<std::size_t>(cfg.in_channels))
    throw ShapeError("encoder expects " + std::to_string(cfg.in_channels) + " input channels, got " +
                     std::to_string(input.dim(1)));
  if (cfg.clip_frames > 0 && input.dim(2) != static_cast<std::size_t>(cfg.clip_frames))
    throw ShapeError(std::string(to_string(cfg.pathway)) + " encoder expects " +
                     std::to_string(cfg.clip_frames) + " frames, got " + std::to_string(input.dim(2)));
  if (input.dim(2) < 1 || input.dim(3) < 1 || input.dim(4) < 1) throw ShapeError("empty clip");

  EncoderTrace<T> tr;
  tr.mode = mode;
  tr.input = std::move(input);
  const std::size_t B = tr.input.dim(0);
  std::size_t frames = tr.input.dim(2), h = tr.input.dim(3), w = tr.input.dim(4);
  AlignedVector<T> col;

  for (std::size_t s = 0; s < enc.stages.size(); ++s) {
    const auto& st = enc.stages[s];
    const Tensor<T>& x = s == 0 ? tr.input : tr.outputs[s - 1];
    conv::Geometry g{st.in_ch(), st.out_ch(), st.kt(), frames, h, w};
    if (x.dim(1) != g.in_ch) throw ShapeError("stage channel mismatch");
    const std::size_t C = g.out_ch, P = g.out_positions();
    Tensor<T> y({B, C, frames, g.out_h(), g.out_w()});
    col.resize(g.patch() * P);
    for (std::size_t b = 0; b < B; ++b) {
      conv::im2col(g, x.data() + b * g.in_size(), col.data());
      conv::forward(g, st.weight.data(), col.data(), y.data() + b * g.out_size());
    }

    std::vector<T> mean(C), var(C), inv_std(C);
    if (mode == BnMode::batch_stats) {
      const double count = static_cast<double>(B * P);
      for (std::size_t c = 0; c < C; ++c) {
        double sum = 0;
        for (std::size_t b = 0; b < B; ++b) {
          const T* yc = y.data() + (b * C + c) * P;
          for (std::size_t p = 0; p < P; ++p) sum += yc[p];
        }
        const double mu = sum / count;
        double sq = 0;
        for (std::size_t b = 0; b < B; ++b) {
          const T* yc = y.data() + (b * C + c) * P;
          for (std::size_t p = 0; p < P; ++p) sq += (yc[p] - mu) * (yc[p] - mu);
        }
        mean[c] = static_cast<T>(mu);
        var[c] = static_cast<T>(sq / count);
      }
    } else {
      mean = st.running_mean.to_vector();
      var = st.running_var.to_vector();
    }
    for (std::size_t c = 0; c < C; ++c)
      inv_std[c] = T(1) / std::sqrt(var[c] + static_cast<T>(cfg.bn_eps));

    Tensor<T> xhat(y.shape());
    Tensor<T> out(y.shape());
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t off = (b * C + c) * P;
        const T mu = mean[c], is = inv_std[c], ga = st.gamma[c], be = st.beta[c];
        for (std::size_t p = 0; p < P; ++p) {
          const T n = (y[off + p] - mu) * is;
          xhat[off + p] = n;
          const T z = ga * n + be;
          out[off + p] = z > T(0) ? z : T(0);
        }
      }
    }
    tr.geometry.push_back(g);
    tr.normalized.push_back(std::move(xhat));
    tr.outputs.push_back(std::move(out));
    tr.mean.push_back(std::move(mean));
    tr.var.push_back(std::move(var));
    tr.inv_std.push_back(std::move(inv_std));
    h = g.out_h();
    w = g.out_w();
  }
  return tr;
}

// Exponential moving update of running statistics from a batch-stats trace
// (unbiased variance, as in common frameworks).
template <typename T>
void update_running_stats(Encoder<T>& enc, const EncoderTrace<T>& tr, double momentum) {
  if (tr.mode != BnMode::batch_stats) return;
  for (std::size_t s = 0; s < enc.stages.size(); ++s) {
    const auto& g = tr.geometry[s];
    const double count = static_cast<double>(tr.batch() * g.out_positions());
    const double correction = count > 1 ? count / (count - 1) : 1.0;
    auto& st = enc.stages[s];
    for (std::size_t c = 0; c < st.out_ch(); ++c) {
      st.running_mean[c] = static_cast<T>((1 - momentum) * st.running_mean[c] + momentum * tr.mean[s][c]);
      st.running_var[c] =
          static_cast<T>((1 - momentum) * st.running_var[c] + momentum * tr.var[s][c] * correction);
    }
  }
}

// Backpropagate per-stage output gradients (empty tensor = no gradient at
// that stage) into `grads`, which accumulates.
template <typename T>
void encoder_backward(const Encoder<T>& enc, const EncoderTrace<T>& tr,
                      const std::vector<Tensor<T>>& output_grads, Encoder<T>& grads) {
  const std::size_t S = enc.stages.size();
  if (output_grads.size() != S) throw ShapeError("encoder_backward: one gradient slot per stage");
  int deepest = -1;
  for (std::size_t s = 0; s < S; ++s)
    if (!output_grads[s].empty()) deepest = static_cast<int>(s);
  if (deepest < 0) return;

  const std::size_t B = tr.batch();
  Tensor<T> carried;  // gradient w.r.t. output of the current stage from deeper stages
  AlignedVector<T> col, dcol;
  for (int s = deepest; s >= 0; --s) {
    const auto& st = enc.stages[s];
    auto& gst = grads.stages[s];
    const auto& g = tr.geometry[s];
    const std::size_t C = g.out_ch, P = g.out_positions();
    const Tensor<T>& out = tr.outputs[s];
    const Tensor<T>& xhat = tr.normalized[s];

    Tensor<T> dz(out.shape());
    const bool has_own = !output_grads[s].empty();
    const bool has_carried = !carried.empty();
    if (has_own) require_shape(output_grads[s].shape(), out.shape(), "stage gradient");
    for (std::size_t i = 0; i < dz.size(); ++i) {
      T v = T(0);
      if (has_own) v += output_grads[s][i];
      if (has_carried) v += carried[i];
      dz[i] = out[i] > T(0) ? v : T(0);
    }

    // batch norm
    Tensor<T> dy(out.shape());
    const double count = static_cast<double>(B * P);
    for (std::size_t c = 0; c < C; ++c) {
      double sum_dz = 0, sum_dz_xhat = 0;
      for (std::size_t b = 0; b < B; ++b) {
        const std::size_t off = (b * C + c) * P;
        for (std::size_t p = 0; p < P; ++p) {
          sum_dz += dz[off + p];
          sum_dz_xhat += dz[off + p] * xhat[off + p];
        }
      }
      gst.gamma[c] += static_cast<T>(sum_dz_xhat);
      gst.beta[c] += static_cast<T>(sum_dz);
      const T ga = st.gamma[c], is = tr.inv_std[s][c];
      if (tr.mode == BnMode::batch_stats) {
        const T mean_dxhat = static_cast<T>(ga * sum_dz / count);
        const T mean_dxhat_xhat = static_cast<T>(ga * sum_dz_xhat / count);
        for (std::size_t b = 0; b < B; ++b) {
          const std::size_t off = (b * C + c) * P;
          for (std::size_t p = 0; p < P; ++p)
            dy[off + p] = is * (ga * dz[off + p] - mean_dxhat - xhat[off + p] * mean_dxhat_xhat);
        }
      } else {
        for (std::size_t b = 0; b < B; ++b) {
          const std::size_t off = (b * C + c) * P;
          for (std::size_t p = 0; p < P; ++p) dy[off + p] = is * ga * dz[off + p];
        }
      }
    }

    // convolution
    const Tensor<T>& x = s == 0 ? tr.input : tr.outputs[s - 1];
    col.resize(g.patch() * P);
    Tensor<T> dx;
    if (s > 0) {
      dx = Tensor<T>(x.shape());
      dcol.resize(g.patch() * P);
    }
    for (std::size_t b = 0; b < B; ++b) {
      conv::im2col(g, x.data() + b * g.in_size(), col.data());
      conv::backward_weight(g, dy.data() + b * g.out_size(), col.data(), gst.weight.data());
      if (s > 0) {
        conv::backward_col(g, st.weight.data(), dy.data() + b * g.out_size(), dcol.data());
        conv::col2im_add(g, dcol.data(), dx.data() + b * g.in_size());
      }
    }
    carried = std::move(dx);
  }
}

// Mean over every axis after the channel axis of one activation [C, ...].
template <typename T>
std::vector<T> global_avg_pool(const Tensor<T>& activation) {
  if (activation.rank() < 2) throw ShapeError("global_avg_pool expects [C, ...]");
  const std::size_t C = activation.dim(0);
  if (C == 0 || activation.size() == 0) throw ShapeError("global_avg_pool: empty activation");
  const std::size_t P = activation.size() / C;
  std::vector<T> out(C);
  for (std::size_t c = 0; c < C; ++c) {
    T sum = T(0);
    const T* a = activation.data() + c * P;
    for (std::size_t p = 0; p < P; ++p) sum += a[p];
    out[c] = sum / static_cast<T>(P);
  }
  return out;
}

// Batched pooling of one stage output [B, C, ...] -> [B, C].
template <typename T>
Tensor<T> pool_batch(const Tensor<T>& activation) {
  const std::size_t B = activation.dim(0), C = activation.dim(1);
  const std::size_t P = activation.size() / (B * C);
  Tensor<T> out({B, C});
  for (std::size_t i = 0; i < B * C; ++i) {
    T sum = T(0);
    const T* a = activation.data() + i * P;
    for (std::size_t p = 0; p < P; ++p) sum += a[p];
    out[i] = sum / static_cast<T>(P);
  }
  return out;
}

// Gradient of pool_batch: spread d[B, C] uniformly over the pooled axes.
template <typename T>
Tensor<T> unpool_batch(const Tensor<T>& dpooled, const Shape& activation_shape) {
  Tensor<T> out(activation_shape);
  const std::size_t B = activation_shape[0], C = activation_shape[1];
  const std::size_t P = out.size() / (B * C);
  for (std::size_t i = 0; i < B * C; ++i) {
    const T v = dpooled[i] / static_cast<T>(P);
    std::fill_n(out.data() + i * P, P, v);
  }
  return out;
}

template <typename T>
struct FeaturePyramid {
  std::map<std::string, Tensor<T>> activations;  // tap -> [C, T', H', W']
  std::map<std::string, std::vector<T>> pooled;  // tap -> [C]
};

// Single-clip inference with frozen running statistics.
template <typename T>
FeaturePyramid<T> encode(const Tensor<float>& clip, const Encoder<T>& enc) {
  auto tr = encoder_forward(enc, pack_clips<T>({&clip}), BnMode::running_stats);
  FeaturePyramid<T> fp;
  for (const auto& tap : enc.config.taps) {
    const int s = enc.config.stage_index(tap);
    Tensor<T> a = tr.outputs[s];
    Shape shape(a.shape().begin() + 1, a.shape().end());
    a.reshape(shape);
    fp.pooled[tap] = global_avg_pool(a);
    fp.activations[tap] = std::move(a);
  }
  return fp;
}

}  // namespace vthcl
