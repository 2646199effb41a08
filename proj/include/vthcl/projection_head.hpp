#pragma once

// Two-layer projection head: linear(in -> in) -> ReLU -> linear(in -> d).

#include <cmath>
#include <cstdint>
#include <map>
#include <string>

#include <Eigen/Core>

#include "vthcl/encoder.hpp"
#include "vthcl/random.hpp"
#include "vthcl/tensor.hpp"

namespace vthcl {

template <typename T>
struct ProjectionHead {
  Tensor<T> w1;  // [hidden, in]
  Tensor<T> b1;  // [hidden]
  Tensor<T> w2;  // [out, hidden]
  Tensor<T> b2;  // [out]

  std::size_t in_dim() const { return w1.dim(1); }
  std::size_t hidden_dim() const { return w1.dim(0); }
  std::size_t out_dim() const { return w2.dim(0); }

  template <typename F>
  void for_each_parameter(F&& f) {
    f("fc1.weight", w1, true);
    f("fc1.bias", b1, true);
    f("fc2.weight", w2, true);
    f("fc2.bias", b2, true);
  }

  template <typename U>
  ProjectionHead<U> cast() const {
    return {w1.template cast<U>(), b1.template cast<U>(), w2.template cast<U>(), b2.template cast<U>()};
  }
};

template <typename T>
ProjectionHead<T> zeros_like(const ProjectionHead<T>& h) {
  return {zeros_like(h.w1), zeros_like(h.b1), zeros_like(h.w2), zeros_like(h.b2)};
}

template <typename T>
ProjectionHead<T> init_head(std::size_t in, std::size_t out, Rng& rng) {
  ProjectionHead<T> h{Tensor<T>({in, in}), Tensor<T>({in}), Tensor<T>({out, in}), Tensor<T>({out})};
  std::normal_distribution<double> d1(0.0, std::sqrt(2.0 / static_cast<double>(in)));
  for (auto& w : h.w1.storage()) w = static_cast<T>(d1(rng));
  std::normal_distribution<double> d2(0.0, std::sqrt(1.0 / static_cast<double>(in)));
  for (auto& w : h.w2.storage()) w = static_cast<T>(d2(rng));
  return h;
}

template <typename T>
struct HeadTrace {
  Tensor<T> input;   // [B, in]
  Tensor<T> hidden;  // [B, hidden], post-ReLU
  Tensor<T> output;  // [B, out]
};

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
HeadTrace<T> head_forward(const ProjectionHead<T>& h, Tensor<T> x) {
  if (x.rank() != 2 || x.dim(1) != h.in_dim())
    throw ShapeError("projection head expects [B," + std::to_string(h.in_dim()) + "], got " +
                     shape_str(x.shape()));
  const Eigen::Index B = x.dim(0), I = h.in_dim(), H = h.hidden_dim(), O = h.out_dim();
  HeadTrace<T> tr;
  tr.hidden = Tensor<T>({x.dim(0), h.hidden_dim()});
  tr.output = Tensor<T>({x.dim(0), h.out_dim()});
  Eigen::Map<const RowMatrix<T>> X(x.data(), B, I), W1(h.w1.data(), H, I), W2(h.w2.data(), O, H);
  Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b1(h.b1.data(), H), b2(h.b2.data(), O);
  Eigen::Map<RowMatrix<T>> Hd(tr.hidden.data(), B, H), Y(tr.output.data(), B, O);
  Hd.noalias() = X * W1.transpose();
  Hd.rowwise() += b1;
  Hd = Hd.cwiseMax(T(0));
  Y.noalias() = Hd * W2.transpose();
  Y.rowwise() += b2;
  tr.input = std::move(x);
  return tr;
}

// Accumulates parameter gradients into `grads`; returns d input.
template <typename T>
Tensor<T> head_backward(const ProjectionHead<T>& h, const HeadTrace<T>& tr, const Tensor<T>& dout,
                        ProjectionHead<T>& grads) {
  require_shape(dout.shape(), tr.output.shape(), "head gradient");
  const Eigen::Index B = tr.input.dim(0), I = h.in_dim(), H = h.hidden_dim(), O = h.out_dim();
  Eigen::Map<const RowMatrix<T>> X(tr.input.data(), B, I), Hd(tr.hidden.data(), B, H);
  Eigen::Map<const RowMatrix<T>> dY(dout.data(), B, O);
  Eigen::Map<const RowMatrix<T>> W1(h.w1.data(), H, I), W2(h.w2.data(), O, H);
  Eigen::Map<RowMatrix<T>> dW1(grads.w1.data(), H, I), dW2(grads.w2.data(), O, H);
  Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> db1(grads.b1.data(), H), db2(grads.b2.data(), O);

  dW2.noalias() += dY.transpose() * Hd;
  db2 += dY.colwise().sum();
  RowMatrix<T> dH = dY * W2;
  dH = (Hd.array() > T(0)).select(dH, T(0));
  dW1.noalias() += dH.transpose() * X;
  db1 += dH.colwise().sum();

  Tensor<T> dx({tr.input.dim(0), h.in_dim()});
  Eigen::Map<RowMatrix<T>> dX(dx.data(), B, I);
  dX.noalias() = dH * W1;
  return dx;
}

// One head per (pathway, tap).
template <typename T>
struct HeadSet {
  std::map<std::string, ProjectionHead<T>> fast;
  std::map<std::string, ProjectionHead<T>> slow;

  std::map<std::string, ProjectionHead<T>>& of(Pathway p) { return p == Pathway::fast ? fast : slow; }
  const std::map<std::string, ProjectionHead<T>>& of(Pathway p) const {
    return p == Pathway::fast ? fast : slow;
  }

  template <typename F>
  void for_each_parameter(F&& f) {
    for (auto p : {Pathway::slow, Pathway::fast})
      for (auto& [tap, head] : of(p))
        head.for_each_parameter([&](const std::string& n, Tensor<T>& t, bool decay) {
          f(std::string(to_string(p)) + "." + tap + "." + n, t, decay);
        });
  }

  template <typename U>
  HeadSet<U> cast() const {
    HeadSet<U> out;
    for (const auto& [k, h] : fast) out.fast.emplace(k, h.template cast<U>());
    for (const auto& [k, h] : slow) out.slow.emplace(k, h.template cast<U>());
    return out;
  }
};

template <typename T>
HeadSet<T> zeros_like(const HeadSet<T>& hs) {
  HeadSet<T> z;
  for (const auto& [k, h] : hs.fast) z.fast.emplace(k, zeros_like(h));
  for (const auto& [k, h] : hs.slow) z.slow.emplace(k, zeros_like(h));
  return z;
}

template <typename T>
HeadSet<T> init_heads(const EncoderConfig& fast_cfg, const EncoderConfig& slow_cfg, std::size_t dim,
                      std::uint64_t seed) {
  HeadSet<T> hs;
  for (const auto* cfg : {&slow_cfg, &fast_cfg}) {
    const auto widths = cfg->widths();
    Rng rng = make_rng(seed, {stream::head_init, static_cast<std::uint64_t>(cfg->pathway)});
    for (const auto& tap : cfg->taps) {
      const std::size_t in = widths[cfg->stage_index(tap)];
      hs.of(cfg->pathway).emplace(tap, init_head<T>(in, dim, rng));
    }
  }
  return hs;
}

}  // namespace vthcl
