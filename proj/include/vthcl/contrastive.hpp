#pragma once

// Temperature-scaled cosine similarity, InfoNCE, the bidirectional
// (fast-query / slow-query) level loss and its weighted sum over depths.

#include <algorithm>
#include <cmath>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "vthcl/memory_bank.hpp"
#include "vthcl/projection_head.hpp"
#include "vthcl/tensor.hpp"

namespace vthcl {

struct LossConfig {
  double temperature = 0.07;
  int num_negatives = 0;  // 0: min(16384, n - 1)
  std::vector<std::string> taps{"res3", "res4", "res5"};
  std::map<std::string, double> level_weights;  // missing taps weigh 1.0

  double weight(const std::string& tap) const {
    auto it = level_weights.find(tap);
    return it == level_weights.end() ? 1.0 : it->second;
  }

  std::size_t negatives_for(std::size_t bank_size) const {
    if (num_negatives > 0) return static_cast<std::size_t>(num_negatives);
    return std::min<std::size_t>(16384, bank_size - 1);
  }

  void validate(std::size_t bank_size) const {
    if (!(temperature > 0)) throw ConfigError("temperature must be positive");
    if (bank_size < 2) throw ConfigError("need at least 2 instances for negatives (n=" +
                                         std::to_string(bank_size) + ")");
    const auto N = negatives_for(bank_size);
    if (N < 1 || N > bank_size - 1)
      throw ConfigError("num_negatives=" + std::to_string(N) + " must lie in [1, n-1=" +
                        std::to_string(bank_size - 1) + "]");
    if (taps.empty()) throw ConfigError("loss needs at least one tap");
    double total = 0;
    for (const auto& tap : taps) {
      const double w = weight(tap);
      if (!(w >= 0)) throw ConfigError("level weight for " + tap + " must be >= 0");
      total += w;
    }
    if (!(total > 0)) throw ConfigError("at least one level weight must be positive");
  }
};

template <typename T>
T l2_norm(std::span<const T> v) {
  T s = 0;
  for (T x : v) s += x * x;
  return std::sqrt(s);
}

// h(u, v) = u.v / (T |u| |v|)
template <typename T>
T similarity(std::span<const T> u, std::span<const T> v, double temperature) {
  if (u.size() != v.size()) throw ShapeError("similarity: dimension mismatch");
  if (!(temperature > 0)) throw ConfigError("temperature must be positive");
  const T nu = l2_norm(u), nv = l2_norm(v);
  if (nu == T(0) || nv == T(0)) throw DegenerateInputError("similarity of a zero vector is undefined");
  T dot = 0;
  for (std::size_t i = 0; i < u.size(); ++i) dot += u[i] * v[i];
  return dot / (static_cast<T>(temperature) * nu * nv);
}

// -log( exp(h(q,p)) / (exp(h(q,p)) + sum_j exp(h(q,n_j))) ), evaluated with
// a shifted log-sum-exp.
template <typename T>
T info_nce(std::span<const T> query, std::span<const T> positive, const Tensor<T>& negatives,
           double temperature) {
  if (negatives.rank() != 2 || negatives.dim(0) == 0)
    throw ConfigError("info_nce needs at least one negative");
  if (negatives.dim(1) != query.size() || positive.size() != query.size())
    throw ShapeError("info_nce: dimension mismatch");
  std::vector<T> logits;
  logits.push_back(similarity(query, positive, temperature));
  for (std::size_t j = 0; j < negatives.dim(0); ++j)
    logits.push_back(similarity(query, negatives.row(j), temperature));
  const T mx = *std::max_element(logits.begin(), logits.end());
  T sum = 0;
  for (T l : logits) sum += std::exp(l - mx);
  return mx + std::log(sum) - logits[0];
}

// Negative bank indices for each query row, per direction.
struct NegativeIndices {
  std::size_t rows = 0, count = 0;
  std::vector<int> idx;  // rows x count

  std::span<const int> row(std::size_t r) const { return {idx.data() + r * count, count}; }
};

struct StepNegatives {
  NegativeIndices fast_queries;  // indices into slow banks
  NegativeIndices slow_queries;  // indices into fast banks
};

inline NegativeIndices sample_negative_sets(std::span<const int> ids, std::size_t bank_size,
                                            std::size_t count, Rng& rng) {
  NegativeIndices out{ids.size(), count, {}};
  out.idx.reserve(ids.size() * count);
  for (int id : ids) {
    auto s = sample_negative_indices(bank_size, id, count, rng);
    out.idx.insert(out.idx.end(), s.begin(), s.end());
  }
  return out;
}

inline StepNegatives sample_step_negatives(std::span<const int> ids, std::size_t bank_size, std::size_t count,
                                           Rng& rng) {
  StepNegatives s;
  s.fast_queries = sample_negative_sets(ids, bank_size, count, rng);
  s.slow_queries = sample_negative_sets(ids, bank_size, count, rng);
  return s;
}

namespace detail {

// InfoNCE for a unit query against unit bank rows. If grad is non-null,
// adds scale * dL/dquery into it.
template <typename T>
T info_nce_unit(const T* z, const MemoryBank<T>& keys, int positive, std::span<const int> negatives,
                T inv_temp, T* grad, T scale, std::vector<T>& logits, T* positive_logit = nullptr) {
  const std::size_t d = keys.dim();
  keys.check_index(positive);
  logits.resize(negatives.size() + 1);
  auto dot = [&](const T* row) {
    T s = 0;
    for (std::size_t k = 0; k < d; ++k) s += z[k] * row[k];
    return s * inv_temp;
  };
  logits[0] = dot(keys.row(positive));
  for (std::size_t j = 0; j < negatives.size(); ++j) {
    keys.check_index(negatives[j]);
    logits[j + 1] = dot(keys.row(negatives[j]));
  }
  const T mx = *std::max_element(logits.begin(), logits.end());
  const T shifted_pos = logits[0] - mx;
  if (positive_logit) *positive_logit = logits[0];
  T sum = 0;
  for (auto& l : logits) {
    l = std::exp(l - mx);  // logits now hold unnormalized probabilities
    sum += l;
  }
  const T loss = std::log(sum) - shifted_pos;
  if (grad) {
    // dL/dz = (sum_j p_j k_j - k_pos) / T, positive included in the sum
    const T c = scale * inv_temp / sum;
    const T* pos = keys.row(positive);
    const T w_pos = c * logits[0] - scale * inv_temp;
    for (std::size_t k = 0; k < d; ++k) grad[k] += w_pos * pos[k];
    for (std::size_t j = 0; j < negatives.size(); ++j) {
      const T w = c * logits[j + 1];
      const T* row = keys.row(negatives[j]);
      for (std::size_t k = 0; k < d; ++k) grad[k] += w * row[k];
    }
  }
  return loss;
}

// z = p / |p| per row, with norms.
template <typename T>
Tensor<T> normalize_rows(const Tensor<T>& p, std::vector<T>& norms) {
  Tensor<T> z(p.shape());
  const std::size_t B = p.dim(0), d = p.dim(1);
  norms.resize(B);
  for (std::size_t i = 0; i < B; ++i) {
    const T n = l2_norm(p.row(i));
    if (n == T(0)) throw DegenerateInputError("zero embedding at batch row " + std::to_string(i));
    norms[i] = n;
    for (std::size_t k = 0; k < d; ++k) z[i * d + k] = p[i * d + k] / n;
  }
  return z;
}

// Chain rule through row normalization: dp = (dz - z (z.dz)) / |p|.
template <typename T>
void normalize_rows_backward(const Tensor<T>& z, const std::vector<T>& norms, Tensor<T>& grad) {
  const std::size_t B = z.dim(0), d = z.dim(1);
  for (std::size_t i = 0; i < B; ++i) {
    T proj = 0;
    for (std::size_t k = 0; k < d; ++k) proj += z[i * d + k] * grad[i * d + k];
    for (std::size_t k = 0; k < d; ++k) grad[i * d + k] = (grad[i * d + k] - z[i * d + k] * proj) / norms[i];
  }
}

}  // namespace detail

template <typename T>
struct LevelLoss {
  T fast_query = 0;  // L_f: fast queries against the slow bank
  T slow_query = 0;  // L_s: slow queries against the fast bank
  Tensor<T> z_fast, z_slow;        // unit embeddings (for bank updates)
  Tensor<T> grad_fast, grad_slow;  // dL/d(pre-normalization embedding)
  std::vector<T> positive_logits_fast, positive_logits_slow;  // h(q, k+) per row, for diagnostics

  T total() const { return fast_query + slow_query; }
};

// Mean-over-batch L_f + L_s for one depth. `emb_*` are head outputs before
// normalization; positives are the bank rows at `ids`.
template <typename T>
LevelLoss<T> bidirectional_level_loss(const Tensor<T>& emb_fast, const Tensor<T>& emb_slow,
                                      const MemoryBank<T>& bank_fast, const MemoryBank<T>& bank_slow,
                                      std::span<const int> ids, const StepNegatives& negatives,
                                      double temperature, bool want_grad = true) {
  if (emb_fast.rank() != 2 || emb_fast.shape() != emb_slow.shape())
    throw ShapeError("level loss: fast/slow embeddings must both be [B,d]");
  const std::size_t B = emb_fast.dim(0), d = emb_fast.dim(1);
  if (B != ids.size()) throw ShapeError("level loss: one id per batch row");
  if (bank_fast.dim() != d || bank_slow.dim() != d) throw ShapeError("level loss: bank dimension mismatch");
  if (negatives.fast_queries.rows != B || negatives.slow_queries.rows != B)
    throw ShapeError("level loss: negatives must have one row per query");
  if (negatives.fast_queries.count == 0 || negatives.slow_queries.count == 0)
    throw ConfigError("level loss needs at least one negative");
  if (!(temperature > 0)) throw ConfigError("temperature must be positive");

  LevelLoss<T> out;
  std::vector<T> norm_f, norm_s, logits;
  out.z_fast = detail::normalize_rows(emb_fast, norm_f);
  out.z_slow = detail::normalize_rows(emb_slow, norm_s);
  if (want_grad) {
    out.grad_fast = Tensor<T>(emb_fast.shape());
    out.grad_slow = Tensor<T>(emb_slow.shape());
  }
  const T inv_temp = static_cast<T>(1.0 / temperature);
  const T scale = T(1) / static_cast<T>(B);
  out.positive_logits_fast.resize(B);
  out.positive_logits_slow.resize(B);
  T sum_f = 0, sum_s = 0;
  for (std::size_t i = 0; i < B; ++i) {
    sum_f += detail::info_nce_unit(out.z_fast.data() + i * d, bank_slow, ids[i], negatives.fast_queries.row(i),
                                   inv_temp, want_grad ? out.grad_fast.data() + i * d : nullptr, scale, logits,
                                   &out.positive_logits_fast[i]);
    sum_s += detail::info_nce_unit(out.z_slow.data() + i * d, bank_fast, ids[i], negatives.slow_queries.row(i),
                                   inv_temp, want_grad ? out.grad_slow.data() + i * d : nullptr, scale, logits,
                                   &out.positive_logits_slow[i]);
  }
  out.fast_query = sum_f / static_cast<T>(B);
  out.slow_query = sum_s / static_cast<T>(B);
  if (want_grad) {
    detail::normalize_rows_backward(out.z_fast, norm_f, out.grad_fast);
    detail::normalize_rows_backward(out.z_slow, norm_s, out.grad_slow);
  }
  return out;
}

// Pooled encoder features per tap, [B, C_k].
template <typename T>
using PooledPyramid = std::map<std::string, Tensor<T>>;

template <typename T>
struct HierarchicalLoss {
  T total = 0;
  std::vector<std::string> taps;
  std::map<std::string, LevelLoss<T>> levels;
};

// Gradients produced by hierarchical_loss: head parameters accumulate,
// pooled-feature gradients are written per tap.
template <typename T>
struct HierarchicalGrads {
  HeadSet<T> heads;
  PooledPyramid<T> pooled_fast, pooled_slow;
};

// L_total = sum_k lambda_k (L_f^k + L_s^k) over config.taps.
template <typename T>
HierarchicalLoss<T> hierarchical_loss(const PooledPyramid<T>& fast, const PooledPyramid<T>& slow,
                                      const HeadSet<T>& heads, const BankSet<T>& banks,
                                      std::span<const int> ids, const StepNegatives& negatives,
                                      const LossConfig& config, HierarchicalGrads<T>* grads = nullptr) {
  if (config.taps.empty()) throw ConfigError("loss needs at least one tap");
  HierarchicalLoss<T> out;
  out.taps = config.taps;
  for (const auto& tap : config.taps) {
    auto need = [&](bool ok, const std::string& what) {
      if (!ok) throw ConfigError("tap '" + tap + "' missing from " + what);
    };
    need(fast.count(tap) && slow.count(tap), "feature pyramids");
    need(heads.fast.count(tap) && heads.slow.count(tap), "projection heads");
    need(banks.fast.count(tap) && banks.slow.count(tap), "memory banks");
    const auto& hf = heads.fast.at(tap);
    const auto& hs = heads.slow.at(tap);
    auto trace_f = head_forward(hf, fast.at(tap));
    auto trace_s = head_forward(hs, slow.at(tap));
    auto level = bidirectional_level_loss(trace_f.output, trace_s.output, banks.fast.at(tap), banks.slow.at(tap),
                                          ids, negatives, config.temperature, grads != nullptr);
    const T lambda = static_cast<T>(config.weight(tap));
    out.total += lambda * level.total();
    if (grads) {
      for (auto* g : {&level.grad_fast, &level.grad_slow})
        for (auto& v : g->storage()) v *= lambda;
      grads->pooled_fast[tap] = head_backward(hf, trace_f, level.grad_fast, grads->heads.fast.at(tap));
      grads->pooled_slow[tap] = head_backward(hs, trace_s, level.grad_slow, grads->heads.slow.at(tap));
    }
    out.levels.emplace(tap, std::move(level));
  }
  return out;
}

}  // namespace vthcl
