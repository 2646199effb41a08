#pragma once

// Momentum-averaged embedding store, one per (pathway, tap).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "vthcl/encoder.hpp"
#include "vthcl/errors.hpp"
#include "vthcl/random.hpp"
#include "vthcl/tensor.hpp"

namespace vthcl {

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ULL;
  return h;
}

template <typename T>
class MemoryBank {
 public:
  MemoryBank() = default;

  // Rows are i.i.d. uniform directions on the unit sphere.
  static MemoryBank init(std::size_t n, std::size_t d, std::uint64_t seed, double momentum = 0.5,
                         Pathway pathway = Pathway::slow, std::string level = "res5") {
    if (n < 1 || d < 1) throw ConfigError("memory bank needs n >= 1 and d >= 1");
    MemoryBank b;
    b.entries_ = Tensor<T>({n, d});
    b.seed_ = seed;
    b.pathway_ = pathway;
    b.level_ = std::move(level);
    b.set_momentum(momentum);
    Rng rng = make_rng(seed, {stream::bank_init, static_cast<std::uint64_t>(pathway), fnv1a(b.level_)});
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> v(d);
    for (std::size_t i = 0; i < n; ++i) {
      double norm2 = 0;
      do {
        norm2 = 0;
        for (auto& x : v) {
          x = normal(rng);
          norm2 += x * x;
        }
      } while (norm2 == 0);
      const double inv = 1.0 / std::sqrt(norm2);
      for (std::size_t k = 0; k < d; ++k) b.entries_[i * d + k] = static_cast<T>(v[k] * inv);
    }
    return b;
  }

  std::size_t size() const { return entries_.empty() ? 0 : entries_.dim(0); }
  std::size_t dim() const { return entries_.empty() ? 0 : entries_.dim(1); }
  double momentum() const { return momentum_; }
  std::uint64_t seed() const { return seed_; }
  Pathway pathway() const { return pathway_; }
  const std::string& level() const { return level_; }
  const Tensor<T>& entries() const { return entries_; }

  void set_momentum(double m) {
    if (!(m >= 0 && m <= 1)) throw ConfigError("bank momentum must be in [0,1]");
    momentum_ = m;
  }
  // Replace all rows (checkpoint restore).
  void assign(Tensor<T> entries) {
    require_shape(entries.shape(), entries_.shape(), "memory bank entries");
    entries_ = std::move(entries);
  }

  const T* row(std::size_t i) const { return entries_.data() + i * dim(); }

  void check_index(long long i) const {
    if (i < 0 || static_cast<std::size_t>(i) >= size())
      throw LookupError("bank index " + std::to_string(i) + " outside [0," + std::to_string(size()) + ")");
  }

  // Copies of rows; the bank is never aliased.
  Tensor<T> lookup(std::span<const int> indices) const {
    Tensor<T> out({indices.size(), dim()});
    for (std::size_t r = 0; r < indices.size(); ++r) {
      check_index(indices[r]);
      std::copy_n(row(indices[r]), dim(), out.data() + r * dim());
    }
    return out;
  }

  // row_i <- normalize(m * row_i + (1 - m) * new_i). With renormalize off the
  // raw convex combination is stored.
  void update(std::span<const int> indices, const Tensor<T>& embeddings, bool renormalize = true) {
    if (embeddings.rank() != 2 || embeddings.dim(0) != indices.size() || embeddings.dim(1) != dim())
      throw ShapeError("bank update expects [" + std::to_string(indices.size()) + "," + std::to_string(dim()) +
                       "], got " + shape_str(embeddings.shape()));
    std::unordered_set<int> seen;
    for (int i : indices) {
      check_index(i);
      if (!seen.insert(i).second) throw ValidationError("duplicate index " + std::to_string(i) + " in bank update");
    }
    if (momentum_ == 1.0) return;
    const std::size_t d = dim();
    const T m = static_cast<T>(momentum_), one_minus = static_cast<T>(1.0 - momentum_);
    for (std::size_t r = 0; r < indices.size(); ++r) {
      T* dst = entries_.data() + indices[r] * d;
      const T* src = embeddings.data() + r * d;
      if (momentum_ == 0.0) {  // embeddings are unit by contract; store them verbatim
        std::copy_n(src, d, dst);
        continue;
      }
      for (std::size_t k = 0; k < d; ++k) dst[k] = m * dst[k] + one_minus * src[k];
      if (renormalize) {
        T norm2 = 0;
        for (std::size_t k = 0; k < d; ++k) norm2 += dst[k] * dst[k];
        if (norm2 > T(0)) {
          const T inv = T(1) / std::sqrt(norm2);
          for (std::size_t k = 0; k < d; ++k) dst[k] *= inv;
        }
      }
    }
  }

 private:
  Tensor<T> entries_;
  double momentum_ = 0.5;
  std::uint64_t seed_ = 0;
  Pathway pathway_ = Pathway::slow;
  std::string level_;
};

// `count` distinct indices drawn uniformly from [0, n) \ {exclude}.
inline std::vector<int> sample_negative_indices(std::size_t n, int exclude, std::size_t count, Rng& rng) {
  const std::size_t pool = (exclude >= 0 && static_cast<std::size_t>(exclude) < n) ? n - 1 : n;
  if (count > pool)
    throw ConfigError("cannot sample " + std::to_string(count) + " negatives from " + std::to_string(pool) +
                      " candidates");
  auto map_index = [&](std::size_t k) {  // k in [0, pool) -> bank index, skipping `exclude`
    return static_cast<int>((exclude >= 0 && k >= static_cast<std::size_t>(exclude)) ? k + 1 : k);
  };
  std::vector<int> out;
  out.reserve(count);
  if (count * 4 < pool) {
    // Floyd's algorithm: O(count) draws.
    std::unordered_set<std::size_t> chosen;
    for (std::size_t j = pool - count; j < pool; ++j) {
      const std::size_t t = std::uniform_int_distribution<std::size_t>(0, j)(rng);
      const std::size_t pick = chosen.insert(t).second ? t : (chosen.insert(j), j);
      out.push_back(map_index(pick));
    }
  } else {
    // Partial Fisher-Yates over the whole candidate pool.
    std::vector<std::size_t> cand(pool);
    std::iota(cand.begin(), cand.end(), std::size_t{0});
    for (std::size_t j = 0; j < count; ++j) {
      const std::size_t t = std::uniform_int_distribution<std::size_t>(j, pool - 1)(rng);
      std::swap(cand[j], cand[t]);
      out.push_back(map_index(cand[j]));
    }
  }
  return out;
}

template <typename T>
Tensor<T> sample_negatives(const MemoryBank<T>& bank, int exclude, std::size_t count, Rng& rng) {
  if (count + 1 > bank.size())
    throw ConfigError("N=" + std::to_string(count) + " exceeds n-1=" + std::to_string(bank.size() - 1));
  return bank.lookup(sample_negative_indices(bank.size(), exclude, count, rng));
}

// 2|K| banks: one per (pathway, tap).
template <typename T>
struct BankSet {
  std::map<std::string, MemoryBank<T>> fast;
  std::map<std::string, MemoryBank<T>> slow;

  std::map<std::string, MemoryBank<T>>& of(Pathway p) { return p == Pathway::fast ? fast : slow; }
  const std::map<std::string, MemoryBank<T>>& of(Pathway p) const { return p == Pathway::fast ? fast : slow; }
};

template <typename T>
BankSet<T> init_banks(const std::vector<std::string>& taps, std::size_t n, std::size_t d, std::uint64_t seed,
                      double momentum) {
  BankSet<T> bs;
  for (auto p : {Pathway::slow, Pathway::fast})
    for (const auto& tap : taps) bs.of(p).emplace(tap, MemoryBank<T>::init(n, d, seed, momentum, p, tap));
  return bs;
}

}  // namespace vthcl
