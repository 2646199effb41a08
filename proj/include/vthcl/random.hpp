#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace vthcl {

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Derive a seed from a base seed and a sequence of tags. Streams for
// different tag tuples are statistically independent.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags) {
  std::uint64_t h = mix64(base);
  for (std::uint64_t t : tags) h = mix64(h ^ mix64(t + 0x632be59bd9b4e019ULL));
  return h;
}

inline Rng make_rng(std::uint64_t base, std::initializer_list<std::uint64_t> tags = {}) {
  return Rng(derive_seed(base, tags));
}

// Stream tags, kept distinct so no two subsystems share a random stream.
namespace stream {
inline constexpr std::uint64_t generator = 1;
inline constexpr std::uint64_t encoder_init = 2;
inline constexpr std::uint64_t head_init = 3;
inline constexpr std::uint64_t bank_init = 4;
inline constexpr std::uint64_t epoch_order = 5;
inline constexpr std::uint64_t clip_start = 6;
inline constexpr std::uint64_t negatives = 7;
inline constexpr std::uint64_t probe = 8;
}  // namespace stream

}  // namespace vthcl
