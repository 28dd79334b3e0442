#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>

namespace qospred {

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to derive independent RNG streams from
// (seed, stream index, ...) tuples.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed) noexcept { return mix64(seed); }

template <typename... Rest>
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t next, Rest... rest) noexcept {
  return derive_seed(mix64(seed) ^ mix64(next + 0x632be59bd9b4e019ULL), static_cast<std::uint64_t>(rest)...);
}

inline std::uint64_t hash_ids(std::span<const int> ids) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (int id : ids) h = mix64(h ^ static_cast<std::uint64_t>(static_cast<std::uint32_t>(id)));
  return h;
}

inline std::uint64_t hash_text(std::string_view text) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace qospred
