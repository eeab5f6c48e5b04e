#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace entrank {

/// Mixes a 64-bit value (splitmix64 finalizer).
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Seed of the named substream derived from a run seed. Every random
/// consumer (pair sampling, fold shuffles, corpus generation) draws from its
/// own substream so that components stay independently reproducible.
constexpr std::uint64_t substream_seed(std::uint64_t seed, std::string_view name) {
  return mix64(mix64(seed) ^ fnv1a(name));
}

inline std::mt19937_64 make_rng(std::uint64_t seed, std::string_view name) {
  return std::mt19937_64(substream_seed(seed, name));
}

}  // namespace entrank
