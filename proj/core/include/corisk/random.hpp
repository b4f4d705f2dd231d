#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace corisk {

using Rng = std::mt19937_64;

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a64(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Seed derivation used everywhere a component needs its own stream:
// splitmix64(master ^ fnv1a64(name)). Stable across runs and platforms.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::string_view name) noexcept {
  return splitmix64(master ^ fnv1a64(name));
}

// Indexed sub-stream (per tree, per bootstrap replicate, per permutation).
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) noexcept {
  return splitmix64(master ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

}  // namespace corisk
