#pragma once

#include <bit>
#include <cstdint>
#include <string_view>

namespace bas {

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t hash_combine(std::uint64_t seed, std::uint64_t v) noexcept {
  return mix64(seed ^ (mix64(v) + 0x9e3779b97f4a7c15ULL + (seed << 6) + (seed >> 2)));
}

template <class... Ts>
constexpr std::uint64_t hash_values(std::uint64_t seed, Ts... vs) noexcept {
  ((seed = hash_combine(seed, static_cast<std::uint64_t>(vs))), ...);
  return seed;
}

inline std::uint64_t hash_double(double v) noexcept {
  return mix64(std::bit_cast<std::uint64_t>(v));
}

/// FNV-1a, 64-bit.
constexpr std::uint64_t hash_string(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace bas
