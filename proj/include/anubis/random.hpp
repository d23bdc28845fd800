#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <type_traits>

namespace anubis {

using Rng = std::mt19937_64;

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t fnv1a64(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Hash that is identical across platforms and standard libraries.
inline std::uint64_t stable_hash(std::string_view s) noexcept {
  return splitmix64(fnv1a64(s));
}

template <class T>
  requires std::is_integral_v<T>
inline std::uint64_t stable_hash(T v) noexcept {
  return splitmix64(static_cast<std::uint64_t>(v));
}

/// Child seed for a named sub-task.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view key) noexcept {
  return splitmix64(seed ^ splitmix64(fnv1a64(key)));
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t key) noexcept {
  return splitmix64(seed ^ splitmix64(key + 0x632be59bd9b4e019ULL));
}

/// Uniform double in [0, 1) built from the top 53 bits of one draw.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Maps a 64-bit hash onto [-1, 1).
inline double hash_to_signed_unit(std::uint64_t h) noexcept {
  return static_cast<double>(h >> 11) * 0x1.0p-52 - 1.0;
}

}  // namespace anubis
