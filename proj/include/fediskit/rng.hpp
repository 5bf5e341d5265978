#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace fediskit {

using Rng = std::mt19937_64;

// SplitMix64 finalizer; good avalanche for combining seed components.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t hash_tag(std::string_view tag) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Independent stream seed for (master, purpose, a, b). Streams for distinct
// tuples do not depend on the order in which they are requested, which is what
// makes serial and parallel client execution produce identical results.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::string_view purpose,
                                    std::uint64_t a = 0, std::uint64_t b = 0) {
  std::uint64_t s = mix64(master ^ hash_tag(purpose));
  s = mix64(s ^ mix64(a + 0x632be59bd9b4e019ULL));
  s = mix64(s ^ mix64(b + 0x8cb92ba72f3d8dd7ULL));
  return s;
}

inline Rng make_rng(std::uint64_t master, std::string_view purpose,
                    std::uint64_t a = 0, std::uint64_t b = 0) {
  return Rng(derive_seed(master, purpose, a, b));
}

}  // namespace fediskit
