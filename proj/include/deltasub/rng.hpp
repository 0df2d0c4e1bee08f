#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace deltasub {

// Every random draw in the project flows through a seeded mt19937 whose seed
// is derived from a root seed plus a purpose tag, so independent pipeline
// stages never share or reorder each other's streams.
inline uint64_t derive_seed(uint64_t root, std::string_view tag) {
  uint64_t h = 0xcbf29ce484222325ull ^ root;
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  h ^= h >> 33;
  h *= 0xff51afd7ed558ccdull;
  h ^= h >> 33;
  return h;
}

inline std::mt19937 make_rng(uint64_t root, std::string_view tag) {
  return std::mt19937(static_cast<uint32_t>(derive_seed(root, tag)));
}

inline float uniform_float(std::mt19937& rng, float lo, float hi) {
  std::uniform_real_distribution<float> dist(lo, hi);
  return dist(rng);
}

inline float normal_float(std::mt19937& rng, float stddev) {
  std::normal_distribution<float> dist(0.0f, stddev);
  return dist(rng);
}

}  // namespace deltasub
