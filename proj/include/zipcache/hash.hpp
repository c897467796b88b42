#pragma once

#include <cstdint>
#include <string_view>

namespace zipcache {

// Key placement hashes. These values are part of the persistent layout of
// both tiers and must never change:
//
//   mix_hash(key, seed) = fmix64(fnv1a64(key) ^ seed)
//
// fnv1a64 uses offset basis 0xcbf29ce484222325 and prime 0x100000001b3;
// fmix64 is the MurmurHash3 64-bit finalizer.

inline constexpr uint64_t kDramSubpageSeed = 0x9E3779B97F4A7C15ULL;
inline constexpr uint64_t kSsdSubpageSeed = 0xC2B2AE3D27D4EB4FULL;
inline constexpr uint64_t kBaselineBucketSeed = 0x165667B19E3779F9ULL;

inline uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline uint64_t fmix64(uint64_t k) {
  k ^= k >> 33;
  k *= 0xff51afd7ed558ccdULL;
  k ^= k >> 33;
  k *= 0xc4ceb9fe1a85ec53ULL;
  k ^= k >> 33;
  return k;
}

inline uint64_t mix_hash(std::string_view key, uint64_t seed) {
  return fmix64(fnv1a64(key) ^ seed);
}

/// Zero-based sub-page slot for `key` among `count` slots.
inline uint32_t subpage_slot(std::string_view key, uint64_t seed, uint32_t count) {
  return static_cast<uint32_t>(mix_hash(key, seed) % count);
}

}  // namespace zipcache
