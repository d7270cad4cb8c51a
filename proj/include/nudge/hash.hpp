#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace nudge {

// FNV-1a, used for deterministic keyed splits and RNG stream derivation.
inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

// Hex SHA-256 for artifact checksums in run manifests.
std::string sha256_hex(std::string_view data);

}  // namespace nudge
