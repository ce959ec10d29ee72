#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace emflow {

// FNV-1a, 64 bit. Stable across platforms; used for config hashes, artifact
// hashes in run manifests and the trainer's write-guard checksums.
inline std::uint64_t fnv1a64(std::string_view bytes,
                             std::uint64_t seed = 0xcbf29ce484222325ULL) {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t fnv1a64_file(const std::string& path);

std::string hex64(std::uint64_t value);

}  // namespace emflow
