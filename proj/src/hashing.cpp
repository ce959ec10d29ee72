#include "emflow/hashing.hpp"

#include <cstdio>
#include <fstream>

#include "emflow/errors.hpp"

namespace emflow {

std::uint64_t fnv1a64_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) {
    throw IoError("fnv1a64_file: cannot open " + path);
  }
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 15];
  while (is) {
    is.read(buf, sizeof(buf));
    h = fnv1a64(std::string_view(buf, static_cast<std::size_t>(is.gcount())),
                h);
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(value));
  return buf;
}

}  // namespace emflow
