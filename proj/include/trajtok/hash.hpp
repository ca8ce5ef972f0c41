#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace trajtok {

/// 64-bit FNV-1a. Used for file checksums, the train/val/test split and stage digests;
/// stable across platforms because it only reads bytes.
constexpr std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v);

/// Shortest decimal text that parses back to exactly the same double.
std::string format_double(double v);
double parse_double(std::string_view s);

}  // namespace trajtok
