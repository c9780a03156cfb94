#pragma once

#include <cstdint>
#include <string_view>

namespace csmn {

/// 64-bit FNV-1a, chainable through `state`.
constexpr std::uint64_t fnv1a(std::string_view bytes, std::uint64_t state = 0xcbf29ce484222325ULL) {
  for (char c : bytes) {
    state ^= static_cast<unsigned char>(c);
    state *= 0x100000001b3ULL;
  }
  return state;
}

}  // namespace csmn
