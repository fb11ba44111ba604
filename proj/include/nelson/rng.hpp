#pragma once

#include <cstdint>
#include <random>

namespace nelson {

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Identifies one independent random substream: a run seed, an ensemble tag
/// (which T, which half of an overlap ratio, ...) and the path index. The
/// engine state depends on nothing else, so results do not depend on which
/// worker draws which path.
struct RandomStream {
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;
  std::uint64_t index = 0;

  std::mt19937_64 engine() const {
    const std::uint64_t a = mix64(seed);
    const std::uint64_t b = mix64(a ^ mix64(stream + 0x632be59bd9b4e019ULL));
    const std::uint64_t c = mix64(b ^ mix64(index + 0x85157af5ULL));
    std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                      static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32),
                      static_cast<std::uint32_t>(c), static_cast<std::uint32_t>(c >> 32)};
    return std::mt19937_64(seq);
  }
};

}  // namespace nelson
