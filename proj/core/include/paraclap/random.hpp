#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace paraclap {

using Rng = std::mt19937_64;

// Derives an independent generator from a base seed and a list of stream
// tags (epoch index, purpose id, ...). Equal inputs give equal streams.
inline Rng make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> streams = {}) {
  std::vector<std::uint32_t> words;
  words.push_back(static_cast<std::uint32_t>(seed));
  words.push_back(static_cast<std::uint32_t>(seed >> 32));
  for (auto s : streams) {
    words.push_back(static_cast<std::uint32_t>(s));
    words.push_back(static_cast<std::uint32_t>(s >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return Rng(seq);
}

}  // namespace paraclap
