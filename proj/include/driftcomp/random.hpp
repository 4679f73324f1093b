#pragma once

#include <bit>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace driftcomp {

using Rng = std::mt19937_64;

// Derives an independent 64-bit seed from a base seed and a list of tags
// (stream ids, counters, bit patterns of times). Uses std::seed_seq, whose
// mixing algorithm is fixed by the standard, so results are portable.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags) {
  std::vector<std::uint32_t> words;
  words.reserve(2 * (tags.size() + 1));
  auto push = [&words](std::uint64_t v) {
    words.push_back(static_cast<std::uint32_t>(v));
    words.push_back(static_cast<std::uint32_t>(v >> 32));
  };
  push(base);
  for (auto t : tags) push(t);
  std::seed_seq seq(words.begin(), words.end());
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[1]) << 32) | out[0];
}

inline std::uint64_t time_tag(double t) { return std::bit_cast<std::uint64_t>(t); }

// Stream ids used with derive_seed so that different consumers of one base
// seed never share a random stream.
enum class Stream : std::uint64_t {
  kProjections = 1,
  kDataset = 2,
  kInitWeights = 3,
  kPretrainShuffle = 4,
  kTrainDrift = 5,
  kTrainShuffle = 6,
  kEvalDrift = 7,
  kValidation = 8,
};

inline std::uint64_t tag(Stream s) { return static_cast<std::uint64_t>(s); }

}  // namespace driftcomp
