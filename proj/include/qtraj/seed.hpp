#pragma once

#include <cstdint>

namespace qtraj {

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Counter-based seed for trajectory `index` of `stream`:
///   mix64(mix64(master ^ 0x9E3779B97F4A7C15·(stream+1)) ^ 0xD1B54A32D192ED03·(index+1)).
/// Streams in use: 0 and 1 for the n = 0 / n = 1 hypotheses, 2 for kernel
/// estimation, 3 for flux and coherence ensembles.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t index) {
  const std::uint64_t s = mix64(master ^ (0x9E3779B97F4A7C15ULL * (stream + 1)));
  return mix64(s ^ (0xD1B54A32D192ED03ULL * (index + 1)));
}

namespace seed_stream {
inline constexpr std::uint64_t hypothesis0 = 0;
inline constexpr std::uint64_t hypothesis1 = 1;
inline constexpr std::uint64_t kernel = 2;
inline constexpr std::uint64_t analysis = 3;
}  // namespace seed_stream

}  // namespace qtraj
