#pragma once

#include <cstdint>
#include <random>
#include <span>

namespace rscpi {

using Engine = std::mt19937_64;

/// SplitMix64 finalizer; derives independent stream seeds from (seed, stream).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Index drawn from a probability vector by inverse-CDF lookup.
inline std::size_t sample_index(Engine& engine, std::span<const double> probabilities) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double u = unit(engine);
  std::size_t last_positive = 0;
  for (std::size_t k = 0; k < probabilities.size(); ++k) {
    if (probabilities[k] <= 0.0) continue;
    last_positive = k;
    if (u < probabilities[k]) return k;
    u -= probabilities[k];
  }
  return last_positive;
}

}  // namespace rscpi
