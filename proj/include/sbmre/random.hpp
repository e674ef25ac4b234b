#pragma once

#include <cstdint>
#include <random>

namespace sbmre {

using Rng = std::mt19937_64;

std::uint64_t splitmix64(std::uint64_t x);

/// Seed of sub-stream `stream` of the root seed. Streams split this way are
/// reproducible regardless of which worker consumes them.
std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream);

inline Rng make_stream(std::uint64_t root, std::uint64_t stream) {
  return Rng(derive_seed(root, stream));
}

}  // namespace sbmre
