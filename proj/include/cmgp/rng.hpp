#ifndef CMGP_RNG_HPP
#define CMGP_RNG_HPP

#include <cstdint>
#include <random>

namespace cmgp {

using Rng = std::mt19937_64;

/// Purposes for substream derivation. Values are part of the seeding
/// contract; append, never renumber.
enum class Stream : std::uint64_t {
  Replication = 1,
  Covariates = 2,
  Actions = 3,
  Noise = 4,
  Coefficients = 5,
  Split = 6,
  Fit = 7,
  GridPoint = 8,
  Labels = 9,
  Prior = 10,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Child seed for (purpose, index) under a parent seed.
inline std::uint64_t derive_seed(std::uint64_t parent, Stream purpose,
                                 std::uint64_t index = 0) {
  std::uint64_t h = splitmix64(parent);
  h = splitmix64(h ^ static_cast<std::uint64_t>(purpose));
  return splitmix64(h ^ (index * 0xd1342543de82ef95ULL + 1));
}

inline Rng make_rng(std::uint64_t parent, Stream purpose,
                    std::uint64_t index = 0) {
  return Rng(derive_seed(parent, purpose, index));
}

} // namespace cmgp

#endif
