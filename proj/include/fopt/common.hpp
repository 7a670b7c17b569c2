#pragma once

#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace fopt {

// Error taxonomy. Each stage throws the narrowest type so the CLI can map
// failures onto exit codes.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : Error { using Error::Error; };
struct ActionError : Error { using Error::Error; };
struct ShapeError : Error { using Error::Error; };
struct TapeError : Error { using Error::Error; };
struct NumericsError : Error { using Error::Error; };
struct MetricError : Error { using Error::Error; };
struct StateError : Error { using Error::Error; };
struct DistError : Error { using Error::Error; };
struct GraphError : Error { using Error::Error; };
struct SpectralError : Error { using Error::Error; };
struct FormatError : Error { using Error::Error; };

/// Missing or stale upstream artifact; carries the name of the stage that
/// has to be (re)run.
struct UpstreamError : Error {
  UpstreamError(std::string stage, const std::string& what)
      : Error(what), stage(std::move(stage)) {}
  std::string stage;
};

using Rng = std::mt19937_64;

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view bytes);

/// Named sub-stream of a root seed. Every consumer of randomness derives its
/// own stream so that adding a consumer never perturbs another one.
std::uint64_t derive_seed(std::uint64_t root, std::string_view stream);
inline Rng make_rng(std::uint64_t root, std::string_view stream) {
  return Rng(derive_seed(root, stream));
}

/// 16-hex-digit rendering of a 64-bit hash.
std::string hex64(std::uint64_t h);

/// Uniform integer in [0, n). Kept local so results do not depend on the
/// standard library's distribution implementation.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  // Lemire's nearly-divisionless method would be faster; rejection is enough.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t r;
  do {
    r = rng();
  } while (r >= limit);
  return r % n;
}

/// Uniform real in [0, 1) with 53 random bits.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

double standard_normal(Rng& rng);

}  // namespace fopt
