#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace qsim {

/// Seeded random stream with bit-stable distributions.
///
/// The engine is std::mt19937_64; the uniform/normal/integer draws are
/// implemented here (rather than via std::*_distribution) so that a given
/// seed produces the same sequence on every standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  /// Derives an independent named stream from a master seed. Components that
  /// must be testable in isolation (env resets, exploration, sampling,
  /// initialization) each get their own stream.
  static Rng substream(std::uint64_t master_seed, std::string_view name);

  std::uint64_t next_u64();

  /// Uniform on [0, 1).
  double uniform();
  /// Uniform on [lo, hi).
  double uniform(double lo, double hi);
  /// Uniform integer in [0, n). Requires n > 0.
  std::int64_t uniform_int(std::int64_t n);
  /// Standard normal via Box-Muller, one spare cached.
  double normal();
  double normal(double mean, double stddev);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// splitmix64 finalizer; also used for seed derivation.
std::uint64_t mix_seed(std::uint64_t x);

/// FNV-1a over bytes; used for stream naming and config hashing.
std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace qsim
