#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace seqhgnn {

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a(std::string_view s);

/// Seed of a named stream: splitmix64(seed ^ fnv1a(name)).
std::uint64_t stream_seed(std::uint64_t seed, std::string_view name);

/// Mixes a sequence of counters into one 64-bit value. Used for
/// order-independent randomness such as per-slot dropout decisions.
std::uint64_t hash_combine(std::uint64_t h, std::uint64_t v);

/// Converts the top 53 bits of a 64-bit value to a double in [0, 1).
inline double to_unit(std::uint64_t bits) { return static_cast<double>(bits >> 11) * 0x1.0p-53; }

// std distributions are implementation-defined, so draws are derived from
// the raw engine output to keep runs identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::uint64_t seed, std::string_view stream) : engine_(stream_seed(seed, stream)) {}

  std::uint64_t next() { return engine_(); }
  double uniform() { return to_unit(engine_()); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace seqhgnn
