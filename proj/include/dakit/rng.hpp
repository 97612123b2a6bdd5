#pragma once

#include <cmath>
#include <cstdint>

#include "dakit/types.hpp"

namespace dakit {

// Deterministic, platform-stable random stream: xoshiro256++ seeded through
// splitmix64 from a (seed, stream_id) pair. Distinct stream ids give
// statistically independent streams for the same seed, which is how a single
// experiment seed isolates model noise, observation noise, proposal noise and
// resampling noise from one another.
//
// Normal draws use Box-Muller with the second value cached. The standard
// library distributions are avoided on purpose: their output sequences are
// implementation-defined and would break bit-reproducibility across
// toolchains.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed, std::uint64_t stream_id = 0) {
    std::uint64_t x = seed ^ (0x9E3779B97F4A7C15ull * (stream_id + 1));
    for (auto& word : state_) word = splitmix64(x);
    bool all_zero = true;
    for (auto word : state_)
      if (word != 0) all_zero = false;
    if (all_zero) state_[0] = 0x8BADF00DDEADBEEFull;
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform on [0, 1), 53 random bits.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    // 1 - uniform01() lies in (0, 1], so the log is finite.
    const double u1 = 1.0 - uniform01();
    const double u2 = uniform01();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * 3.14159265358979323846 * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  template <class Scalar = double>
  Vec<Scalar> normal_vector(Index n) {
    Vec<Scalar> z(n);
    for (Index i = 0; i < n; ++i) z[i] = static_cast<Scalar>(normal());
    return z;
  }

  // Uniform integer in {0, 1, ..., bound - 1} by rejection (no modulo bias).
  std::uint64_t uniform_below(std::uint64_t bound) {
    const std::uint64_t threshold = (0 - bound) % bound;
    for (;;) {
      const std::uint64_t raw = next_u64();
      if (raw >= threshold) return raw % bound;
    }
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  static std::uint64_t splitmix64(std::uint64_t& x) {
    x += 0x9E3779B97F4A7C15ull;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  std::uint64_t state_[4];
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// Stream ids used by the experiment runner. Library code never hardcodes
// these; they are part of the reproducibility contract of a seeded run.
namespace stream {
inline constexpr std::uint64_t truth_init = 0;
inline constexpr std::uint64_t model_noise = 1;
inline constexpr std::uint64_t observation_noise = 2;
inline constexpr std::uint64_t algorithm = 3;
inline constexpr std::uint64_t resampling = 4;
inline constexpr std::uint64_t filter_init = 5;
}  // namespace stream

}  // namespace dakit
