#pragma once

#include <cstdint>

namespace cgmlp {

// splitmix64 (Steele, Lea, Flood 2014). Chosen for a pinned, platform-
// independent sample stream: the same seed yields the same bits everywhere.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64();

  // Uniform in [0, 1) with 53 random bits.
  double uniform();

  // Box-Muller on two uniforms; no cached second sample, so the stream
  // position after each call is always exactly two u64 draws.
  double normal(double mean = 0.0, double stddev = 1.0);

  // Uniform integer in [0, bound) by rejection; bound > 0.
  std::uint64_t below(std::uint64_t bound);

  std::uint64_t state() const { return state_; }

 private:
  std::uint64_t state_;
};

// Stateless mix used to derive per-epoch and per-model seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace cgmlp
