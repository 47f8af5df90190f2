#pragma once

#include <cstdint>
#include <initializer_list>

namespace wfuse {

// splitmix64 finalizer. Used to expand seeds and to derive per-sample seeds.
std::uint64_t splitmix64(std::uint64_t& state);

// Order-sensitive hash of a list of integers, e.g. mix_seed({epoch, index, base}).
std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts);

// xoshiro256** (Blackman & Vigna), state expanded from a 64-bit seed with
// splitmix64. Normals come from the Box-Muller transform; the second value of
// each pair is cached. Only integer arithmetic and std::log/sqrt/cos/sin are
// involved, so sequences are identical on every IEEE-754 platform with a
// correctly rounded libm for those calls.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  // Uniform integer in [0, n). Uses rejection to avoid modulo bias.
  std::uint64_t below(std::uint64_t n);
  bool bernoulli(double p);
  double normal();
  double normal(double mean, double stddev);

 private:
  std::uint64_t s_[4];
  bool has_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace wfuse
