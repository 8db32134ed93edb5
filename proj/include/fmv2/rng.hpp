#pragma once

// Reproducible random numbers shared by every component that needs them
// (synthetic data, parameter init, shuffling, sampled gradient checks).
//
//   state   = splitmix64(seed), forced nonzero
//   next()  : x ^= x >> 12; x ^= x << 25; x ^= x >> 27; return x * 0x2545F4914F6CDD1D
//   uniform = (next() >> 11) · 2⁻⁵³                       in [0, 1)
//   below(n)= floor(uniform · n)
//   gaussian: Box–Muller, sqrt(−2 ln(1 − u1)) · cos(2π u2), one value per call

#include <cstddef>
#include <cstdint>
#include <span>

namespace fmv2 {

class Xorshift64Star {
 public:
  explicit Xorshift64Star(std::uint64_t seed);

  std::uint64_t next();
  double uniform();
  double uniform(double lo, double hi);
  double gaussian();
  std::size_t below(std::size_t n);

 private:
  std::uint64_t state_;
};

std::uint64_t splitmix64(std::uint64_t x);

// Fisher–Yates, iterating from the back.
void shuffle(std::span<std::size_t> items, Xorshift64Star& rng);

}  // namespace fmv2
