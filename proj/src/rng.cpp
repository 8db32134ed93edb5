#include "fmv2/rng.hpp"

#include <cmath>
#include <numbers>
#include <utility>

namespace fmv2 {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

Xorshift64Star::Xorshift64Star(std::uint64_t seed) : state_(splitmix64(seed)) {
  if (state_ == 0) state_ = 0x9E3779B97F4A7C15ull;
}

std::uint64_t Xorshift64Star::next() {
  state_ ^= state_ >> 12;
  state_ ^= state_ << 25;
  state_ ^= state_ >> 27;
  return state_ * 0x2545F4914F6CDD1Dull;
}

double Xorshift64Star::uniform() {
  return static_cast<double>(next() >> 11) * 0x1.0p-53;
}

double Xorshift64Star::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Xorshift64Star::gaussian() {
  const double u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(1.0 - u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t Xorshift64Star::below(std::size_t n) {
  return static_cast<std::size_t>(uniform() * static_cast<double>(n));
}

void shuffle(std::span<std::size_t> items, Xorshift64Star& rng) {
  for (std::size_t i = items.size(); i > 1; --i) std::swap(items[i - 1], items[rng.below(i)]);
}

}  // namespace fmv2
