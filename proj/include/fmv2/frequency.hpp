#pragma once

// Orthonormal DCT-II / DCT-III pair along one axis of a tensor, and the
// band operators that scale the coefficients below / above a partition
// index N.
//
//   C_i = sqrt(2/F) · s_i · Σ_f x_f · cos(π (2f + 1) i / (2F)),   s_0 = 1/√2, s_i = 1
//   x_f = sqrt(2/F) · Σ_i s_i · C_i · cos(π (2f + 1) i / (2F))
//
// (zero-based i and f). Coefficient 0 is the DC term.

#include <cstddef>
#include <string>
#include <vector>

#include "fmv2/tensor.hpp"

namespace fmv2::frequency {

enum class Axis { kTemporal, kJoint };
// kHighLow scales the two bands separately (h above N, ℓ below N);
// kUniform applies one scalar to the whole spectrum.
enum class OperatorMode { kHighLow, kUniform };

Axis parse_axis(const std::string& name);
std::string axis_name(Axis axis);
OperatorMode parse_mode(const std::string& name);
std::string mode_name(OperatorMode mode);

struct FrequencyConfig {
  int partition = 13;  // N: count of low-frequency coefficients
  double ell = 0.2;    // low-band operator
  double h = 1.2;      // high-band operator
  Axis axis = Axis::kTemporal;
  OperatorMode mode = OperatorMode::kHighLow;
  double uniform = 1.0;  // the single operator of kUniform
  // Widens the operator ranges to ℓ ∈ (0, 1], h ∈ [1, 1 + ℓ] so h = ℓ = 1
  // can be used as an identity.
  bool test_mode = false;

  // Throws ContractError unless 1 ≤ N < axis_len and the operators are in range.
  void validate(std::size_t axis_len) const;
};

// Tensor axis index holding the transform for a J×C×F layout.
std::size_t tensor_axis(Axis axis);

struct SpectralTensor {
  Tensor coeffs;
  std::size_t axis;  // which tensor axis holds coefficients
};

// F×F matrix D with D[i][f] as above; cached per length, read-only.
const Tensor& dct_matrix(std::size_t length);

SpectralTensor dct(const Tensor& x, std::size_t axis);
Tensor idct(const SpectralTensor& s);

SpectralTensor apply_high_operator(const SpectralTensor& s, const FrequencyConfig& cfg);
SpectralTensor apply_low_operator(const SpectralTensor& s, const FrequencyConfig& cfg);
SpectralTensor apply_uniform_operator(const SpectralTensor& s, double factor);

// Rescales a partition quoted against 25 joints onto an axis of another
// length: round(N / 25 · axis_len) clamped to [1, axis_len − 1].
int map_partition(int quoted, std::size_t axis_len);

struct BandEnergy {
  std::size_t joint;
  double low;
  double high;
  double ratio;  // high / low
};

// Per-joint energy of the temporal spectrum of a J×C×F tensor, split at N.
std::vector<BandEnergy> band_energy(const Tensor& x, int partition);

}  // namespace fmv2::frequency
