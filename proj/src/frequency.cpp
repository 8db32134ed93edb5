#include "fmv2/frequency.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <numbers>

#include "fmv2/errors.hpp"
#include "fmv2/ops.hpp"

namespace fmv2::frequency {

namespace {

struct DctPair {
  Tensor forward;     // D
  Tensor transposed;  // Dᵀ
};

const DctPair& cached_pair(std::size_t length) {
  static std::mutex mutex;
  static std::map<std::size_t, DctPair> table;
  std::lock_guard lock(mutex);
  auto it = table.find(length);
  if (it != table.end()) return it->second;

  const double n = static_cast<double>(length);
  const double norm = std::sqrt(2.0 / n);
  std::vector<double> d(length * length), dt(length * length);
  for (std::size_t i = 0; i < length; ++i) {
    const double s = i == 0 ? 1.0 / std::numbers::sqrt2 : 1.0;
    for (std::size_t f = 0; f < length; ++f) {
      const double v = norm * s *
                       std::cos(std::numbers::pi * (2.0 * static_cast<double>(f) + 1.0) *
                                static_cast<double>(i) / (2.0 * n));
      d[i * length + f] = v;
      dt[f * length + i] = v;
    }
  }
  DctPair pair{Tensor({length, length}, std::move(d)), Tensor({length, length}, std::move(dt))};
  return table.emplace(length, std::move(pair)).first->second;
}

// Moves `axis` to the end; returns the permutation (identity → empty).
std::vector<std::size_t> to_last(std::size_t rank, std::size_t axis) {
  if (axis + 1 == rank) return {};
  std::vector<std::size_t> perm;
  for (std::size_t i = 0; i < rank; ++i)
    if (i != axis) perm.push_back(i);
  perm.push_back(axis);
  return perm;
}

std::vector<std::size_t> inverse(const std::vector<std::size_t>& perm) {
  std::vector<std::size_t> inv(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = i;
  return inv;
}

// Applies `rows × L` · matrix along `axis`.
Tensor along_axis(const Tensor& x, std::size_t axis, const Tensor& matrix) {
  if (axis >= x.rank())
    throw DimensionError("transform axis " + std::to_string(axis) + " out of range for " +
                         to_string(x.shape()));
  const std::size_t length = x.dim(axis);
  const auto perm = to_last(x.rank(), axis);
  Tensor moved = perm.empty() ? x : permute(x, perm);
  const Shape moved_shape = moved.shape();
  Tensor flat = reshape(moved, {moved.numel() / length, length});
  Tensor out = reshape(matmul(flat, matrix), moved_shape);
  return perm.empty() ? out : permute(out, inverse(perm));
}

Tensor scale_along_axis(const Tensor& x, std::size_t axis, const std::vector<double>& weights) {
  const auto perm = to_last(x.rank(), axis);
  if (perm.empty()) return scale_lastdim(x, weights);
  return permute(scale_lastdim(permute(x, perm), weights), inverse(perm));
}

void check_partition(const SpectralTensor& s, const FrequencyConfig& cfg) {
  cfg.validate(s.coeffs.dim(s.axis));
}

}  // namespace

Axis parse_axis(const std::string& name) {
  if (name == "temporal") return Axis::kTemporal;
  if (name == "joint") return Axis::kJoint;
  throw ContractError("unknown transform axis '" + name + "' (temporal|joint)");
}

std::string axis_name(Axis axis) { return axis == Axis::kTemporal ? "temporal" : "joint"; }

OperatorMode parse_mode(const std::string& name) {
  if (name == "high-low") return OperatorMode::kHighLow;
  if (name == "uniform") return OperatorMode::kUniform;
  throw ContractError("unknown operator mode '" + name + "' (high-low|uniform)");
}

std::string mode_name(OperatorMode mode) {
  return mode == OperatorMode::kHighLow ? "high-low" : "uniform";
}

void FrequencyConfig::validate(std::size_t axis_len) const {
  if (partition < 1 || static_cast<std::size_t>(partition) >= axis_len)
    throw ContractError("partition N=" + std::to_string(partition) + " outside [1, " +
                        std::to_string(axis_len) + ")");
  if (mode == OperatorMode::kUniform) {
    if (!(uniform > 0.0) || !std::isfinite(uniform))
      throw ContractError("uniform operator must be positive");
    return;
  }
  // The upper bound on h is closed: the best published setting has h = 1 + ℓ.
  constexpr double slack = 1e-12;
  const bool ell_ok = test_mode ? (ell > 0.0 && ell <= 1.0) : (ell > 0.0 && ell < 1.0);
  const bool h_ok = test_mode ? (h >= 1.0 && h <= 1.0 + ell + slack)
                              : (h > 1.0 && h <= 1.0 + ell + slack);
  if (!ell_ok) throw ContractError("low operator ell=" + std::to_string(ell) + " out of range");
  if (!h_ok)
    throw ContractError("high operator h=" + std::to_string(h) + " outside (1, 1+ell]");
}

std::size_t tensor_axis(Axis axis) { return axis == Axis::kTemporal ? 2 : 0; }

const Tensor& dct_matrix(std::size_t length) {
  if (length == 0) throw DimensionError("DCT of a zero-length axis");
  return cached_pair(length).forward;
}

SpectralTensor dct(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank())
    throw DimensionError("dct axis " + std::to_string(axis) + " out of range for " +
                         to_string(x.shape()));
  const auto& pair = cached_pair(x.dim(axis));
  return {along_axis(x, axis, pair.transposed), axis};
}

Tensor idct(const SpectralTensor& s) {
  if (s.axis >= s.coeffs.rank()) throw DimensionError("idct: spectral axis out of range");
  const auto& pair = cached_pair(s.coeffs.dim(s.axis));
  return along_axis(s.coeffs, s.axis, pair.forward);
}

SpectralTensor apply_high_operator(const SpectralTensor& s, const FrequencyConfig& cfg) {
  check_partition(s, cfg);
  std::vector<double> w(s.coeffs.dim(s.axis), 1.0);
  for (std::size_t i = static_cast<std::size_t>(cfg.partition); i < w.size(); ++i) w[i] = cfg.h;
  return {scale_along_axis(s.coeffs, s.axis, w), s.axis};
}

SpectralTensor apply_low_operator(const SpectralTensor& s, const FrequencyConfig& cfg) {
  check_partition(s, cfg);
  std::vector<double> w(s.coeffs.dim(s.axis), 1.0);
  for (std::size_t i = 0; i < static_cast<std::size_t>(cfg.partition); ++i) w[i] = cfg.ell;
  return {scale_along_axis(s.coeffs, s.axis, w), s.axis};
}

SpectralTensor apply_uniform_operator(const SpectralTensor& s, double factor) {
  std::vector<double> w(s.coeffs.dim(s.axis), factor);
  return {scale_along_axis(s.coeffs, s.axis, w), s.axis};
}

int map_partition(int quoted, std::size_t axis_len) {
  if (quoted < 1 || quoted > 25)
    throw ContractError("partition " + std::to_string(quoted) +
                        " outside [1, 25]");
  if (axis_len < 2) throw ContractError("map_partition needs an axis of length >= 2");
  const long mapped =
      std::lround(static_cast<double>(quoted) / 25.0 * static_cast<double>(axis_len));
  return static_cast<int>(std::clamp<long>(mapped, 1, static_cast<long>(axis_len) - 1));
}

std::vector<BandEnergy> band_energy(const Tensor& x, int partition) {
  if (x.rank() != 3) throw DimensionError("band_energy expects J×C×F, got " + to_string(x.shape()));
  const std::size_t joints = x.dim(0), channels = x.dim(1), frames = x.dim(2);
  if (partition < 0 || static_cast<std::size_t>(partition) > frames)
    throw ContractError("band_energy partition out of range");
  const Tensor coeffs = dct(x.detach(), 2).coeffs;
  const auto c = coeffs.data();
  std::vector<BandEnergy> out;
  for (std::size_t j = 0; j < joints; ++j) {
    BandEnergy e{j, 0.0, 0.0, 0.0};
    for (std::size_t ch = 0; ch < channels; ++ch)
      for (std::size_t i = 0; i < frames; ++i) {
        const double v = c[(j * channels + ch) * frames + i];
        (i < static_cast<std::size_t>(partition) ? e.low : e.high) += v * v;
      }
    e.ratio = e.low > 0.0 ? e.high / e.low : std::numeric_limits<double>::infinity();
    out.push_back(e);
  }
  return out;
}

}  // namespace fmv2::frequency
