#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fmv2/tensor.hpp"

namespace fmv2 {

struct GradCheckOptions {
  double epsilon = 1e-5;
  double tolerance = 1e-4;
  // Denominator floor for the relative error. A central difference at
  // ε=1e-5 on an O(1) loss carries ~1e-11 of roundoff, so entries well
  // below the floor are in effect held to |analytic − numeric| < tolerance·floor.
  double floor = 1e-6;
  // 0 checks every entry of every parameter; otherwise this many entries are
  // drawn uniformly (with the seed below) across all parameters.
  std::size_t samples = 0;
  std::uint64_t seed = 1;
};

struct GradCheckEntry {
  std::size_t param;
  std::size_t index;
  double analytic;
  double numeric;
  double rel_error;
  bool finite;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  bool passed = true;

  std::string summary() const;
};

// `loss` rebuilds the scalar loss from the given parameter leaves. Each
// parameter must be a tracked leaf; its gradient is reset by the check.
GradCheckReport grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& loss,
                           std::vector<Tensor>& params, const GradCheckOptions& options = {});

}  // namespace fmv2
