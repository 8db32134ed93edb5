#include "fmv2/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "fmv2/errors.hpp"
#include "fmv2/rng.hpp"

namespace fmv2 {

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  os << (passed ? "PASS" : "FAIL") << " entries=" << entries.size()
     << " max_rel_error=" << max_rel_error;
  return os.str();
}

GradCheckReport grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& loss,
                           std::vector<Tensor>& params, const GradCheckOptions& options) {
  if (!(options.epsilon > 0.0)) throw ContractError("grad_check: epsilon must be positive");
  for (const auto& p : params)
    if (!p.requires_grad() || !p.is_leaf())
      throw ContractError("grad_check: parameters must be tracked leaves");

  for (auto& p : params) p.zero_grad();
  backward(loss(params));

  std::vector<std::pair<std::size_t, std::size_t>> picks;
  std::size_t total = 0;
  for (const auto& p : params) total += p.numel();
  if (options.samples == 0 || options.samples >= total) {
    for (std::size_t t = 0; t < params.size(); ++t)
      for (std::size_t i = 0; i < params[t].numel(); ++i) picks.emplace_back(t, i);
  } else {
    Xorshift64Star rng(options.seed);
    for (std::size_t s = 0; s < options.samples; ++s) {
      std::size_t flat = rng.below(total);
      std::size_t t = 0;
      while (flat >= params[t].numel()) flat -= params[t].numel(), ++t;
      picks.emplace_back(t, flat);
    }
  }

  GradCheckReport report;
  for (auto [t, i] : picks) {
    auto values = params[t].mutable_data();
    const double original = values[i];
    values[i] = original + options.epsilon;
    const double up = loss(params).item();
    values[i] = original - options.epsilon;
    const double down = loss(params).item();
    values[i] = original;

    const double numeric = (up - down) / (2.0 * options.epsilon);
    const double analytic = params[t].has_grad() ? params[t].grad()[i] : 0.0;
    const bool finite = std::isfinite(numeric) && std::isfinite(analytic);
    const double denom = std::max({std::abs(analytic), std::abs(numeric), options.floor});
    const double rel = finite ? std::abs(analytic - numeric) / denom
                              : std::numeric_limits<double>::infinity();
    report.entries.push_back({t, i, analytic, numeric, rel, finite});
    report.max_rel_error = std::max(report.max_rel_error, rel);
    if (!finite || rel >= options.tolerance) report.passed = false;
  }
  return report;
}

}  // namespace fmv2
