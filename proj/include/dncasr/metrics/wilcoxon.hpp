// One-sided Wilcoxon signed-rank test (H1: paired differences > 0). Exact
// sign-pattern enumeration up to 20 nonzero pairs, normal approximation with
// continuity correction above.
#pragma once

#include <vector>

namespace dncasr::metrics {

struct WilcoxonResult {
  double p_one_sided = 1.0;
  double w_plus = 0.0;  // rank sum of positive differences (midranks on ties)
  int n_nonzero = 0;
  int n_positive = 0;
};

WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& diffs);

}  // namespace dncasr::metrics
