#include "dncasr/metrics/wilcoxon.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace dncasr::metrics {

WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& diffs) {
  std::vector<double> d;
  for (double x : diffs)
    if (x != 0.0) d.push_back(x);
  if (d.empty()) throw std::invalid_argument("wilcoxon: all differences are zero");
  const int n = static_cast<int>(d.size());
  if (n < 5) throw std::invalid_argument("wilcoxon: needs >= 5 nonzero pairs");

  // midranks of |d|
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return std::abs(d[a]) < std::abs(d[b]); });
  std::vector<double> rank(n, 0.0);
  double tie_correction = 0.0;
  for (int i = 0; i < n;) {
    int j = i;
    while (j < n && std::abs(d[order[j]]) == std::abs(d[order[i]])) ++j;
    double mid = 0.5 * (i + 1 + j);  // average of ranks i+1 .. j
    for (int k = i; k < j; ++k) rank[order[k]] = mid;
    double t = j - i;
    tie_correction += t * t * t - t;
    i = j;
  }

  WilcoxonResult res;
  res.n_nonzero = n;
  for (int i = 0; i < n; ++i)
    if (d[i] > 0.0) {
      res.w_plus += rank[i];
      ++res.n_positive;
    }

  if (n <= 20) {
    // exact distribution over all sign assignments
    const std::uint64_t total = 1ULL << n;
    std::uint64_t at_least = 0;
    const double eps = 1e-9;
    for (std::uint64_t mask = 0; mask < total; ++mask) {
      double w = 0.0;
      for (int i = 0; i < n; ++i)
        if (mask & (1ULL << i)) w += rank[i];
      if (w >= res.w_plus - eps) ++at_least;
    }
    res.p_one_sided = static_cast<double>(at_least) / static_cast<double>(total);
  } else {
    double mean = n * (n + 1) / 4.0;
    double var = n * (n + 1) * (2.0 * n + 1) / 24.0 - tie_correction / 48.0;
    double z = (res.w_plus - mean - 0.5) / std::sqrt(var);
    res.p_one_sided = 0.5 * std::erfc(z / std::sqrt(2.0));
  }
  return res;
}

}  // namespace dncasr::metrics
