#include "dncasr/metrics/wer.hpp"

#include "dncasr/metrics/assignment.hpp"

#include <stdexcept>

namespace dncasr::metrics {

EditCounts edit_distance(const std::vector<std::string>& ref,
                         const std::vector<std::string>& hyp) {
  const int n = static_cast<int>(ref.size());
  const int m = static_cast<int>(hyp.size());
  // cost DP plus backtrace to split the distance into sub/ins/del
  std::vector<std::vector<int>> d(n + 1, std::vector<int>(m + 1, 0));
  for (int i = 0; i <= n; ++i) d[i][0] = i;
  for (int j = 0; j <= m; ++j) d[0][j] = j;
  for (int i = 1; i <= n; ++i)
    for (int j = 1; j <= m; ++j) {
      int match = d[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1] ? 1 : 0);
      d[i][j] = std::min({match, d[i - 1][j] + 1, d[i][j - 1] + 1});
    }
  EditCounts c;
  int i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && d[i][j] == d[i - 1][j - 1] && ref[i - 1] == hyp[j - 1]) {
      --i, --j;
    } else if (i > 0 && j > 0 && d[i][j] == d[i - 1][j - 1] + 1) {
      ++c.sub, --i, --j;
    } else if (i > 0 && d[i][j] == d[i - 1][j] + 1) {
      ++c.del, --i;
    } else {
      ++c.ins, --j;
    }
  }
  return c;
}

WerResult wer(const std::vector<std::string>& ref, const std::vector<std::string>& hyp) {
  WerResult r;
  r.ref_len = static_cast<long long>(ref.size());
  r.counts = edit_distance(ref, hyp);
  if (ref.empty()) {
    r.wer = hyp.empty() ? 0.0 : kInfiniteRate;
  } else {
    r.wer = static_cast<double>(r.counts.total()) / static_cast<double>(ref.size());
  }
  return r;
}

CpWerResult cpwer(const TokenStreams& ref_streams, const TokenStreams& hyp_streams) {
  CpWerResult result;
  for (const auto& [id, words] : ref_streams)
    result.ref_words += static_cast<long long>(words.size());
  if (result.ref_words == 0)
    throw std::invalid_argument("cpwer: reference has no words");

  std::vector<std::pair<std::string, const std::vector<std::string>*>> refs, hyps;
  for (const auto& [id, words] : ref_streams) refs.emplace_back(id, &words);
  for (const auto& [id, words] : hyp_streams) hyps.emplace_back(id, &words);
  const std::vector<std::string> empty;
  const int n = static_cast<int>(std::max(refs.size(), hyps.size()));
  while (static_cast<int>(refs.size()) < n) refs.emplace_back("", &empty);
  while (static_cast<int>(hyps.size()) < n) hyps.emplace_back("", &empty);

  Eigen::MatrixXd cost(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      cost(i, j) =
          static_cast<double>(edit_distance(*refs[i].second, *hyps[j].second).total());

  std::vector<int> ref_to_hyp = solve_assignment(cost);
  long long total = 0;
  for (int i = 0; i < n; ++i) {
    total += static_cast<long long>(cost(i, ref_to_hyp[i]));
    const std::string& hyp_id = hyps[ref_to_hyp[i]].first;
    if (!hyp_id.empty()) result.mapping[hyp_id] = refs[i].first;
  }
  result.total_errors = total;
  result.cpwer = static_cast<double>(total) / static_cast<double>(result.ref_words);
  return result;
}

}  // namespace dncasr::metrics
