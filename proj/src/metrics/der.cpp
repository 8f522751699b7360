#include "dncasr/metrics/der.hpp"

#include "dncasr/metrics/assignment.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <stdexcept>

namespace dncasr::metrics {

namespace {

struct Interval {
  double start, end;
  std::set<int> ref_active, hyp_active;
};

std::vector<std::pair<double, double>> merged_exclusions(
    const std::vector<TimedTurn>& ref, double collar) {
  std::vector<std::pair<double, double>> zones;
  for (const auto& t : ref) {
    zones.emplace_back(t.start - collar, t.start + collar);
    zones.emplace_back(t.end - collar, t.end + collar);
  }
  std::sort(zones.begin(), zones.end());
  std::vector<std::pair<double, double>> merged;
  for (const auto& z : zones) {
    if (!merged.empty() && z.first <= merged.back().second)
      merged.back().second = std::max(merged.back().second, z.second);
    else
      merged.push_back(z);
  }
  return merged;
}

}  // namespace

DerResult der(const std::vector<TimedTurn>& ref, const std::vector<TimedTurn>& hyp,
              double collar) {
  if (ref.empty()) throw std::invalid_argument("der: empty reference timeline");
  for (const auto& t : ref)
    if (t.end < t.start) throw std::invalid_argument("der: invalid reference interval");
  for (const auto& t : hyp)
    if (t.end < t.start) throw std::invalid_argument("der: invalid hypothesis interval");

  std::map<std::string, int> ref_ids, hyp_ids;
  for (const auto& t : ref) ref_ids.emplace(t.speaker, static_cast<int>(ref_ids.size()));
  for (const auto& t : hyp) hyp_ids.emplace(t.speaker, static_cast<int>(hyp_ids.size()));

  auto exclusions = merged_exclusions(ref, collar);
  std::vector<double> points;
  for (const auto& t : ref) points.push_back(t.start), points.push_back(t.end);
  for (const auto& t : hyp) points.push_back(t.start), points.push_back(t.end);
  for (const auto& z : exclusions) points.push_back(z.first), points.push_back(z.second);
  std::sort(points.begin(), points.end());
  points.erase(std::unique(points.begin(), points.end()), points.end());

  std::vector<Interval> scored;
  for (std::size_t k = 0; k + 1 < points.size(); ++k) {
    double a = points[k], b = points[k + 1];
    if (b - a <= 1e-12) continue;
    double mid = 0.5 * (a + b);
    bool excluded = false;
    for (const auto& z : exclusions)
      if (mid > z.first && mid < z.second) {
        excluded = true;
        break;
      }
    if (excluded) continue;
    Interval iv{a, b, {}, {}};
    for (const auto& t : ref)
      if (t.start < b && t.end > a) iv.ref_active.insert(ref_ids[t.speaker]);
    for (const auto& t : hyp)
      if (t.start < b && t.end > a) iv.hyp_active.insert(hyp_ids[t.speaker]);
    if (!iv.ref_active.empty() || !iv.hyp_active.empty()) scored.push_back(std::move(iv));
  }

  // speaker mapping maximising matched time over the scored regions
  const int nr = static_cast<int>(ref_ids.size());
  const int nh = static_cast<int>(hyp_ids.size());
  const int n = std::max(nr, nh);
  Eigen::MatrixXd overlap = Eigen::MatrixXd::Zero(n, n);
  for (const auto& iv : scored) {
    double dur = iv.end - iv.start;
    for (int r : iv.ref_active)
      for (int h : iv.hyp_active) overlap(r, h) += dur;
  }
  std::vector<int> ref_to_hyp = n > 0 ? solve_assignment(-overlap) : std::vector<int>{};

  DerResult out;
  for (const auto& iv : scored) {
    double dur = iv.end - iv.start;
    int n_ref = static_cast<int>(iv.ref_active.size());
    int n_hyp = static_cast<int>(iv.hyp_active.size());
    int n_correct = 0;
    for (int r : iv.ref_active) {
      int h = r < n ? ref_to_hyp[r] : -1;
      if (h >= 0 && h < nh && iv.hyp_active.count(h)) ++n_correct;
    }
    out.scored_ref_time += dur * n_ref;
    out.missed += dur * std::max(0, n_ref - n_hyp);
    out.false_alarm += dur * std::max(0, n_hyp - n_ref);
    out.confusion += dur * (std::min(n_ref, n_hyp) - n_correct);
  }
  if (out.scored_ref_time <= 0.0)
    throw std::invalid_argument("der: no scored reference speech after the collar");
  out.der = (out.missed + out.false_alarm + out.confusion) / out.scored_ref_time;
  return out;
}

}  // namespace dncasr::metrics
