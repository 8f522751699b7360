#include "dncasr/metrics/score_io.hpp"

#include "dncasr/common.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

namespace dncasr::metrics {

namespace {

std::vector<std::string> tokenize(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  std::string w;
  while (is >> w) out.push_back(w);
  return out;
}

int parse_spk_index(const std::string& field) {
  if (field.rfind("spk", 0) != 0)
    throw std::runtime_error("bad speaker field: " + field);
  return std::stoi(field.substr(3));
}

}  // namespace

std::vector<HypTurn> parse_hyp_lines(const std::string& content) {
  std::vector<HypTurn> out;
  for (const auto& line : split(content, '\n')) {
    if (trim(line).empty()) continue;
    auto cols = split(line, '\t');
    if (cols.size() != 5)
      throw std::runtime_error("hypothesis line needs 5 tab-separated fields: " + line);
    HypTurn t;
    t.meeting_id = cols[0];
    t.segment = std::stoi(cols[1]);
    t.turn = std::stoi(cols[2]);
    t.speaker_index = parse_spk_index(cols[3]);
    t.tokens = tokenize(cols[4]);
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<RefTurn> parse_ref_lines(const std::string& content) {
  std::vector<RefTurn> out;
  for (const auto& line : split(content, '\n')) {
    if (trim(line).empty()) continue;
    auto cols = split(line, '\t');
    if (cols.size() != 7)
      throw std::runtime_error("reference line needs 7 tab-separated fields: " + line);
    RefTurn t;
    t.meeting_id = cols[0];
    t.segment = std::stoi(cols[1]);
    t.turn = std::stoi(cols[2]);
    t.speaker = cols[3];
    t.start = std::stod(cols[4]);
    t.end = std::stod(cols[5]);
    t.tokens = tokenize(cols[6]);
    out.push_back(std::move(t));
  }
  return out;
}

MeetingScore score_meeting(const std::vector<RefTurn>& ref,
                           const std::vector<HypTurn>& hyp, double collar) {
  MeetingScore score;
  if (ref.empty()) throw std::invalid_argument("score_meeting: no reference turns");
  score.meeting_id = ref.front().meeting_id;

  std::map<int, std::vector<const RefTurn*>> ref_by_seg;
  std::map<int, std::vector<const HypTurn*>> hyp_by_seg;
  for (const auto& t : ref) ref_by_seg[t.segment].push_back(&t);
  for (const auto& t : hyp) hyp_by_seg[t.segment].push_back(&t);

  // serialized per-segment WER (speaker-agnostic)
  std::set<int> segs;
  for (auto& [s, _] : ref_by_seg) segs.insert(s);
  for (auto& [s, _] : hyp_by_seg) segs.insert(s);
  for (int s : segs) {
    std::vector<std::string> r, h;
    if (auto it = ref_by_seg.find(s); it != ref_by_seg.end())
      for (const auto* t : it->second) r.insert(r.end(), t->tokens.begin(), t->tokens.end());
    if (auto it = hyp_by_seg.find(s); it != hyp_by_seg.end())
      for (const auto* t : it->second) h.insert(h.end(), t->tokens.begin(), t->tokens.end());
    EditCounts c = edit_distance(r, h);
    score.wer_counts.sub += c.sub;
    score.wer_counts.ins += c.ins;
    score.wer_counts.del += c.del;
    score.ref_words += static_cast<long long>(r.size());
  }
  score.wer = score.ref_words > 0
                  ? static_cast<double>(score.wer_counts.total()) / score.ref_words
                  : (score.wer_counts.total() > 0 ? kInfiniteRate : 0.0);

  // cpWER over the whole meeting
  TokenStreams ref_streams, hyp_streams;
  for (const auto& t : ref) {
    auto& s = ref_streams[t.speaker];
    s.insert(s.end(), t.tokens.begin(), t.tokens.end());
  }
  for (const auto& t : hyp) {
    auto& s = hyp_streams["spk" + std::to_string(t.speaker_index)];
    s.insert(s.end(), t.tokens.begin(), t.tokens.end());
  }
  CpWerResult cp = cpwer(ref_streams, hyp_streams);
  score.cpwer = cp.cpwer;
  score.cpwer_errors = cp.total_errors;

  // cpWER restricted to multi-talker segments (>= 2 reference turns)
  std::set<int> multi_segs;
  for (auto& [s, turns] : ref_by_seg)
    if (turns.size() >= 2) multi_segs.insert(s);
  if (!multi_segs.empty()) {
    TokenStreams ref_m, hyp_m;
    long long ref_m_words = 0;
    for (const auto& t : ref)
      if (multi_segs.count(t.segment)) {
        auto& s = ref_m[t.speaker];
        s.insert(s.end(), t.tokens.begin(), t.tokens.end());
        ref_m_words += static_cast<long long>(t.tokens.size());
      }
    for (const auto& t : hyp)
      if (multi_segs.count(t.segment)) {
        auto& s = hyp_m["spk" + std::to_string(t.speaker_index)];
        s.insert(s.end(), t.tokens.begin(), t.tokens.end());
      }
    if (ref_m_words > 0) {
      CpWerResult cpm = cpwer(ref_m, hyp_m);
      score.cpwer_multi = cpm.cpwer;
      score.cpwer_multi_errors = cpm.total_errors;
      score.multi_ref_words = cpm.ref_words;
    }
  }

  // DER: hypothesis turns inherit oracle turn times when the per-segment turn
  // count matches; otherwise the segment span is split by token share.
  std::vector<TimedTurn> ref_timed, hyp_timed;
  for (const auto& t : ref) ref_timed.push_back({t.speaker, t.start, t.end});
  for (auto& [s, hyps] : hyp_by_seg) {
    auto rit = ref_by_seg.find(s);
    if (rit == ref_by_seg.end()) continue;
    const auto& refs = rit->second;
    std::vector<const HypTurn*> nonempty;
    for (const auto* h : hyps)
      if (!h->tokens.empty()) nonempty.push_back(h);
    if (hyps.size() == refs.size()) {
      for (std::size_t k = 0; k < hyps.size(); ++k) {
        if (hyps[k]->tokens.empty()) continue;  // empty turns drop at scoring
        hyp_timed.push_back({"spk" + std::to_string(hyps[k]->speaker_index),
                             refs[k]->start, refs[k]->end});
      }
    } else if (!nonempty.empty()) {
      double seg_start = refs.front()->start, seg_end = refs.front()->end;
      for (const auto* r : refs) {
        seg_start = std::min(seg_start, r->start);
        seg_end = std::max(seg_end, r->end);
      }
      double total_tokens = 0;
      for (const auto* h : nonempty) total_tokens += static_cast<double>(h->tokens.size());
      double at = seg_start;
      for (const auto* h : nonempty) {
        double dur = (seg_end - seg_start) * h->tokens.size() / total_tokens;
        hyp_timed.push_back({"spk" + std::to_string(h->speaker_index), at, at + dur});
        at += dur;
      }
    }
  }
  score.der = der(ref_timed, hyp_timed, collar);
  return score;
}

std::vector<MeetingScore> score_corpus(const std::vector<RefTurn>& ref,
                                       const std::vector<HypTurn>& hyp, double collar) {
  std::map<std::string, std::vector<RefTurn>> ref_by_meeting;
  std::map<std::string, std::vector<HypTurn>> hyp_by_meeting;
  std::vector<std::string> order;
  for (const auto& t : ref) {
    if (!ref_by_meeting.count(t.meeting_id)) order.push_back(t.meeting_id);
    ref_by_meeting[t.meeting_id].push_back(t);
  }
  for (const auto& t : hyp) hyp_by_meeting[t.meeting_id].push_back(t);

  std::vector<MeetingScore> out;
  for (const auto& id : order)
    out.push_back(score_meeting(ref_by_meeting[id], hyp_by_meeting[id], collar));
  return out;
}

MeetingScore pooled_score(const std::vector<MeetingScore>& scores) {
  MeetingScore pooled;
  pooled.meeting_id = "POOLED";
  double miss = 0, fa = 0, conf = 0, ref_time = 0;
  for (const auto& s : scores) {
    pooled.wer_counts.sub += s.wer_counts.sub;
    pooled.wer_counts.ins += s.wer_counts.ins;
    pooled.wer_counts.del += s.wer_counts.del;
    pooled.ref_words += s.ref_words;
    pooled.cpwer_errors += s.cpwer_errors;
    pooled.cpwer_multi_errors += s.cpwer_multi_errors;
    pooled.multi_ref_words += s.multi_ref_words;
    miss += s.der.missed;
    fa += s.der.false_alarm;
    conf += s.der.confusion;
    ref_time += s.der.scored_ref_time;
  }
  pooled.wer = pooled.ref_words > 0
                   ? static_cast<double>(pooled.wer_counts.total()) / pooled.ref_words
                   : 0.0;
  pooled.cpwer = pooled.ref_words > 0
                     ? static_cast<double>(pooled.cpwer_errors) / pooled.ref_words
                     : 0.0;
  if (pooled.multi_ref_words > 0)
    pooled.cpwer_multi =
        static_cast<double>(pooled.cpwer_multi_errors) / pooled.multi_ref_words;
  pooled.der.missed = miss;
  pooled.der.false_alarm = fa;
  pooled.der.confusion = conf;
  pooled.der.scored_ref_time = ref_time;
  pooled.der.der = ref_time > 0 ? (miss + fa + conf) / ref_time : 0.0;
  return pooled;
}

namespace {

std::string rate_str(double v) {
  if (std::isinf(v)) return "inf";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::string csv_row(const MeetingScore& s) {
  std::ostringstream os;
  os << s.meeting_id << "," << rate_str(s.wer) << "," << rate_str(s.cpwer) << ","
     << (s.cpwer_multi ? rate_str(*s.cpwer_multi) : "na") << "," << rate_str(s.der.der);
  return os.str();
}

}  // namespace

std::string score_csv(const std::vector<MeetingScore>& scores) {
  std::ostringstream os;
  os << "meeting_id,wer,cpwer,cpwer_multi,der\n";
  for (const auto& s : scores) os << csv_row(s) << "\n";
  os << csv_row(pooled_score(scores)) << "\n";

  MeetingScore mean;
  mean.meeting_id = "MEAN";
  double wer_sum = 0, cp_sum = 0, cpm_sum = 0, der_sum = 0;
  int n = 0, nm = 0;
  for (const auto& s : scores) {
    wer_sum += s.wer;
    cp_sum += s.cpwer;
    der_sum += s.der.der;
    ++n;
    if (s.cpwer_multi) {
      cpm_sum += *s.cpwer_multi;
      ++nm;
    }
  }
  if (n > 0) {
    os << "MEAN," << rate_str(wer_sum / n) << "," << rate_str(cp_sum / n) << ","
       << (nm > 0 ? rate_str(cpm_sum / nm) : "na") << "," << rate_str(der_sum / n)
       << "\n";
  }
  return os.str();
}

PairedWilcoxon wilcoxon_from_csvs(const std::string& baseline_csv,
                                  const std::string& candidate_csv) {
  auto parse = [](const std::string& content) {
    std::map<std::string, double> cpwer_by_meeting;
    auto lines = split(content, '\n');
    for (std::size_t i = 1; i < lines.size(); ++i) {
      if (trim(lines[i]).empty()) continue;
      auto cols = split(lines[i], ',');
      if (cols.size() < 5) throw std::runtime_error("bad score csv row: " + lines[i]);
      if (cols[0] == "POOLED" || cols[0] == "MEAN") continue;
      cpwer_by_meeting[cols[0]] = std::stod(cols[2]);
    }
    return cpwer_by_meeting;
  };
  auto base = parse(baseline_csv);
  auto cand = parse(candidate_csv);

  PairedWilcoxon out;
  std::vector<double> diffs;
  for (const auto& [id, b] : base) {
    auto it = cand.find(id);
    if (it == cand.end()) continue;
    diffs.push_back(b - it->second);  // positive = candidate improved
    ++out.n_total;
    if (it->second < b) ++out.n_improved;
  }
  out.test = wilcoxon_signed_rank(diffs);
  return out;
}

}  // namespace dncasr::metrics
