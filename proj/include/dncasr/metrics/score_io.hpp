// Scoring file formats and meeting-level score assembly: reads the inference
// hypothesis TSV and the timed reference TSV, emits per-meeting and pooled
// CSV rows, and pairs two score CSVs for the Wilcoxon test.
#pragma once

#include "dncasr/metrics/der.hpp"
#include "dncasr/metrics/wer.hpp"
#include "dncasr/metrics/wilcoxon.hpp"

#include <optional>
#include <string>
#include <vector>

namespace dncasr::metrics {

struct HypTurn {
  std::string meeting_id;
  int segment = 0;
  int turn = 0;
  int speaker_index = 0;
  std::vector<std::string> tokens;
};

struct RefTurn {
  std::string meeting_id;
  int segment = 0;
  int turn = 0;
  std::string speaker;
  double start = 0.0;
  double end = 0.0;
  std::vector<std::string> tokens;
};

std::vector<HypTurn> parse_hyp_lines(const std::string& content);
std::vector<RefTurn> parse_ref_lines(const std::string& content);

struct MeetingScore {
  std::string meeting_id;
  double wer = 0.0;
  EditCounts wer_counts;
  long long ref_words = 0;
  double cpwer = 0.0;
  long long cpwer_errors = 0;
  std::optional<double> cpwer_multi;  // empty when no multi-talker segments
  long long cpwer_multi_errors = 0;
  long long multi_ref_words = 0;
  DerResult der;
};

MeetingScore score_meeting(const std::vector<RefTurn>& ref,
                           const std::vector<HypTurn>& hyp, double collar = 0.25);

std::vector<MeetingScore> score_corpus(const std::vector<RefTurn>& ref,
                                       const std::vector<HypTurn>& hyp,
                                       double collar = 0.25);

// meeting_id,wer,cpwer,cpwer_multi,der rows plus POOLED and MEAN summary rows.
std::string score_csv(const std::vector<MeetingScore>& scores);

MeetingScore pooled_score(const std::vector<MeetingScore>& scores);

// Pairs per-meeting cpwer columns of two score CSVs (baseline first) and runs
// the one-sided test for "candidate improves on baseline".
struct PairedWilcoxon {
  WilcoxonResult test;
  int n_improved = 0;
  int n_total = 0;
};
PairedWilcoxon wilcoxon_from_csvs(const std::string& baseline_csv,
                                  const std::string& candidate_csv);

}  // namespace dncasr::metrics
