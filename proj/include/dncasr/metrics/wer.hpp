// Word error rate and the concatenated minimum-permutation variant (cpWER).
#pragma once

#include <limits>
#include <map>
#include <string>
#include <vector>

namespace dncasr::metrics {

struct EditCounts {
  long long sub = 0, ins = 0, del = 0;
  long long total() const { return sub + ins + del; }
};

struct WerResult {
  double wer = 0.0;  // infinity when ref is empty but hyp is not
  EditCounts counts;
  long long ref_len = 0;
};

EditCounts edit_distance(const std::vector<std::string>& ref,
                         const std::vector<std::string>& hyp);

WerResult wer(const std::vector<std::string>& ref, const std::vector<std::string>& hyp);

using TokenStreams = std::map<std::string, std::vector<std::string>>;

struct CpWerResult {
  double cpwer = 0.0;
  long long total_errors = 0;
  long long ref_words = 0;
  // hyp stream id -> ref stream id; padded matches map to ""
  std::map<std::string, std::string> mapping;
};

// Pads the smaller side with empty streams and minimises total edit errors
// over one-to-one mappings (optimal assignment on the pairwise edit-distance
// matrix). Throws when the reference has no words at all.
CpWerResult cpwer(const TokenStreams& ref_streams, const TokenStreams& hyp_streams);

constexpr double kInfiniteRate = std::numeric_limits<double>::infinity();

}  // namespace dncasr::metrics
