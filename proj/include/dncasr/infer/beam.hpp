// Beam-search word decoding per segment with length-normalised ranking, plus
// the teacher-forced W_CA recomputation over the 1-best sequence.
#pragma once

#include "dncasr/model/network.hpp"
#include "dncasr/sim/types.hpp"

#include <vector>

namespace dncasr::infer {

struct BeamHypothesis {
  std::vector<int> tokens;
  double log_prob = 0.0;
  bool finished = false;   // ended with <eos>
  bool truncated = false;  // hit max_len without <eos>

  double normalized() const {
    return log_prob / static_cast<double>(std::max<std::size_t>(1, tokens.size()));
  }
};

struct AsrSegmentDecode {
  std::vector<int> tokens;  // 1-best, includes <sc>/<eos>
  bool truncated = false;
  std::vector<std::pair<int, int>> turn_spans;  // half-open over tokens
  std::vector<model::Mat> w_ca;                 // per block, teacher forced
  std::vector<BeamHypothesis> ranked;           // by normalised log prob

  int turn_count() const { return static_cast<int>(turn_spans.size()); }
};

// Splits a serialized stream at <sc> with the separator attached to the turn
// on its left; the final turn absorbs <eos> (or the raw tail when truncated).
std::vector<std::pair<int, int>> turn_spans_from_tokens(const std::vector<int>& tokens,
                                                        const sim::SpecialTokens& sp);

AsrSegmentDecode beam_search_asr(model::Network& net, const model::Mat& frames,
                                 int beam_width, int max_len);

// Oracle-words path: W_CA and spans from a given token sequence.
AsrSegmentDecode teacher_forced_decode(model::Network& net, const model::Mat& frames,
                                       const std::vector<int>& tokens);

}  // namespace dncasr::infer
