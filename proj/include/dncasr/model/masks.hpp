// Key-mask construction for the DNC decoder's two cross attentions: mask_s
// restricts each target speaker index to its segment's encoder windows,
// mask_l restricts it to its turn's word-token features (or the <pad> slot
// for context positions in stage 1).
#pragma once

#include "dncasr/model/tape.hpp"

#include <utility>
#include <vector>

namespace dncasr::model {

enum class LinkMode {
  absent,  // pre-training / parallel baseline: no link cross attention
  stage1,  // context positions attend <pad>; current segment attends its turns
  stage2,  // every position attends its own turn across the whole meeting
};

struct AttnMaskSet {
  BoolMat mask_s;     // positions x windows
  BoolMat mask_l;     // positions x (tokens [+ 1 pad slot]); empty when absent
  bool has_pad_slot = false;
};

// Row i selects exactly the window span of position i's segment.
BoolMat build_mask_s(const std::vector<std::pair<int, int>>& segment_spans,
                     const std::vector<int>& position_to_segment, int num_windows);

// Spans are half-open over token positions (the trailing <sc>/<eos> belongs
// to the turn on its left). In stage 1, `context_positions` rows select only
// the appended <pad> column; the remaining rows select their spans.
BoolMat build_mask_l(const std::vector<std::pair<int, int>>& turn_token_spans,
                     LinkMode mode, int context_positions, int num_tokens);

BoolMat causal_mask(int n);

}  // namespace dncasr::model
