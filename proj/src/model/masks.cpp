#include "dncasr/model/masks.hpp"

#include <stdexcept>

namespace dncasr::model {

BoolMat build_mask_s(const std::vector<std::pair<int, int>>& segment_spans,
                     const std::vector<int>& position_to_segment, int num_windows) {
  const int n = static_cast<int>(position_to_segment.size());
  BoolMat mask = BoolMat::Constant(n, num_windows, false);
  for (int i = 0; i < n; ++i) {
    int seg = position_to_segment[i];
    if (seg < 0 || seg >= static_cast<int>(segment_spans.size()))
      throw std::invalid_argument("position maps to unknown segment");
    auto [b, e] = segment_spans[seg];
    if (b < 0 || e > num_windows || b >= e)
      throw std::invalid_argument("segment window span out of range");
    for (int w = b; w < e; ++w) mask(i, w) = true;
  }
  return mask;
}

BoolMat build_mask_l(const std::vector<std::pair<int, int>>& turn_token_spans,
                     LinkMode mode, int context_positions, int num_tokens) {
  if (mode == LinkMode::absent)
    throw std::invalid_argument("build_mask_l called without a link");
  const int span_positions = static_cast<int>(turn_token_spans.size());
  if (mode == LinkMode::stage2 && context_positions != 0)
    throw std::invalid_argument("stage 2 has no context positions");

  const int n = context_positions + span_positions;
  const bool pad = mode == LinkMode::stage1;
  const int cols = num_tokens + (pad ? 1 : 0);
  BoolMat mask = BoolMat::Constant(n, cols, false);
  for (int i = 0; i < context_positions; ++i) mask(i, num_tokens) = true;
  for (int k = 0; k < span_positions; ++k) {
    auto [b, e] = turn_token_spans[k];
    if (b < 0 || e > num_tokens || b >= e)
      throw std::invalid_argument("turn token span out of range");
    for (int j = b; j < e; ++j) mask(context_positions + k, j) = true;
  }
  return mask;
}

BoolMat causal_mask(int n) {
  BoolMat mask = BoolMat::Constant(n, n, false);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j <= i; ++j) mask(i, j) = true;
  return mask;
}

}  // namespace dncasr::model
