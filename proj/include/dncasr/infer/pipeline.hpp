// Speaker-label decoding (per-segment stage-1 loop or whole-meeting stage-2
// pass), prefix-closure-constrained beam search, transcript assembly, and the
// per-meeting end-to-end pipeline.
#pragma once

#include "dncasr/infer/beam.hpp"
#include "dncasr/sim/generator.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace dncasr::infer {

struct AttributedTurn {
  int speaker_index = 0;
  std::vector<int> tokens;  // word tokens only; may be empty
};

struct AttributedTranscript {
  std::vector<std::vector<AttributedTurn>> segments;
};

enum class Mode { s1, s2, parallel };

struct InferOptions {
  Mode mode = Mode::s2;
  int asr_beam = 4;
  int dnc_beam = 4;
  bool oracle_words = false;
};

// Sequential per-segment decoding: previous segments' 1-best labels are
// context attending <pad>; beam search runs over the current segment only.
std::vector<int> decode_speakers_stage1(model::Network& net,
                                        const sim::EmbeddingSequence& windows,
                                        const std::vector<AsrSegmentDecode>& asr,
                                        int beam_width);

// Single left-to-right pass over the whole meeting, each position attending
// its own turn's stored W_CA rows. `linked=false` is the parallel baseline.
std::vector<int> decode_speakers_stage2(model::Network& net,
                                        const sim::EmbeddingSequence& windows,
                                        const std::vector<AsrSegmentDecode>& asr,
                                        int beam_width, bool linked = true);

// Splits each segment's 1-best at <sc>, drops the specials, and zips with the
// flat speaker index sequence.
AttributedTranscript assemble(const std::vector<AsrSegmentDecode>& asr,
                              const std::vector<int>& speaker_indices,
                              const sim::SpecialTokens& sp);

AttributedTranscript infer_meeting(model::Network& net, const sim::Meeting& meeting,
                                   const sim::FrameCodebook& codebook,
                                   const InferOptions& options);

// meeting_id \t segment \t turn \t spk<k> \t tokens
std::string hypothesis_lines(const sim::Meeting& meeting,
                             const AttributedTranscript& transcript);

}  // namespace dncasr::infer
