// Synthetic meeting generation and the derived model inputs/targets:
// window-level speaker embeddings, frame features, serialized transcripts,
// first-speaker segmentation and segment permutation.
#pragma once

#include "dncasr/sim/types.hpp"

#include <cstdint>
#include <map>
#include <optional>

namespace dncasr::sim {

Meeting gen_meeting(const SimConfig& config);
Meeting gen_meeting(const SimConfig& config, std::uint64_t meeting_index);

EmbeddingSequence emit_window_embeddings(const Meeting& meeting);

// Deterministic stand-in for acoustic content: one frame_dim vector per word
// token, plus a fixed projection of speaker latents into frame space.
struct FrameCodebook {
  MatrixXd token_rows;    // vocab_size x frame_dim
  MatrixXd speaker_proj;  // embed_dim x frame_dim

  static FrameCodebook build(const SimConfig& config);
};

// Each token contributes frames_per_token frames of
//   codebook[token] + alpha * (latent^T speaker_proj) + noise.
// Temporally overlapping turns sum their frames.
MatrixXd emit_frame_features(const Segment& segment, const FrameCodebook& codebook,
                             const std::vector<SpeakerProfile>& profiles,
                             const SimConfig& config, double speaker_alpha = 0.5,
                             double noise_sigma = 0.0, std::uint64_t noise_seed = 0);

// The standard frame pipeline shared by training and inference: fixed speaker
// colouring, noise_sigma from the config, noise stream keyed on (meeting,
// segment index).
MatrixXd segment_frame_features(const Meeting& meeting, int segment_idx,
                                const FrameCodebook& codebook);

// Index of the segment's first frame on the meeting-global frame clock.
int segment_frame_offset(const Meeting& meeting, int segment_idx);

// Order of first appearance over the whole meeting: speaker global_id -> index.
std::map<int, int> first_appearance_order(const Meeting& meeting);

SerializedTranscript serialize_targets(const Segment& segment,
                                       const std::map<int, int>& first_appearance,
                                       const SimConfig& config);

struct FssResult {
  std::vector<Segment> segments;     // single-speaker pieces tiling the input span
  std::vector<Turn> dropped_turns;   // turns fully swallowed by an earlier speaker
};

FssResult first_speaker_segmentation(const Segment& segment);

Meeting permute_segments(const Meeting& meeting, std::uint64_t seed);
Meeting apply_segment_permutation(const Meeting& meeting, const std::vector<int>& perm);

// Contiguous sub-meeting [first_segment, first_segment+count); used by the
// length-scheduled trainer. Speaker first-appearance is recomputed by callers
// via serialize_targets on the result.
Meeting sub_meeting(const Meeting& meeting, int first_segment, int count);

}  // namespace dncasr::sim
