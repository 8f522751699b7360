// Core data types for synthetic meetings and their serialized training targets.
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace dncasr::sim {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct SimConfig {
  int num_speakers = 4;
  int num_segments = 8;
  int utterances_min = 1;   // utterances per segment, inclusive range
  int utterances_max = 5;
  double max_pairwise_overlap = 0.25;
  double target_meeting_overlap = 0.05;
  int vocab_size = 50;
  int tokens_min = 2;       // tokens per utterance, inclusive range
  int tokens_max = 5;
  int embed_dim = 16;
  int frame_dim = 16;
  int frames_per_token = 3;
  double window_len = 1.5;    // time units
  double window_stride = 0.5;
  double noise_sigma = 0.08;
  std::uint64_t seed = 0;

  void validate() const;
  // Canonical key=value rendering; also the digest input.
  std::string canonical() const;
  std::string digest() const;
};

struct SpeakerProfile {
  int global_id = 0;
  VectorXd latent;  // unit norm, embed_dim
};

struct Turn {
  int speaker = 0;  // global speaker id
  std::vector<int> tokens;
  double start = 0.0;
  double end = 0.0;

  double duration() const { return end - start; }
};

struct Segment {
  std::vector<Turn> turns;
  double start = 0.0;
  double end = 0.0;

  double span() const { return end - start; }
};

struct Meeting {
  std::string id;
  SimConfig config;
  std::vector<SpeakerProfile> speakers;
  std::vector<Segment> segments;

  int total_turns() const;
  // Overlapped time divided by total segment span time.
  double overlap_ratio() const;
  void validate() const;
};

// Special token ids live immediately after the word vocabulary.
struct SpecialTokens {
  int bos, sbos, sc, eos, pad;

  explicit SpecialTokens(int vocab_size)
      : bos(vocab_size), sbos(vocab_size + 1), sc(vocab_size + 2),
        eos(vocab_size + 3), pad(vocab_size + 4) {}
  // Total model vocabulary including specials.
  static int model_vocab(int vocab_size) { return vocab_size + 5; }
};

struct SerializedTranscript {
  std::vector<int> tokens;           // per-turn tokens joined by <sc>, ending <eos>
  std::vector<int> speaker_indices;  // meeting-relative index, one per turn
  std::vector<std::pair<int, int>> turn_token_spans;  // half-open, over `tokens`
};

struct EmbeddingSequence {
  MatrixXd windows;  // num_windows x embed_dim
  std::vector<std::pair<int, int>> segment_spans;  // half-open window ranges
  // per-window positional index on the meeting-global clock (window start
  // divided by the stride), shared with the frame clock
  std::vector<int> window_pe_indices;
};

}  // namespace dncasr::sim
