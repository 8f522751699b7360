// Forward passes for the four networks. The ASR decoder exposes its per-block
// wav-cross-attention outputs (W_CA); the DNC decoder consumes them through
// its link cross attention, either live on the same tape (joint training) or
// as precomputed constants (stage 2 / inference).
#pragma once

#include "dncasr/model/masks.hpp"
#include "dncasr/model/state.hpp"

#include <optional>
#include <vector>

namespace dncasr::model {

// Scaled dot-product attention on already-projected rows; one head.
// `allowed`, when given, gates keys per query row.
Var scaled_dot_attention(Tape& t, Var q, Var k, Var v, const BoolMat* allowed);

struct AsrForward {
  Var logits;             // targets x vocab
  std::vector<Var> w_ca;  // per block, one row per target token
};

struct DncForward {
  Var logits;  // positions x max_speakers
};

// Per-block link inputs: tape vars (joint stage 1) or constants lifted onto
// the tape by the caller. Size must equal num_blocks when the mode uses them.
struct LinkInputs {
  LinkMode mode = LinkMode::absent;
  std::vector<Var> w_ca;
};

class Network {
 public:
  Network(ModelState& state) : state_(state) {}

  const ModelConfig& config() const { return state_.config(); }
  ModelState& state() { return state_; }

  Var encode_windows(Tape& t, const Mat& windows,
                     const std::vector<int>& pe_indices = {}) {
    return encode(t, windows, "spk_enc", 0, pe_indices);
  }
  // `pe_offset` places the frames on the meeting-global positional clock so
  // wav features and window features share one time axis.
  Var encode_frames(Tape& t, const Mat& frames, int pe_offset = 0) {
    return encode(t, frames, "wav_enc", pe_offset, {});
  }

  // Targets must start with the model's token stream (not <bos>); the shifted
  // decoder input is built internally. Every target position yields logits
  // and one W_CA row per block.
  AsrForward asr_decoder_forward(Tape& t, Var e_w, const std::vector<int>& targets);

  // Target speaker indices (without <sbos>); masks.mask_s must have one row
  // per position; masks.mask_l must agree with link.w_ca columns.
  DncForward dnc_decoder_forward(Tape& t, Var e_s, const LinkInputs& link,
                                 const AttnMaskSet& masks,
                                 const std::vector<int>& target_indices);

  Var joint_loss(Tape& t, Var speaker_logits, const std::vector<int>& speaker_targets,
                 Var word_logits, const std::vector<int>& word_targets);

  int bos_id() const;  // word decoder start token
  int sbos_row() const { return config().max_speakers; }

 private:
  Var encode(Tape& t, const Mat& input, const std::string& net, int pe_offset,
             const std::vector<int>& pe_indices);
  Var mha(Tape& t, Var q_in, Var kv_in, const std::string& prefix, const BoolMat* mask);
  Var ffn(Tape& t, Var x, const std::string& prefix);
  Var ln(Tape& t, Var x, const std::string& prefix);
  Var add_pe(Tape& t, Var x, const std::string& net, int pe_offset,
             const std::vector<int>& pe_indices);

  ModelState& state_;
};

}  // namespace dncasr::model
