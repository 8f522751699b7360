// Training phases: separate pre-training of the ASR and DNC sides, joint
// fine-tuning with the live link (stage 1), and DNC-decoder-only fine-tuning
// on precomputed W_CA features (stage 2). Length scheduling and rotation
// augmentation hook in here.
#pragma once

#include "dncasr/model/network.hpp"
#include "dncasr/sim/generator.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace dncasr::train {

struct TrainConfig {
  double lr = 5e-4;
  double warmup_frac = 0.20;
  std::string optimizer = "adam";
  int batch_size = 8;
  int pretrain_asr_epochs = 12;
  int pretrain_dnc_epochs = 10;
  int stage1_epochs = 8;
  int stage2_epochs = 8;
  std::vector<int> length_schedule = {2, 4, 1 << 20};  // max segments per example
  bool cda = false;
  double cda_lo = 0.0;
  double cda_hi = 10.0;
  bool segment_permutation = false;  // per-example segment reordering
  // weight of the frame-reconstruction auxiliary on the wav encoder during
  // ASR pre-training; keeps speaker colouring in E_w (and thus in W_CA)
  double wav_recon_weight = 1.0;
  bool freeze_asr = true;  // stage 1 may also update the ASR side when false
  bool link = true;        // false = parallel baseline (no link cross attention)
  std::uint64_t seed = 0;

  void validate() const;
};

struct EpochStats {
  int epoch = 0;
  double dnc_ce = 0.0;
  double asr_ce = 0.0;
  double joint = 0.0;
  double heldout = 0.0;
  double seconds = 0.0;
  int max_segments = 0;  // curriculum instrumentation
};

struct PhaseReport {
  std::string phase;
  std::vector<EpochStats> epochs;
  double best_heldout = 0.0;
  std::string csv() const;  // phase,epoch,dnc_ce,asr_ce,joint,seconds rows
};

// Whole-meeting DNC targets: speaker indices per turn, the position->segment
// map for mask_s, and global token spans (with per-segment serializations)
// for the stage-2 link mask.
struct DncTargets {
  std::vector<int> indices;
  std::vector<int> position_to_segment;
  std::vector<std::pair<int, int>> global_token_spans;
  std::vector<sim::SerializedTranscript> per_segment;
  int total_tokens = 0;
};

DncTargets build_dnc_targets(const sim::Meeting& meeting);

class Trainer {
 public:
  Trainer(model::ModelState& state, const TrainConfig& cfg);

  PhaseReport pretrain_asr(const std::vector<sim::Meeting>& corpus);
  PhaseReport pretrain_dnc(const std::vector<sim::Meeting>& corpus);
  PhaseReport finetune_stage1(const std::vector<sim::Meeting>& corpus);
  PhaseReport finetune_stage2(const std::vector<sim::Meeting>& corpus);

 private:
  struct MeetingData;  // cached windows/frames/targets per meeting
  struct ExampleView;  // possibly segment-permuted view of one meeting

  std::vector<MeetingData> prepare(const std::vector<sim::Meeting>& corpus) const;
  ExampleView make_view(const MeetingData& md, std::uint64_t example_seed,
                        bool augment) const;
  model::Var encode_view_windows(model::Tape& tape, const ExampleView& view,
                                 std::uint64_t example_seed, bool augment);

  model::ModelState& state_;
  model::Network net_;
  TrainConfig cfg_;
};

}  // namespace dncasr::train
