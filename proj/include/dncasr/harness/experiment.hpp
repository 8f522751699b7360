// Experiment orchestration: corpus generation/caching, the shared training
// stages, the four pipeline variants (no-link parallel baseline, stage 1,
// stage 2, stage 2 + rotation augmentation), and score summaries. Artifacts
// live under workdir/<spec digest>/ so stale checkpoints cannot be confused.
#pragma once

#include "dncasr/metrics/score_io.hpp"
#include "dncasr/model/state.hpp"
#include "dncasr/sim/types.hpp"
#include "dncasr/train/trainer.hpp"

#include <string>
#include <vector>

namespace dncasr::harness {

// Flat key=value parsing shared by train.cfg and the experiment spec; every
// TrainConfig and ModelConfig field has a key, unknown keys are errors.
struct TrainFileConfig {
  model::ModelConfig model;
  train::TrainConfig train;
};
TrainFileConfig parse_train_cfg(const std::string& content);
std::string render_train_cfg(const TrainFileConfig& cfg);

struct ExperimentSpec {
  std::vector<std::string> variants = {"parallel-baseline", "dncasr-s1", "dncasr-s2",
                                       "dncasr-s2-cda"};
  std::string workdir = "workspace";
  std::string train_corpus;  // optional pre-built corpora
  std::string eval_corpus;
  int train_meetings = 100;
  int eval_meetings = 10;
  int pretrain_meetings = 150;
  bool oracle_words = false;
  std::string ckpt_pretrained, ckpt_s1, ckpt_s2, ckpt_s2_cda, ckpt_parallel;

  sim::SimConfig sim;
  model::ModelConfig model;  // vocab/embed/frame dims are derived from sim
  train::TrainConfig train;

  static ExperimentSpec from_string(const std::string& content);
  static ExperimentSpec from_file(const std::string& path);
  std::string canonical() const;
  std::string digest() const;
  void validate() const;
};

struct VariantReport {
  std::string variant;
  metrics::MeetingScore pooled;
  std::vector<metrics::MeetingScore> per_meeting;
  std::string hyp_path;
  std::string score_csv_path;
};

VariantReport run_variant(const ExperimentSpec& spec, const std::string& variant);

// Runs every variant in the spec and writes <workdir>/<digest>/summary.csv.
std::vector<VariantReport> run_experiment(const ExperimentSpec& spec);

std::string summary_csv(const std::vector<VariantReport>& reports);

}  // namespace dncasr::harness
