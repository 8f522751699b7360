// dncasr command line: synthetic data generation, the training phases, the
// two inference pipelines, scoring, rotation-angle sweeps, and full
// experiment runs.

#include "dncasr/augment/rotation.hpp"
#include "dncasr/common.hpp"
#include "dncasr/harness/experiment.hpp"
#include "dncasr/infer/pipeline.hpp"
#include "dncasr/metrics/score_io.hpp"
#include "dncasr/sim/corpus_io.hpp"
#include "dncasr/sim/generator.hpp"
#include "dncasr/train/trainer.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <sstream>

namespace {

using namespace dncasr;

struct SimFlags {
  sim::SimConfig cfg;
  void attach(CLI::App* app) {
    app->add_option("--speakers", cfg.num_speakers, "speakers per meeting");
    app->add_option("--segments", cfg.num_segments, "segments per meeting");
    app->add_option("--utt-min", cfg.utterances_min, "min utterances per segment");
    app->add_option("--utt-max", cfg.utterances_max, "max utterances per segment");
    app->add_option("--tokens-min", cfg.tokens_min, "min tokens per utterance");
    app->add_option("--tokens-max", cfg.tokens_max, "max tokens per utterance");
    app->add_option("--vocab", cfg.vocab_size, "word vocabulary size");
    app->add_option("--max-pairwise-overlap", cfg.max_pairwise_overlap);
    app->add_option("--target-overlap", cfg.target_meeting_overlap);
    app->add_option("--embed-dim", cfg.embed_dim);
    app->add_option("--frame-dim", cfg.frame_dim);
    app->add_option("--frames-per-token", cfg.frames_per_token);
    app->add_option("--window-len", cfg.window_len);
    app->add_option("--window-stride", cfg.window_stride);
    app->add_option("--noise-sigma", cfg.noise_sigma);
  }
};

harness::TrainFileConfig load_train_cfg(const std::string& path) {
  return harness::parse_train_cfg(read_text_file(path));
}

int cmd_gen_data(const std::string& out_dir, SimFlags& flags, int count,
                 bool single_speaker, std::uint64_t seed) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  sim::SimConfig cfg = flags.cfg;
  cfg.seed = seed;
  if (single_speaker) cfg.utterances_min = cfg.utterances_max = 1;
  std::vector<sim::Meeting> meetings;
  for (int i = 0; i < count; ++i) meetings.push_back(sim::gen_meeting(cfg, i));
  sim::write_corpus((fs::path(out_dir) / "corpus.jsonl").string(), meetings);
  write_text_file((fs::path(out_dir) / "ref.tsv").string(),
                  sim::reference_lines(meetings));
  write_text_file((fs::path(out_dir) / "oracle.hyp.tsv").string(),
                  sim::oracle_hypothesis_lines(meetings));
  std::cout << "wrote " << count << " meetings to " << out_dir << "\n";
  return 0;
}

void write_phase_log(const std::string& log_path, const train::PhaseReport& report) {
  if (log_path.empty()) return;
  std::string existing;
  if (std::filesystem::exists(log_path)) existing = read_text_file(log_path);
  if (existing.empty()) existing = "phase,epoch,dnc_ce,asr_ce,joint,seconds\n";
  write_text_file(log_path, existing + report.csv());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DNCASR: joint speaker clustering and serialized ASR (synthetic testbed)"};
  app.require_subcommand(1);

  std::uint64_t seed = 0;
  app.add_option("--seed", seed, "master seed")->capture_default_str();

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic meeting corpus");
  SimFlags gen_flags;
  std::string gen_out = "data";
  int gen_count = 100;
  bool gen_single = false;
  gen->add_option("--out", gen_out, "output directory")->capture_default_str();
  gen->add_option("--count", gen_count, "number of meetings")->capture_default_str();
  gen->add_flag("--single-speaker-segments", gen_single,
                "every segment holds one speaker (DNC pre-training corpus)");
  gen_flags.attach(gen);

  // pretrain-asr / pretrain-dnc / finetune
  std::string corpus_path, config_path, init_ckpt, out_ckpt, log_path;
  auto add_train_common = [&](CLI::App* sub, bool needs_init) {
    sub->add_option("--corpus", corpus_path, "training corpus (jsonl)")->required();
    sub->add_option("--config", config_path, "train.cfg path")->required();
    sub->add_option("--out", out_ckpt, "output checkpoint")->required();
    sub->add_option("--log", log_path, "phase log CSV");
    auto* opt = sub->add_option("--init", init_ckpt, "initial checkpoint");
    if (needs_init) opt->required();
  };
  auto* pre_asr = app.add_subcommand("pretrain-asr", "pre-train Wav encoder + ASR decoder");
  add_train_common(pre_asr, false);
  auto* pre_dnc = app.add_subcommand("pretrain-dnc", "pre-train Spk encoder + DNC decoder");
  add_train_common(pre_dnc, false);
  auto* finetune = app.add_subcommand("finetune", "joint fine-tuning stages");
  add_train_common(finetune, true);
  int ft_stage = 1;
  std::string ft_cda;
  bool ft_no_link = false;
  finetune->add_option("--stage", ft_stage, "1 or 2")->required();
  finetune->add_option("--cda", ft_cda, "rotation augmentation range LO:HI");
  finetune->add_flag("--no-link", ft_no_link, "drop the link cross attention");

  // infer
  auto* infer_cmd = app.add_subcommand("infer", "decode a corpus to speaker-attributed text");
  std::string infer_ckpt, infer_corpus, infer_out, infer_mode = "s2";
  int asr_beam = 4, dnc_beam = 4;
  bool oracle_words = false, infer_no_link = false;
  infer_cmd->add_option("--ckpt", infer_ckpt)->required();
  infer_cmd->add_option("--corpus", infer_corpus)->required();
  infer_cmd->add_option("--out", infer_out, "hypothesis TSV")->required();
  infer_cmd->add_option("--mode", infer_mode, "s1 or s2")->capture_default_str();
  infer_cmd->add_option("--beam-asr", asr_beam)->capture_default_str();
  infer_cmd->add_option("--beam-dnc", dnc_beam)->capture_default_str();
  infer_cmd->add_flag("--oracle-words", oracle_words, "teacher-force reference words");
  infer_cmd->add_flag("--no-link", infer_no_link, "parallel baseline decoding");

  // score
  auto* score = app.add_subcommand("score", "score hypotheses or compare two score CSVs");
  std::string score_ref, score_hyp, score_out;
  std::vector<std::string> wilcoxon_files;
  double collar = 0.25;
  score->add_option("--ref", score_ref, "reference TSV");
  score->add_option("--hyp", score_hyp, "hypothesis TSV");
  score->add_option("--out", score_out, "score CSV output path");
  score->add_option("--collar", collar)->capture_default_str();
  score->add_option("--wilcoxon", wilcoxon_files,
                    "two score CSVs: baseline candidate")->expected(2);

  // cda-angles
  auto* cda = app.add_subcommand("cda-angles", "mean absolute rotation angle sweep");
  int cda_dim = 32, cda_samples = 1000;
  std::string cda_scales = "0,1,10,100";
  std::string cda_out;
  cda->add_option("--dim", cda_dim)->capture_default_str();
  cda->add_option("--scales", cda_scales)->capture_default_str();
  cda->add_option("--samples", cda_samples)->capture_default_str();
  cda->add_option("--out", cda_out, "CSV path (stdout when omitted)");

  // run-experiment
  auto* runexp = app.add_subcommand("run-experiment", "train, decode and score variants");
  std::string spec_path;
  runexp->add_option("--spec", spec_path, "experiment spec (key=value)")->required();

  // --seed is accepted after any subcommand as well
  for (auto* sub : {gen, pre_asr, pre_dnc, finetune, infer_cmd, score, cda, runexp})
    sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n" << app.help() << "\n";
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_out, gen_flags, gen_count, gen_single, seed);

    if (pre_asr->parsed() || pre_dnc->parsed() || finetune->parsed()) {
      auto tf = load_train_cfg(config_path);
      if (seed != 0) tf.train.seed = seed;
      auto corpus = sim::read_corpus(corpus_path);

      model::ModelState state =
          init_ckpt.empty() ? model::ModelState(tf.model, tf.train.seed)
                            : model::ModelState::load(init_ckpt);
      if (finetune->parsed()) {
        if (!ft_cda.empty()) {
          auto parts = split(ft_cda, ':');
          if (parts.size() != 2) throw std::runtime_error("--cda wants LO:HI");
          tf.train.cda = true;
          tf.train.cda_lo = std::stod(parts[0]);
          tf.train.cda_hi = std::stod(parts[1]);
        }
        if (ft_no_link) tf.train.link = false;
      }
      train::Trainer trainer(state, tf.train);
      train::PhaseReport report;
      if (pre_asr->parsed()) report = trainer.pretrain_asr(corpus);
      else if (pre_dnc->parsed()) report = trainer.pretrain_dnc(corpus);
      else if (ft_stage == 1) report = trainer.finetune_stage1(corpus);
      else if (ft_stage == 2) report = trainer.finetune_stage2(corpus);
      else throw std::runtime_error("finetune --stage must be 1 or 2");
      state.save(out_ckpt);
      write_phase_log(log_path, report);
      std::cout << report.phase << ": " << report.epochs.size()
                << " epochs, best held-out loss " << report.best_heldout << "\n";
      return 0;
    }

    if (infer_cmd->parsed()) {
      auto corpus = sim::read_corpus(infer_corpus);
      if (corpus.empty()) throw std::runtime_error("empty corpus");
      model::ModelState state = model::ModelState::load(infer_ckpt);
      model::Network net(state);
      auto codebook = sim::FrameCodebook::build(corpus.front().config);
      infer::InferOptions opts;
      if (infer_no_link) opts.mode = infer::Mode::parallel;
      else if (infer_mode == "s1") opts.mode = infer::Mode::s1;
      else if (infer_mode == "s2") opts.mode = infer::Mode::s2;
      else throw std::runtime_error("--mode must be s1 or s2");
      opts.asr_beam = asr_beam;
      opts.dnc_beam = dnc_beam;
      opts.oracle_words = oracle_words;
      std::ostringstream out;
      for (const auto& m : corpus)
        out << infer::hypothesis_lines(m, infer::infer_meeting(net, m, codebook, opts));
      write_text_file(infer_out, out.str());
      std::cout << "wrote " << infer_out << "\n";
      return 0;
    }

    if (score->parsed()) {
      if (!wilcoxon_files.empty()) {
        auto pw = metrics::wilcoxon_from_csvs(read_text_file(wilcoxon_files[0]),
                                              read_text_file(wilcoxon_files[1]));
        std::ostringstream os;
        os << "p_value,n_improved,n_total\n"
           << pw.test.p_one_sided << "," << pw.n_improved << "," << pw.n_total << "\n";
        if (score_out.empty()) std::cout << os.str();
        else write_text_file(score_out, os.str());
        return 0;
      }
      if (score_ref.empty() || score_hyp.empty())
        throw CLI::ValidationError("score", "needs --ref and --hyp (or --wilcoxon)");
      auto ref = metrics::parse_ref_lines(read_text_file(score_ref));
      auto hyp = metrics::parse_hyp_lines(read_text_file(score_hyp));
      auto scores = metrics::score_corpus(ref, hyp, collar);
      std::string csv = metrics::score_csv(scores);
      if (score_out.empty()) std::cout << csv;
      else write_text_file(score_out, csv);
      return 0;
    }

    if (cda->parsed()) {
      std::ostringstream os;
      os << "scale,mean_abs_angle_deg\n";
      for (const auto& s : split(cda_scales, ',')) {
        double scale = std::stod(trim(s));
        double angle = aug::mean_abs_rotation_angle(cda_dim, scale, cda_samples, seed);
        os << format_double(scale) << "," << format_double(angle) << "\n";
      }
      if (cda_out.empty()) std::cout << os.str();
      else write_text_file(cda_out, os.str());
      return 0;
    }

    if (runexp->parsed()) {
      auto spec = harness::ExperimentSpec::from_file(spec_path);
      if (seed != 0) {
        spec.train.seed = seed;
        spec.sim.seed = seed;
      }
      auto reports = harness::run_experiment(spec);
      std::cout << harness::summary_csv(reports);
      return 0;
    }
  } catch (const CLI::Error& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    std::string what = e.what();
    if (what.find("unknown") != std::string::npos) return 2;
    return 1;
  }
  return 0;
}
