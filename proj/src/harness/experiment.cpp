#include "dncasr/harness/experiment.hpp"

#include "dncasr/common.hpp"
#include "dncasr/infer/pipeline.hpp"
#include "dncasr/sim/corpus_io.hpp"
#include "dncasr/sim/generator.hpp"

#include <filesystem>
#include <sstream>

namespace dncasr::harness {

namespace fs = std::filesystem;
using sim::Meeting;

namespace {

bool parse_bool(const std::string& v) {
  if (v == "1" || v == "true" || v == "on") return true;
  if (v == "0" || v == "false" || v == "off") return false;
  throw std::runtime_error("expected a boolean, got: " + v);
}

std::vector<int> parse_int_list(const std::string& v) {
  std::vector<int> out;
  for (const auto& part : split(v, ','))
    if (!trim(part).empty()) out.push_back(std::stoi(trim(part)));
  return out;
}

// Returns true when `key` belongs to the flat train.cfg vocabulary.
bool apply_train_key(TrainFileConfig& cfg, const std::string& key,
                     const std::string& val) {
  auto& m = cfg.model;
  auto& t = cfg.train;
  if (key == "num_blocks") m.num_blocks = std::stoi(val);
  else if (key == "num_heads") m.num_heads = std::stoi(val);
  else if (key == "hidden") m.hidden = std::stoi(val);
  else if (key == "ffn") m.ffn = std::stoi(val);
  else if (key == "vocab") m.vocab = std::stoi(val);
  else if (key == "max_speakers") m.max_speakers = std::stoi(val);
  else if (key == "embed_dim") m.embed_dim = std::stoi(val);
  else if (key == "frame_dim") m.frame_dim = std::stoi(val);
  else if (key == "max_positions") m.max_positions = std::stoi(val);
  else if (key == "lr") t.lr = std::stod(val);
  else if (key == "warmup_frac") t.warmup_frac = std::stod(val);
  else if (key == "optimizer") t.optimizer = val;
  else if (key == "batch_size") t.batch_size = std::stoi(val);
  else if (key == "pretrain_asr_epochs") t.pretrain_asr_epochs = std::stoi(val);
  else if (key == "pretrain_dnc_epochs") t.pretrain_dnc_epochs = std::stoi(val);
  else if (key == "stage1_epochs") t.stage1_epochs = std::stoi(val);
  else if (key == "stage2_epochs") t.stage2_epochs = std::stoi(val);
  else if (key == "length_schedule") t.length_schedule = parse_int_list(val);
  else if (key == "cda_range") {
    if (val == "off") {
      t.cda = false;
    } else {
      auto parts = split(val, ':');
      if (parts.size() != 2) throw std::runtime_error("cda_range wants LO:HI or off");
      t.cda = true;
      t.cda_lo = std::stod(parts[0]);
      t.cda_hi = std::stod(parts[1]);
    }
  } else if (key == "segment_permutation") t.segment_permutation = parse_bool(val);
  else if (key == "wav_recon_weight") t.wav_recon_weight = std::stod(val);
  else if (key == "freeze_asr") t.freeze_asr = parse_bool(val);
  else if (key == "link") t.link = parse_bool(val);
  else if (key == "seed") t.seed = std::stoull(val);
  else return false;
  return true;
}

}  // namespace

TrainFileConfig parse_train_cfg(const std::string& content) {
  TrainFileConfig cfg;
  for (const auto& raw : split(content, '\n')) {
    std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config line is not key=value: " + line);
    std::string key = trim(line.substr(0, eq)), val = trim(line.substr(eq + 1));
    if (!apply_train_key(cfg, key, val))
      throw std::runtime_error("unknown config key: " + key);
  }
  return cfg;
}

std::string render_train_cfg(const TrainFileConfig& cfg) {
  std::ostringstream os;
  const auto& m = cfg.model;
  const auto& t = cfg.train;
  os << "num_blocks=" << m.num_blocks << "\nnum_heads=" << m.num_heads
     << "\nhidden=" << m.hidden << "\nffn=" << m.ffn << "\nvocab=" << m.vocab
     << "\nmax_speakers=" << m.max_speakers << "\nembed_dim=" << m.embed_dim
     << "\nframe_dim=" << m.frame_dim << "\nmax_positions=" << m.max_positions
     << "\nlr=" << format_double(t.lr) << "\nwarmup_frac=" << format_double(t.warmup_frac)
     << "\noptimizer=" << t.optimizer << "\nbatch_size=" << t.batch_size
     << "\npretrain_asr_epochs=" << t.pretrain_asr_epochs
     << "\npretrain_dnc_epochs=" << t.pretrain_dnc_epochs
     << "\nstage1_epochs=" << t.stage1_epochs << "\nstage2_epochs=" << t.stage2_epochs
     << "\nlength_schedule=";
  for (std::size_t i = 0; i < t.length_schedule.size(); ++i)
    os << (i ? "," : "") << t.length_schedule[i];
  os << "\ncda_range=";
  if (t.cda)
    os << format_double(t.cda_lo) << ":" << format_double(t.cda_hi);
  else
    os << "off";
  os << "\nwav_recon_weight=" << format_double(t.wav_recon_weight)
     << "\nsegment_permutation=" << (t.segment_permutation ? "1" : "0")
     << "\nfreeze_asr=" << (t.freeze_asr ? "1" : "0") << "\nlink=" << (t.link ? "1" : "0")
     << "\nseed=" << t.seed << "\n";
  return os.str();
}

ExperimentSpec ExperimentSpec::from_string(const std::string& content) {
  ExperimentSpec spec;
  TrainFileConfig tf;
  for (const auto& raw : split(content, '\n')) {
    std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("spec line is not key=value: " + line);
    std::string key = trim(line.substr(0, eq)), val = trim(line.substr(eq + 1));

    if (key == "variants") {
      spec.variants.clear();
      for (const auto& v : split(val, ','))
        if (!trim(v).empty()) spec.variants.push_back(trim(v));
    } else if (key == "workdir") spec.workdir = val;
    else if (key == "train_corpus") spec.train_corpus = val;
    else if (key == "eval_corpus") spec.eval_corpus = val;
    else if (key == "train_meetings") spec.train_meetings = std::stoi(val);
    else if (key == "eval_meetings") spec.eval_meetings = std::stoi(val);
    else if (key == "pretrain_meetings") spec.pretrain_meetings = std::stoi(val);
    else if (key == "oracle_words") spec.oracle_words = parse_bool(val);
    else if (key == "ckpt_pretrained") spec.ckpt_pretrained = val;
    else if (key == "ckpt_s1") spec.ckpt_s1 = val;
    else if (key == "ckpt_s2") spec.ckpt_s2 = val;
    else if (key == "ckpt_s2_cda") spec.ckpt_s2_cda = val;
    else if (key == "ckpt_parallel") spec.ckpt_parallel = val;
    else if (key == "sim_speakers") spec.sim.num_speakers = std::stoi(val);
    else if (key == "sim_segments") spec.sim.num_segments = std::stoi(val);
    else if (key == "sim_utterances") {
      auto parts = split(val, ':');
      if (parts.size() != 2) throw std::runtime_error("sim_utterances wants LO:HI");
      spec.sim.utterances_min = std::stoi(parts[0]);
      spec.sim.utterances_max = std::stoi(parts[1]);
    } else if (key == "sim_tokens") {
      auto parts = split(val, ':');
      if (parts.size() != 2) throw std::runtime_error("sim_tokens wants LO:HI");
      spec.sim.tokens_min = std::stoi(parts[0]);
      spec.sim.tokens_max = std::stoi(parts[1]);
    } else if (key == "sim_vocab") spec.sim.vocab_size = std::stoi(val);
    else if (key == "sim_max_pairwise_overlap") spec.sim.max_pairwise_overlap = std::stod(val);
    else if (key == "sim_target_overlap") spec.sim.target_meeting_overlap = std::stod(val);
    else if (key == "sim_embed_dim") spec.sim.embed_dim = std::stoi(val);
    else if (key == "sim_frame_dim") spec.sim.frame_dim = std::stoi(val);
    else if (key == "sim_frames_per_token") spec.sim.frames_per_token = std::stoi(val);
    else if (key == "sim_window_len") spec.sim.window_len = std::stod(val);
    else if (key == "sim_window_stride") spec.sim.window_stride = std::stod(val);
    else if (key == "sim_noise_sigma") spec.sim.noise_sigma = std::stod(val);
    else if (key == "sim_seed") spec.sim.seed = std::stoull(val);
    else if (!apply_train_key(tf, key, val))
      throw std::runtime_error("unknown spec key: " + key);
  }
  spec.model = tf.model;
  spec.train = tf.train;
  // model input/output dims follow the simulator
  spec.model.vocab = sim::SpecialTokens::model_vocab(spec.sim.vocab_size);
  spec.model.embed_dim = spec.sim.embed_dim;
  spec.model.frame_dim = spec.sim.frame_dim;
  return spec;
}

ExperimentSpec ExperimentSpec::from_file(const std::string& path) {
  return from_string(read_text_file(path));
}

std::string ExperimentSpec::canonical() const {
  std::ostringstream os;
  os << "variants=";
  for (std::size_t i = 0; i < variants.size(); ++i) os << (i ? "," : "") << variants[i];
  os << "\ntrain_corpus=" << train_corpus << "\neval_corpus=" << eval_corpus
     << "\ntrain_meetings=" << train_meetings << "\neval_meetings=" << eval_meetings
     << "\npretrain_meetings=" << pretrain_meetings
     << "\noracle_words=" << (oracle_words ? "1" : "0") << "\n"
     << sim.canonical() << render_train_cfg({model, train});
  return os.str();
}

std::string ExperimentSpec::digest() const { return hex_digest(canonical()); }

void ExperimentSpec::validate() const {
  sim.validate();
  model.validate();
  train.validate();
  if (model.vocab != sim::SpecialTokens::model_vocab(sim.vocab_size))
    throw std::invalid_argument("model vocab does not match sim vocabulary");
  if (model.max_speakers < sim.num_speakers)
    throw std::invalid_argument("max_speakers below the simulated speaker count");
  for (const auto& v : variants)
    if (v != "parallel-baseline" && v != "dncasr-s1" && v != "dncasr-s2" &&
        v != "dncasr-s2-cda")
      throw std::invalid_argument("unknown variant: " + v);
  if (train_meetings < 1 || eval_meetings < 1 || pretrain_meetings < 1)
    throw std::invalid_argument("meeting counts must be >= 1");
}

namespace {

struct Workspace {
  fs::path dir;
  std::vector<Meeting> train_corpus, eval_corpus, pretrain_corpus;
};

// Corpora share one config (and therefore one frame codebook / acoustic
// world); disjoint meeting-index ranges keep their speaker and structure
// streams independent.
std::vector<Meeting> generate_corpus(const sim::SimConfig& cfg, int count,
                                     std::uint64_t index_offset) {
  std::vector<Meeting> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) out.push_back(sim::gen_meeting(cfg, index_offset + i));
  return out;
}

Workspace prepare_workspace(const ExperimentSpec& spec) {
  spec.validate();
  Workspace ws;
  ws.dir = fs::path(spec.workdir) / spec.digest();
  fs::create_directories(ws.dir);
  write_text_file((ws.dir / "spec.cfg").string(), spec.canonical());

  if (!spec.train_corpus.empty()) {
    ws.train_corpus = sim::read_corpus(spec.train_corpus);
  } else {
    fs::path p = ws.dir / "train.jsonl";
    if (fs::exists(p)) {
      ws.train_corpus = sim::read_corpus(p.string());
    } else {
      ws.train_corpus = generate_corpus(spec.sim, spec.train_meetings, 0);
      sim::write_corpus(p.string(), ws.train_corpus);
    }
  }
  if (!spec.eval_corpus.empty()) {
    ws.eval_corpus = sim::read_corpus(spec.eval_corpus);
  } else {
    fs::path p = ws.dir / "eval.jsonl";
    if (fs::exists(p)) {
      ws.eval_corpus = sim::read_corpus(p.string());
    } else {
      ws.eval_corpus = generate_corpus(spec.sim, spec.eval_meetings, 1000000);
      sim::write_corpus(p.string(), ws.eval_corpus);
    }
  }
  write_text_file((ws.dir / "eval.ref.tsv").string(),
                  sim::reference_lines(ws.eval_corpus));

  // single-speaker-per-segment corpus for DNC pre-training
  fs::path p = ws.dir / "pretrain.jsonl";
  if (fs::exists(p)) {
    ws.pretrain_corpus = sim::read_corpus(p.string());
  } else {
    sim::SimConfig pre = spec.sim;
    pre.utterances_min = pre.utterances_max = 1;
    ws.pretrain_corpus = generate_corpus(pre, spec.pretrain_meetings, 2000000);
    sim::write_corpus(p.string(), ws.pretrain_corpus);
  }
  return ws;
}

void append_log(const fs::path& dir, const train::PhaseReport& report) {
  fs::path log = dir / "train_log.csv";
  std::string existing;
  if (fs::exists(log)) existing = read_text_file(log.string());
  if (existing.empty()) existing = "phase,epoch,dnc_ce,asr_ce,joint,seconds\n";
  write_text_file(log.string(), existing + report.csv());
}

// Builds (or loads) the checkpoint chain needed by `variant` and returns the
// checkpoint path to run inference with.
std::string ensure_checkpoints(const ExperimentSpec& spec, const Workspace& ws,
                               const std::string& variant) {
  auto explicit_or = [&](const std::string& given, const fs::path& fallback) {
    if (!given.empty()) {
      if (!fs::exists(given))
        throw std::runtime_error("checkpoint not found: " + given);
      return given;
    }
    return fallback.string();
  };

  std::string pretrained = explicit_or(spec.ckpt_pretrained, ws.dir / "ckpt-pretrained.dnca");
  if (!fs::exists(pretrained)) {
    model::ModelState state(spec.model, spec.train.seed);
    train::Trainer trainer(state, spec.train);
    append_log(ws.dir, trainer.pretrain_asr(ws.train_corpus));
    append_log(ws.dir, trainer.pretrain_dnc(ws.pretrain_corpus));
    state.save(pretrained);
  }

  // `force_cda` marks the dedicated +CDA variant (scale drawn from [0, 10]
  // per example); other stages keep the spec's base augmentation policy.
  auto run_stage = [&](const std::string& from, const std::string& to, bool link,
                       bool stage1, bool stage2, bool force_cda) {
    if (fs::exists(to)) return;
    model::ModelState state = model::ModelState::load(from);
    train::TrainConfig cfg = spec.train;
    cfg.link = link;
    if (force_cda) {
      cfg.cda = true;
      cfg.cda_lo = 0.0;
      cfg.cda_hi = 10.0;
    }
    train::Trainer trainer(state, cfg);
    if (stage1) append_log(ws.dir, trainer.finetune_stage1(ws.train_corpus));
    if (stage2) append_log(ws.dir, trainer.finetune_stage2(ws.train_corpus));
    state.save(to);
  };

  if (variant == "parallel-baseline") {
    std::string ckpt = explicit_or(spec.ckpt_parallel, ws.dir / "ckpt-parallel.dnca");
    if (!fs::exists(ckpt))
      run_stage(pretrained, ckpt, /*link=*/false, true, true, false);
    return ckpt;
  }

  std::string s1 = explicit_or(spec.ckpt_s1, ws.dir / "ckpt-s1.dnca");
  if (!fs::exists(s1)) run_stage(pretrained, s1, true, true, false, false);
  if (variant == "dncasr-s1") return s1;

  std::string s2 = explicit_or(spec.ckpt_s2, ws.dir / "ckpt-s2.dnca");
  if (!fs::exists(s2)) run_stage(s1, s2, true, false, true, false);
  if (variant == "dncasr-s2") return s2;

  std::string s2cda = explicit_or(spec.ckpt_s2_cda, ws.dir / "ckpt-s2-cda.dnca");
  if (!fs::exists(s2cda)) run_stage(s2, s2cda, true, false, true, true);
  return s2cda;
}

infer::Mode variant_mode(const std::string& variant) {
  if (variant == "parallel-baseline") return infer::Mode::parallel;
  if (variant == "dncasr-s1") return infer::Mode::s1;
  return infer::Mode::s2;
}

}  // namespace

VariantReport run_variant(const ExperimentSpec& spec, const std::string& variant) {
  Workspace ws = prepare_workspace(spec);
  std::string ckpt = ensure_checkpoints(spec, ws, variant);

  model::ModelState state = model::ModelState::load(ckpt);
  model::Network net(state);
  auto codebook = sim::FrameCodebook::build(ws.eval_corpus.front().config);

  infer::InferOptions opts;
  opts.mode = variant_mode(variant);
  opts.oracle_words = spec.oracle_words;

  std::ostringstream hyp;
  for (const auto& meeting : ws.eval_corpus)
    hyp << infer::hypothesis_lines(meeting, infer::infer_meeting(net, meeting, codebook, opts));

  VariantReport report;
  report.variant = variant;
  report.hyp_path = (ws.dir / ("hyp-" + variant + ".tsv")).string();
  write_text_file(report.hyp_path, hyp.str());

  auto ref = metrics::parse_ref_lines(sim::reference_lines(ws.eval_corpus));
  auto hypturns = metrics::parse_hyp_lines(hyp.str());
  report.per_meeting = metrics::score_corpus(ref, hypturns);
  report.pooled = metrics::pooled_score(report.per_meeting);
  report.score_csv_path = (ws.dir / ("score-" + variant + ".csv")).string();
  write_text_file(report.score_csv_path, metrics::score_csv(report.per_meeting));
  return report;
}

std::string summary_csv(const std::vector<VariantReport>& reports) {
  std::ostringstream os;
  os << "variant,wer,cpwer,cpwer_multi,der\n";
  for (const auto& r : reports) {
    std::string multi = "na";
    if (r.pooled.cpwer_multi) {
      char mbuf[32];
      std::snprintf(mbuf, sizeof(mbuf), "%.6f", *r.pooled.cpwer_multi);
      multi = mbuf;
    }
    char buf[200];
    std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%s,%.6f\n", r.variant.c_str(),
                  r.pooled.wer, r.pooled.cpwer, multi.c_str(), r.pooled.der.der);
    os << buf;
  }
  return os.str();
}

std::vector<VariantReport> run_experiment(const ExperimentSpec& spec) {
  std::vector<VariantReport> reports;
  for (const auto& v : spec.variants) reports.push_back(run_variant(spec, v));
  Workspace ws = prepare_workspace(spec);
  write_text_file((ws.dir / "summary.csv").string(), summary_csv(reports));
  return reports;
}

}  // namespace dncasr::harness
