// Shared fixtures for the unit and acceptance suites: tiny model/meeting
// builders, the finite-difference gradient checker, random mask scenarios,
// and a brute-force minimum-permutation WER oracle.
#pragma once

#include "dncasr/metrics/wer.hpp"
#include "dncasr/model/network.hpp"
#include "dncasr/sim/generator.hpp"
#include "dncasr/train/trainer.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace testutil {

using dncasr::model::BoolMat;
using dncasr::model::LinkInputs;
using dncasr::model::LinkMode;
using dncasr::model::Mat;
using dncasr::model::ModelConfig;
using dncasr::model::ModelState;
using dncasr::model::Network;
using dncasr::model::Tape;
using dncasr::model::Var;

inline ModelConfig tiny_model_config(int vocab_words = 9, int k_max = 3) {
  ModelConfig cfg;
  cfg.num_blocks = 2;
  cfg.num_heads = 2;
  cfg.hidden = 12;
  cfg.ffn = 20;
  cfg.vocab = dncasr::sim::SpecialTokens::model_vocab(vocab_words);
  cfg.max_speakers = k_max;
  cfg.embed_dim = 5;
  cfg.frame_dim = 4;
  cfg.max_positions = 64;
  return cfg;
}

// The link output projections are zero at construction (they fade in during
// fine-tuning); gradient and mask checks want a mid-training-like state, so
// give them nontrivial values.
inline void randomize_link(ModelState& state, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 0.3);
  for (auto& p : state.parameters())
    if (p.name.find("link_attn.wo") != std::string::npos)
      for (int i = 0; i < p.value.rows(); ++i)
        for (int j = 0; j < p.value.cols(); ++j) p.value(i, j) = normal(rng);
}

inline Mat random_mat(int rows, int cols, std::uint64_t seed, double sigma = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, sigma);
  Mat m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = normal(rng);
  return m;
}

// A synthetic stage-1 style scenario: window rows spanning several segments,
// frames for the current segment, serialized tokens with spans, and the DNC
// target layout. Everything is plain data so callers control the masks.
struct Stage1Scenario {
  Mat windows;                                       // all segments
  std::vector<std::pair<int, int>> window_spans;     // per segment
  Mat frames;                                        // current segment
  std::vector<int> tokens;                           // serialized, ends <eos>
  std::vector<std::pair<int, int>> turn_spans;       // over tokens
  std::vector<int> speaker_targets;                  // context + current turns
  std::vector<int> position_to_segment;
  int context_positions = 0;
  int current_segment = 0;
};

inline Stage1Scenario make_stage1_scenario(const ModelConfig& cfg, std::uint64_t seed,
                                           int num_segments = 3, int current = 2) {
  std::mt19937_64 rng(seed);
  auto rnd_int = [&](int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(rng);
  };
  Stage1Scenario sc;
  sc.current_segment = current;
  int window_at = 0;
  std::vector<int> turns_per_segment;
  for (int s = 0; s < num_segments; ++s) {
    int nw = rnd_int(2, 4);
    sc.window_spans.emplace_back(window_at, window_at + nw);
    window_at += nw;
    turns_per_segment.push_back(rnd_int(1, std::min(2, cfg.max_speakers)));
  }
  sc.windows = random_mat(window_at, cfg.embed_dim, seed ^ 0x11, 1.0);

  // serialized tokens for the current segment
  const dncasr::sim::SpecialTokens sp(cfg.vocab - 5);
  int cur_turns = turns_per_segment[current];
  for (int t = 0; t < cur_turns; ++t) {
    int begin = static_cast<int>(sc.tokens.size());
    int n_tok = rnd_int(1, 3);
    for (int k = 0; k < n_tok; ++k) sc.tokens.push_back(rnd_int(0, cfg.vocab - 6));
    sc.tokens.push_back(t + 1 < cur_turns ? sp.sc : sp.eos);
    sc.turn_spans.emplace_back(begin, static_cast<int>(sc.tokens.size()));
  }
  sc.frames = random_mat(rnd_int(4, 8), cfg.frame_dim, seed ^ 0x22, 1.0);

  // speaker targets: prefix-closed indices over segments [0, current]
  int max_idx = -1;
  for (int s = 0; s <= current; ++s) {
    for (int t = 0; t < turns_per_segment[s]; ++t) {
      int hi = std::min(max_idx + 1, cfg.max_speakers - 1);
      int idx = rnd_int(0, hi);
      max_idx = std::max(max_idx, idx);
      sc.speaker_targets.push_back(idx);
      sc.position_to_segment.push_back(s);
      if (s < current) ++sc.context_positions;
    }
  }
  return sc;
}

// Joint stage-1 forward over the scenario; returns the scalar loss var.
inline Var scenario_joint_loss(Network& net, Tape& tape, const Stage1Scenario& sc,
                               const Mat* windows_override = nullptr,
                               const std::vector<Mat>* wca_override = nullptr) {
  Var e_s = net.encode_windows(tape, windows_override ? *windows_override : sc.windows);
  Var e_w = net.encode_frames(tape, sc.frames);
  auto asrf = net.asr_decoder_forward(tape, e_w, sc.tokens);
  Var asr_ce = tape.mean_cross_entropy(asrf.logits, sc.tokens);

  dncasr::model::AttnMaskSet masks;
  masks.mask_s = dncasr::model::build_mask_s(
      sc.window_spans, sc.position_to_segment,
      static_cast<int>((windows_override ? *windows_override : sc.windows).rows()));
  masks.mask_l = dncasr::model::build_mask_l(sc.turn_spans, LinkMode::stage1,
                                             sc.context_positions,
                                             static_cast<int>(sc.tokens.size()));
  masks.has_pad_slot = true;
  LinkInputs link;
  link.mode = LinkMode::stage1;
  if (wca_override) {
    for (const auto& m : *wca_override) link.w_ca.push_back(tape.constant(m));
  } else {
    link.w_ca = asrf.w_ca;
  }
  auto dncf = net.dnc_decoder_forward(tape, e_s, link, masks, sc.speaker_targets);
  Var dnc_ce = tape.mean_cross_entropy(dncf.logits, sc.speaker_targets);
  return tape.add(dnc_ce, asr_ce);
}

// Mask-soundness probe. Eq. 1: windows of a segment that no decoded position
// attends (a future segment) are perturbed by +-1e3; every output must stay
// put. Eq. 2: the last turn's W_CA rows are perturbed; all outputs at
// positions strictly before that turn must stay put (later positions may see
// the change through causal self-attention).
struct MaskProbeResult {
  double eq1_delta = 0.0;
  double eq2_delta = 0.0;
};

inline MaskProbeResult mask_soundness_probe(Network& net, const ModelConfig& cfg,
                                            std::uint64_t seed) {
  auto sc = make_stage1_scenario(cfg, seed, /*num_segments=*/4, /*current=*/2);
  const int num_windows = static_cast<int>(sc.windows.rows());
  const int positions = static_cast<int>(sc.speaker_targets.size());
  const int tokens = static_cast<int>(sc.tokens.size());

  Mat e_s = random_mat(num_windows, cfg.hidden, seed ^ 0xaa);
  std::vector<Mat> wca;
  for (int b = 0; b < cfg.num_blocks; ++b)
    wca.push_back(random_mat(tokens, cfg.hidden, seed ^ (0xbb + b)));

  dncasr::model::AttnMaskSet masks;
  masks.mask_s = dncasr::model::build_mask_s(sc.window_spans, sc.position_to_segment,
                                             num_windows);
  masks.mask_l = dncasr::model::build_mask_l(sc.turn_spans, LinkMode::stage1,
                                             sc.context_positions, tokens);
  masks.has_pad_slot = true;

  auto run = [&](const Mat& e_s_rows, const std::vector<Mat>& wca_rows) {
    Tape t(false);
    LinkInputs link;
    link.mode = LinkMode::stage1;
    for (const auto& m : wca_rows) link.w_ca.push_back(t.constant(m));
    auto fwd = net.dnc_decoder_forward(t, t.constant(e_s_rows), link, masks,
                                       sc.speaker_targets);
    return t.val(fwd.logits);
  };

  Mat base = run(e_s, wca);

  MaskProbeResult out;
  // Eq. 1: rows of the never-attended fourth segment
  Mat e_s_pert = e_s;
  for (int w = sc.window_spans[3].first; w < sc.window_spans[3].second; ++w)
    e_s_pert.row(w).array() += (w % 2 == 0) ? 1e3 : -1e3;
  out.eq1_delta = (run(e_s_pert, wca) - base).cwiseAbs().maxCoeff();

  // Eq. 2: rows of the last turn's span, compared on earlier positions
  auto [lb, le] = sc.turn_spans.back();
  std::vector<Mat> wca_pert = wca;
  for (auto& m : wca_pert)
    for (int r = lb; r < le; ++r) m.row(r).array() += (r % 2 == 0) ? 1e3 : -1e3;
  Mat after = run(e_s, wca_pert);
  out.eq2_delta =
      (after.topRows(positions - 1) - base.topRows(positions - 1)).cwiseAbs().maxCoeff();
  return out;
}

struct GradCheckReport {
  std::string worst_tensor;
  double worst_rel_err = 0.0;
  int tensors_checked = 0;
};

// Central finite differences on a deterministic scalar loss of the state.
// Samples up to `entries_per_tensor` coordinates of every trainable tensor.
inline GradCheckReport gradient_check(ModelState& state,
                                      const std::function<double()>& loss_value,
                                      const std::function<void()>& accumulate_grads,
                                      double eps = 1e-4,
                                      int entries_per_tensor = 12,
                                      std::uint64_t seed = 7) {
  state.zero_grads();
  accumulate_grads();

  GradCheckReport report;
  std::mt19937_64 rng(seed);
  for (auto& p : state.parameters()) {
    if (!p.trainable) continue;
    const int n = static_cast<int>(p.value.size());
    std::vector<int> picks(n);
    std::iota(picks.begin(), picks.end(), 0);
    if (n > entries_per_tensor) {
      std::shuffle(picks.begin(), picks.end(), rng);
      picks.resize(entries_per_tensor);
    }
    double num2 = 0.0, den2 = 0.0;
    for (int flat : picks) {
      double* cell = p.value.data() + flat;
      double saved = *cell;
      *cell = saved + eps;
      double up = loss_value();
      *cell = saved - eps;
      double down = loss_value();
      *cell = saved;
      double fd = (up - down) / (2.0 * eps);
      double analytic = *(p.grad.data() + flat);
      num2 += (fd - analytic) * (fd - analytic);
      den2 += fd * fd + analytic * analytic;
    }
    double rel = std::sqrt(num2) / std::max(1e-10, std::sqrt(den2));
    ++report.tensors_checked;
    if (rel > report.worst_rel_err) {
      report.worst_rel_err = rel;
      report.worst_tensor = p.name;
    }
  }
  return report;
}

// Brute-force cpWER: minimum over all permutations of padded stream sets.
inline double brute_force_cpwer(const dncasr::metrics::TokenStreams& ref,
                                const dncasr::metrics::TokenStreams& hyp) {
  using dncasr::metrics::edit_distance;
  std::vector<const std::vector<std::string>*> refs, hyps;
  for (const auto& [id, words] : ref) refs.push_back(&words);
  for (const auto& [id, words] : hyp) hyps.push_back(&words);
  static const std::vector<std::string> empty;
  std::size_t n = std::max(refs.size(), hyps.size());
  while (refs.size() < n) refs.push_back(&empty);
  while (hyps.size() < n) hyps.push_back(&empty);

  long long ref_words = 0;
  for (const auto* r : refs) ref_words += static_cast<long long>(r->size());

  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  long long best = std::numeric_limits<long long>::max();
  do {
    long long total = 0;
    for (std::size_t i = 0; i < n; ++i)
      total += edit_distance(*refs[i], *hyps[perm[i]]).total();
    best = std::min(best, total);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return static_cast<double>(best) / static_cast<double>(ref_words);
}

inline dncasr::metrics::TokenStreams random_streams(std::mt19937_64& rng, int max_streams,
                                                    int vocab, bool allow_empty_side) {
  std::uniform_int_distribution<int> n_streams(allow_empty_side ? 0 : 1, max_streams);
  std::uniform_int_distribution<int> len(0, 6);
  std::uniform_int_distribution<int> word(0, vocab - 1);
  dncasr::metrics::TokenStreams out;
  int n = n_streams(rng);
  for (int i = 0; i < n; ++i) {
    std::vector<std::string> words;
    int l = len(rng);
    for (int k = 0; k < l; ++k) words.push_back("w" + std::to_string(word(rng)));
    out["s" + std::to_string(i)] = std::move(words);
  }
  return out;
}

}  // namespace testutil
