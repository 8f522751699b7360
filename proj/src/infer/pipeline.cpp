#include "dncasr/infer/pipeline.hpp"

#include "dncasr/train/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <sstream>

namespace dncasr::infer {

using model::BoolMat;
using model::LinkInputs;
using model::LinkMode;
using model::Mat;
using model::Tape;
using model::Var;

namespace {

struct LabelBeam {
  std::vector<int> labels;
  double log_prob = 0.0;
  int max_index = -1;
};

// Beam over `decode_count` positions appended to `context`. Masks cover the
// full layout (context + decode positions); scoring slices their top rows.
// Each scoring call uses a fresh tape so memory stays bounded; the encoded
// windows are passed by value and lifted as a constant.
std::vector<int> beam_decode_positions(model::Network& net, const Mat& e_s_value,
                                       const std::vector<int>& context,
                                       int decode_count, const BoolMat& full_mask_s,
                                       const BoolMat& full_mask_l, bool has_pad,
                                       LinkMode mode, const std::vector<Mat>& wca,
                                       int beam_width) {
  const int k_max = net.config().max_speakers;
  int ctx_max = -1;
  for (int c : context) ctx_max = std::max(ctx_max, c);

  std::vector<LabelBeam> beams{{{}, 0.0, ctx_max}};
  for (int pos = 0; pos < decode_count; ++pos) {
    struct Cand {
      int parent;
      int label;
      double log_prob;
    };
    std::vector<Cand> cands;
    for (int h = 0; h < static_cast<int>(beams.size()); ++h) {
      std::vector<int> targets = context;
      targets.insert(targets.end(), beams[h].labels.begin(), beams[h].labels.end());
      targets.push_back(0);  // dummy; causal self-attention ignores it
      const int len = static_cast<int>(targets.size());

      Tape tape(false);
      Var e_s = tape.constant(e_s_value);
      model::AttnMaskSet masks;
      masks.mask_s = full_mask_s.topRows(len);
      LinkInputs link;
      if (mode != LinkMode::absent) {
        link.mode = mode;
        for (const auto& m : wca) link.w_ca.push_back(tape.constant(m));
        masks.mask_l = full_mask_l.topRows(len);
        masks.has_pad_slot = has_pad;
      }
      auto fwd = net.dnc_decoder_forward(tape, e_s, link, masks, targets);
      Eigen::RowVectorXd row = tape.val(fwd.logits).row(len - 1);
      double mx = row.maxCoeff();
      Eigen::ArrayXd lp = (row.array() - mx).exp();
      lp = (lp / lp.sum()).log();

      // prefix closure: index k only after 0..k-1 have appeared
      int allowed_max = std::min(beams[h].max_index + 1, k_max - 1);
      for (int label = 0; label <= allowed_max; ++label)
        cands.push_back({h, label, beams[h].log_prob + lp[label]});
    }
    std::sort(cands.begin(), cands.end(),
              [](const Cand& a, const Cand& b) { return a.log_prob > b.log_prob; });
    std::vector<LabelBeam> next;
    for (const auto& c : cands) {
      if (static_cast<int>(next.size()) >= beam_width) break;
      LabelBeam nb = beams[c.parent];
      nb.labels.push_back(c.label);
      nb.log_prob = c.log_prob;
      nb.max_index = std::max(nb.max_index, c.label);
      next.push_back(std::move(nb));
    }
    beams = std::move(next);
  }
  return beams.front().labels;
}

}  // namespace

std::vector<int> decode_speakers_stage1(model::Network& net,
                                        const sim::EmbeddingSequence& windows,
                                        const std::vector<AsrSegmentDecode>& asr,
                                        int beam_width) {
  if (asr.size() != windows.segment_spans.size())
    throw std::invalid_argument("stage1 decode: segment count mismatch");
  const int num_windows = static_cast<int>(windows.windows.rows());
  Mat e_s_value;
  {
    Tape tape(false);
    e_s_value = tape.val(net.encode_windows(tape, windows.windows));
  }

  std::vector<int> context;
  std::vector<int> context_segs;
  for (int seg = 0; seg < static_cast<int>(asr.size()); ++seg) {
    const int turns = asr[seg].turn_count();
    if (turns == 0) {
      std::cerr << "warning: segment " << seg << " decoded zero turns, skipped\n";
      continue;
    }
    std::vector<int> pos_to_seg = context_segs;
    pos_to_seg.insert(pos_to_seg.end(), turns, seg);
    BoolMat mask_s = model::build_mask_s(windows.segment_spans, pos_to_seg, num_windows);
    BoolMat mask_l = model::build_mask_l(asr[seg].turn_spans, LinkMode::stage1,
                                         static_cast<int>(context.size()),
                                         static_cast<int>(asr[seg].tokens.size()));
    auto labels =
        beam_decode_positions(net, e_s_value, context, turns, mask_s, mask_l,
                              /*has_pad=*/true, LinkMode::stage1, asr[seg].w_ca,
                              beam_width);
    context.insert(context.end(), labels.begin(), labels.end());
    context_segs.insert(context_segs.end(), turns, seg);
  }
  return context;
}

std::vector<int> decode_speakers_stage2(model::Network& net,
                                        const sim::EmbeddingSequence& windows,
                                        const std::vector<AsrSegmentDecode>& asr,
                                        int beam_width, bool linked) {
  if (asr.size() != windows.segment_spans.size())
    throw std::invalid_argument("stage2 decode: segment count mismatch");
  const int num_windows = static_cast<int>(windows.windows.rows());
  const int num_blocks = net.config().num_blocks;

  std::vector<int> pos_to_seg;
  std::vector<std::pair<int, int>> global_spans;
  int token_offset = 0;
  std::vector<Mat> wca(num_blocks);
  for (int b = 0; b < num_blocks; ++b) wca[b].resize(0, net.config().hidden);
  for (int seg = 0; seg < static_cast<int>(asr.size()); ++seg) {
    const int turns = asr[seg].turn_count();
    if (turns == 0) {
      std::cerr << "warning: segment " << seg << " decoded zero turns, skipped\n";
      continue;
    }
    for (const auto& [b, e] : asr[seg].turn_spans)
      global_spans.emplace_back(token_offset + b, token_offset + e);
    pos_to_seg.insert(pos_to_seg.end(), turns, seg);
    token_offset += static_cast<int>(asr[seg].tokens.size());
    if (linked)
      for (int b = 0; b < num_blocks; ++b) {
        Mat joined(wca[b].rows() + asr[seg].w_ca[b].rows(), net.config().hidden);
        joined << wca[b], asr[seg].w_ca[b];
        wca[b] = std::move(joined);
      }
  }
  if (pos_to_seg.empty()) return {};

  BoolMat mask_s = model::build_mask_s(windows.segment_spans, pos_to_seg, num_windows);
  BoolMat mask_l;
  if (linked)
    mask_l = model::build_mask_l(global_spans, LinkMode::stage2, 0, token_offset);

  Mat e_s_value;
  {
    Tape tape(false);
    e_s_value = tape.val(net.encode_windows(tape, windows.windows));
  }
  return beam_decode_positions(net, e_s_value, {}, static_cast<int>(pos_to_seg.size()),
                               mask_s, mask_l, /*has_pad=*/false,
                               linked ? LinkMode::stage2 : LinkMode::absent, wca,
                               beam_width);
}

AttributedTranscript assemble(const std::vector<AsrSegmentDecode>& asr,
                              const std::vector<int>& speaker_indices,
                              const sim::SpecialTokens& sp) {
  int total_turns = 0;
  for (const auto& seg : asr) total_turns += seg.turn_count();
  if (total_turns != static_cast<int>(speaker_indices.size()))
    throw std::invalid_argument("assemble: speaker index count does not match turns");

  AttributedTranscript out;
  int at = 0;
  for (const auto& seg : asr) {
    std::vector<AttributedTurn> turns;
    for (const auto& [b, e] : seg.turn_spans) {
      AttributedTurn turn;
      turn.speaker_index = speaker_indices[at++];
      for (int i = b; i < e; ++i)
        if (seg.tokens[i] != sp.sc && seg.tokens[i] != sp.eos)
          turn.tokens.push_back(seg.tokens[i]);
      turns.push_back(std::move(turn));
    }
    out.segments.push_back(std::move(turns));
  }
  return out;
}

AttributedTranscript infer_meeting(model::Network& net, const sim::Meeting& meeting,
                                   const sim::FrameCodebook& codebook,
                                   const InferOptions& options) {
  const sim::SpecialTokens sp(meeting.config.vocab_size);
  auto windows = sim::emit_window_embeddings(meeting);
  auto order = sim::first_appearance_order(meeting);

  std::vector<AsrSegmentDecode> asr;
  for (int seg = 0; seg < static_cast<int>(meeting.segments.size()); ++seg) {
    Mat frames = sim::segment_frame_features(meeting, seg, codebook);
    if (options.oracle_words) {
      auto st = sim::serialize_targets(meeting.segments[seg], order, meeting.config);
      asr.push_back(teacher_forced_decode(net, frames, st.tokens));
    } else {
      int max_len = static_cast<int>(2.0 * meeting.segments[seg].span()) + 8;
      asr.push_back(beam_search_asr(net, frames, options.asr_beam, max_len));
    }
  }

  std::vector<int> labels;
  switch (options.mode) {
    case Mode::s1:
      labels = decode_speakers_stage1(net, windows, asr, options.dnc_beam);
      break;
    case Mode::s2:
      labels = decode_speakers_stage2(net, windows, asr, options.dnc_beam, true);
      break;
    case Mode::parallel:
      labels = decode_speakers_stage2(net, windows, asr, options.dnc_beam, false);
      break;
  }
  return assemble(asr, labels, sp);
}

std::string hypothesis_lines(const sim::Meeting& meeting,
                             const AttributedTranscript& transcript) {
  std::ostringstream os;
  for (std::size_t s = 0; s < transcript.segments.size(); ++s) {
    for (std::size_t t = 0; t < transcript.segments[s].size(); ++t) {
      const auto& turn = transcript.segments[s][t];
      os << meeting.id << "\t" << s << "\t" << t << "\tspk" << turn.speaker_index
         << "\t";
      for (std::size_t k = 0; k < turn.tokens.size(); ++k)
        os << (k ? " " : "") << turn.tokens[k];
      os << "\n";
    }
  }
  return os.str();
}

}  // namespace dncasr::infer
