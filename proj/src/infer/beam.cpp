#include "dncasr/infer/beam.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dncasr::infer {

using model::Mat;
using model::Tape;
using model::Var;

std::vector<std::pair<int, int>> turn_spans_from_tokens(const std::vector<int>& tokens,
                                                        const sim::SpecialTokens& sp) {
  std::vector<std::pair<int, int>> spans;
  int start = 0;
  for (int i = 0; i < static_cast<int>(tokens.size()); ++i) {
    if (tokens[i] == sp.sc) {
      spans.emplace_back(start, i + 1);
      start = i + 1;
    }
  }
  if (start < static_cast<int>(tokens.size()))
    spans.emplace_back(start, static_cast<int>(tokens.size()));
  return spans;
}

namespace {

// Log-probabilities for the token after `prefix`; fresh tape per call with the
// cached encoder output lifted as a constant.
Eigen::VectorXd next_token_logprobs(model::Network& net, const Mat& e_w_value,
                                    const std::vector<int>& prefix) {
  std::vector<int> targets = prefix;
  targets.push_back(0);  // dummy slot; causal attention ignores it
  Tape tape(false);
  Var e_w = tape.constant(e_w_value);
  auto fwd = net.asr_decoder_forward(tape, e_w, targets);
  Eigen::RowVectorXd row = tape.val(fwd.logits).row(static_cast<int>(prefix.size()));
  double mx = row.maxCoeff();
  Eigen::ArrayXd e = (row.array() - mx).exp();
  return (e / e.sum()).log().matrix();
}

}  // namespace

AsrSegmentDecode beam_search_asr(model::Network& net, const Mat& frames, int beam_width,
                                 int max_len) {
  if (beam_width < 1) throw std::invalid_argument("beam_width must be >= 1");
  if (max_len < 1) throw std::invalid_argument("max_len must be >= 1");
  const sim::SpecialTokens sp(net.config().vocab - 5);

  Mat e_w_value;
  {
    Tape tape(false);
    e_w_value = tape.val(net.encode_frames(tape, frames));
  }

  std::vector<BeamHypothesis> beams{{{}, 0.0, false, false}};
  std::vector<BeamHypothesis> done;
  for (int step = 0; step < max_len && !beams.empty(); ++step) {
    struct Cand {
      int parent;
      int token;
      double log_prob;
    };
    std::vector<Cand> cands;
    for (int h = 0; h < static_cast<int>(beams.size()); ++h) {
      Eigen::VectorXd lp = next_token_logprobs(net, e_w_value, beams[h].tokens);
      for (int tok = 0; tok < lp.size(); ++tok) {
        if (tok == sp.bos || tok == sp.sbos || tok == sp.pad) continue;
        cands.push_back({h, tok, beams[h].log_prob + lp[tok]});
      }
    }
    std::sort(cands.begin(), cands.end(),
              [](const Cand& a, const Cand& b) { return a.log_prob > b.log_prob; });
    std::vector<BeamHypothesis> next;
    for (const auto& c : cands) {
      if (static_cast<int>(next.size()) >= beam_width) break;
      BeamHypothesis hyp = beams[c.parent];
      hyp.tokens.push_back(c.token);
      hyp.log_prob = c.log_prob;
      if (c.token == sp.eos) {
        hyp.finished = true;
        done.push_back(hyp);
      } else {
        next.push_back(std::move(hyp));
      }
    }
    beams = std::move(next);
  }
  for (auto& hyp : beams) {  // ran out of length without <eos>
    hyp.truncated = true;
    done.push_back(hyp);
  }
  if (done.empty()) throw std::logic_error("beam search produced no hypotheses");
  std::sort(done.begin(), done.end(), [](const BeamHypothesis& a, const BeamHypothesis& b) {
    return a.normalized() > b.normalized();
  });

  AsrSegmentDecode result = teacher_forced_decode(net, frames, done.front().tokens);
  result.truncated = done.front().truncated;
  result.ranked = std::move(done);
  return result;
}

AsrSegmentDecode teacher_forced_decode(model::Network& net, const Mat& frames,
                                       const std::vector<int>& tokens) {
  if (tokens.empty())
    throw std::invalid_argument("teacher_forced_decode: empty token sequence");
  const sim::SpecialTokens sp(net.config().vocab - 5);
  Tape tape(false);
  Var e_w = net.encode_frames(tape, frames);
  auto fwd = net.asr_decoder_forward(tape, e_w, tokens);

  AsrSegmentDecode out;
  out.tokens = tokens;
  out.turn_spans = turn_spans_from_tokens(tokens, sp);
  for (Var v : fwd.w_ca) out.w_ca.push_back(tape.val(v));
  return out;
}

}  // namespace dncasr::infer
