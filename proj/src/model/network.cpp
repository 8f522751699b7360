#include "dncasr/model/network.hpp"

#include <cmath>
#include <stdexcept>

namespace dncasr::model {

Var scaled_dot_attention(Tape& t, Var q, Var k, Var v, const BoolMat* allowed) {
  if (t.val(q).cols() != t.val(k).cols())
    throw std::invalid_argument("attention q/k width mismatch");
  if (t.val(k).rows() != t.val(v).rows())
    throw std::invalid_argument("attention k/v length mismatch");
  double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(t.val(q).cols()));
  Var scores = t.scale(t.matmul_nt(q, k), inv_sqrt_d);
  Var weights = t.softmax_rows(scores, allowed);
  return t.matmul(weights, v);
}

Var Network::mha(Tape& t, Var q_in, Var kv_in, const std::string& prefix,
                 const BoolMat* mask) {
  const int heads = config().num_heads;
  const int dh = config().hidden / heads;
  Var q = t.matmul(q_in, t.param(state_.at(prefix + ".wq")));
  Var k = t.matmul(kv_in, t.param(state_.at(prefix + ".wk")));
  Var v = t.matmul(kv_in, t.param(state_.at(prefix + ".wv")));
  std::vector<Var> outs;
  outs.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    Var qh = t.slice_cols(q, h * dh, dh);
    Var kh = t.slice_cols(k, h * dh, dh);
    Var vh = t.slice_cols(v, h * dh, dh);
    outs.push_back(scaled_dot_attention(t, qh, kh, vh, mask));
  }
  return t.matmul(t.concat_cols(outs), t.param(state_.at(prefix + ".wo")));
}

Var Network::ffn(Tape& t, Var x, const std::string& prefix) {
  Var h = t.add_rowvec(t.matmul(x, t.param(state_.at(prefix + ".w1"))),
                       t.param(state_.at(prefix + ".b1")));
  h = t.relu(h);
  return t.add_rowvec(t.matmul(h, t.param(state_.at(prefix + ".w2"))),
                      t.param(state_.at(prefix + ".b2")));
}

Var Network::ln(Tape& t, Var x, const std::string& prefix) {
  return t.layer_norm(x, t.param(state_.at(prefix + ".g")),
                      t.param(state_.at(prefix + ".b")));
}

Var Network::add_pe(Tape& t, Var x, const std::string& net, int pe_offset,
                    const std::vector<int>& pe_indices) {
  const Mat& pe = state_.at(net + ".pe").value;
  int n = static_cast<int>(t.val(x).rows());
  if (!pe_indices.empty()) {
    if (static_cast<int>(pe_indices.size()) != n)
      throw std::invalid_argument("pe index count mismatch");
    Mat rows(n, pe.cols());
    for (int i = 0; i < n; ++i) {
      if (pe_indices[i] < 0 || pe_indices[i] >= pe.rows())
        throw std::runtime_error("pe index beyond max_positions");
      rows.row(i) = pe.row(pe_indices[i]);
    }
    return t.add(x, t.constant(std::move(rows)));
  }
  if (pe_offset < 0 || pe_offset + n > pe.rows())
    throw std::runtime_error("sequence beyond max_positions (" +
                             std::to_string(pe_offset + n) + " > " +
                             std::to_string(pe.rows()) + ")");
  return t.add(x, t.constant(pe.middleRows(pe_offset, n)));
}

Var Network::encode(Tape& t, const Mat& input, const std::string& net, int pe_offset,
                    const std::vector<int>& pe_indices) {
  if (input.rows() == 0) throw std::invalid_argument(net + ": empty input");
  Var x = t.add_rowvec(t.matmul(t.constant(input), t.param(state_.at(net + ".in_proj.w"))),
                       t.param(state_.at(net + ".in_proj.b")));
  // bring the projected content up to the positional-encoding scale
  x = t.scale(x, std::sqrt(static_cast<double>(config().hidden)));
  x = add_pe(t, x, net, pe_offset, pe_indices);
  for (int b = 0; b < config().num_blocks; ++b) {
    std::string blk = net + ".block" + std::to_string(b);
    x = ln(t, t.add(x, mha(t, x, x, blk + ".self_attn", nullptr)), blk + ".ln1");
    x = ln(t, t.add(x, ffn(t, x, blk + ".ffn")), blk + ".ln2");
  }
  return x;
}

int Network::bos_id() const { return config().vocab - 5; }

AsrForward Network::asr_decoder_forward(Tape& t, Var e_w,
                                        const std::vector<int>& targets) {
  if (targets.empty()) throw std::invalid_argument("asr decoder: empty targets");
  for (int id : targets)
    if (id < 0 || id >= config().vocab)
      throw std::invalid_argument("asr decoder: token id out of vocab");

  std::vector<int> input_ids;
  input_ids.reserve(targets.size());
  input_ids.push_back(bos_id());
  input_ids.insert(input_ids.end(), targets.begin(), targets.end() - 1);

  Var x = t.select_rows(t.param(state_.at("asr_dec.embed")), input_ids);
  x = add_pe(t, x, "asr_dec", 0, {});
  BoolMat causal = causal_mask(static_cast<int>(targets.size()));

  AsrForward out;
  for (int b = 0; b < config().num_blocks; ++b) {
    std::string blk = "asr_dec.block" + std::to_string(b);
    x = ln(t, t.add(x, mha(t, x, x, blk + ".self_attn", &causal)), blk + ".ln1");
    Var ca = mha(t, x, e_w, blk + ".cross_attn", nullptr);
    out.w_ca.push_back(ca);
    x = ln(t, t.add(x, ca), blk + ".ln2");
    x = ln(t, t.add(x, ffn(t, x, blk + ".ffn")), blk + ".ln3");
  }
  out.logits = t.add_rowvec(t.matmul(x, t.param(state_.at("asr_dec.out_proj.w"))),
                            t.param(state_.at("asr_dec.out_proj.b")));
  return out;
}

DncForward Network::dnc_decoder_forward(Tape& t, Var e_s, const LinkInputs& link,
                                        const AttnMaskSet& masks,
                                        const std::vector<int>& target_indices) {
  const int n = static_cast<int>(target_indices.size());
  if (n == 0) throw std::invalid_argument("dnc decoder: empty targets");
  for (int id : target_indices)
    if (id < 0 || id >= config().max_speakers)
      throw std::invalid_argument("dnc decoder: speaker index out of range");
  if (masks.mask_s.rows() != n || masks.mask_s.cols() != t.val(e_s).rows())
    throw std::invalid_argument("mask_s shape mismatch");
  const bool linked = link.mode != LinkMode::absent;
  if (linked) {
    if (static_cast<int>(link.w_ca.size()) != config().num_blocks)
      throw std::invalid_argument("link inputs must cover every block");
    if (masks.mask_l.rows() != n)
      throw std::invalid_argument("mask_l position count mismatch");
    int expect_cols = static_cast<int>(t.val(link.w_ca[0]).rows()) +
                      (masks.has_pad_slot ? 1 : 0);
    if (masks.mask_l.cols() != expect_cols)
      throw std::invalid_argument("mask_l does not match the W_CA rows");
  }

  std::vector<int> input_rows;
  input_rows.reserve(n);
  input_rows.push_back(sbos_row());
  input_rows.insert(input_rows.end(), target_indices.begin(), target_indices.end() - 1);

  Var x = t.select_rows(t.param(state_.at("dnc_dec.embed")), input_rows);
  x = add_pe(t, x, "dnc_dec", 0, {});
  BoolMat causal = causal_mask(n);

  for (int b = 0; b < config().num_blocks; ++b) {
    std::string blk = "dnc_dec.block" + std::to_string(b);
    x = ln(t, t.add(x, mha(t, x, x, blk + ".self_attn", &causal)), blk + ".ln1");
    Var sca = mha(t, x, e_s, blk + ".spk_attn", &masks.mask_s);
    x = ln(t, t.add(x, sca), blk + ".ln2");
    // ln3 is applied in every mode and the link's output projection starts
    // at zero, so turning the link on after pre-training is function
    // preserving: the fresh module fades in through training instead of
    // scrambling the pre-trained stream.
    if (linked) {
      Var keys = link.w_ca[b];
      if (masks.has_pad_slot)
        keys = t.concat_rows({keys, t.param(state_.at("link_pad"))});
      Var lca = mha(t, x, keys, blk + ".link_attn", &masks.mask_l);
      x = ln(t, t.add(x, lca), blk + ".ln3");
    } else {
      x = ln(t, x, blk + ".ln3");
    }
    x = ln(t, t.add(x, ffn(t, x, blk + ".ffn")), blk + ".ln4");
  }
  DncForward out;
  out.logits = t.add_rowvec(t.matmul(x, t.param(state_.at("dnc_dec.out_proj.w"))),
                            t.param(state_.at("dnc_dec.out_proj.b")));
  return out;
}

Var Network::joint_loss(Tape& t, Var speaker_logits,
                        const std::vector<int>& speaker_targets, Var word_logits,
                        const std::vector<int>& word_targets) {
  Var dnc_ce = t.mean_cross_entropy(speaker_logits, speaker_targets);
  Var asr_ce = t.mean_cross_entropy(word_logits, word_targets);
  return t.add(dnc_ce, asr_ce);
}

}  // namespace dncasr::model
