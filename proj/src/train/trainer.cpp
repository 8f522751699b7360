#include "dncasr/train/trainer.hpp"

#include "dncasr/augment/rotation.hpp"
#include "dncasr/common.hpp"
#include "dncasr/train/optimizer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

namespace dncasr::train {

using model::LinkInputs;
using model::LinkMode;
using model::Mat;
using model::Tape;
using model::Var;
using sim::Meeting;

void TrainConfig::validate() const {
  if (lr <= 0.0) throw std::invalid_argument("lr must be positive");
  if (warmup_frac <= 0.0 || warmup_frac >= 1.0)
    throw std::invalid_argument("warmup_frac must be in (0, 1)");
  if (optimizer != "adam") throw std::invalid_argument("unknown optimizer: " + optimizer);
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (length_schedule.empty())
    throw std::invalid_argument("length_schedule must not be empty");
  for (std::size_t i = 1; i < length_schedule.size(); ++i)
    if (length_schedule[i] < length_schedule[i - 1])
      throw std::invalid_argument("length_schedule must be nondecreasing");
  if (cda && !(cda_lo <= cda_hi)) throw std::invalid_argument("bad cda range");
}

std::string PhaseReport::csv() const {
  std::ostringstream os;
  for (const auto& e : epochs) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%s,%d,%.6f,%.6f,%.6f,%.3f\n", phase.c_str(),
                  e.epoch, e.dnc_ce, e.asr_ce, e.joint, e.seconds);
    os << buf;
  }
  return os.str();
}

DncTargets build_dnc_targets(const Meeting& meeting) {
  DncTargets t;
  auto order = sim::first_appearance_order(meeting);
  int token_offset = 0;
  for (std::size_t s = 0; s < meeting.segments.size(); ++s) {
    auto st = sim::serialize_targets(meeting.segments[s], order, meeting.config);
    for (std::size_t k = 0; k < st.speaker_indices.size(); ++k) {
      t.indices.push_back(st.speaker_indices[k]);
      t.position_to_segment.push_back(static_cast<int>(s));
      t.global_token_spans.emplace_back(token_offset + st.turn_token_spans[k].first,
                                        token_offset + st.turn_token_spans[k].second);
    }
    token_offset += static_cast<int>(st.tokens.size());
    t.per_segment.push_back(std::move(st));
  }
  t.total_tokens = token_offset;
  return t;
}

struct Trainer::MeetingData {
  const Meeting* meeting = nullptr;
  sim::EmbeddingSequence windows;
  std::vector<Mat> frames;  // per segment; invariant to segment reordering
  DncTargets targets;
};

// A training example is a (possibly permuted) ordering of one meeting's
// segments. Window rows and speaker-index targets depend on the ordering;
// per-segment frames and W_CA features do not and are reached through
// `segment_map`.
struct Trainer::ExampleView {
  const MeetingData* base = nullptr;
  const sim::EmbeddingSequence* windows = nullptr;
  const DncTargets* targets = nullptr;
  std::vector<int> segment_map;  // view segment -> original segment

  sim::EmbeddingSequence windows_store;
  DncTargets targets_store;

  const Mat& frames_of(int view_segment) const {
    return base->frames[segment_map[view_segment]];
  }
  int num_segments() const { return static_cast<int>(segment_map.size()); }
};

namespace {

void check_corpus(const std::vector<Meeting>& corpus) {
  if (corpus.empty()) throw std::invalid_argument("empty corpus");
  const std::string digest = corpus.front().config.digest();
  for (const auto& m : corpus)
    if (m.config.digest() != digest)
      throw std::invalid_argument("corpus mixes meeting configurations");
}

struct Snapshot {
  std::vector<Mat> values;
  static Snapshot capture(const model::ModelState& s) {
    Snapshot snap;
    for (const auto& p : s.parameters()) snap.values.push_back(p.value);
    return snap;
  }
  void restore(model::ModelState& s) const {
    auto& params = s.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) params[i].value = values[i];
  }
};

double finite_or_throw(double v, const char* phase) {
  if (!std::isfinite(v))
    throw std::runtime_error(std::string(phase) + ": training diverged (non-finite loss)");
  return v;
}

}  // namespace

Trainer::Trainer(model::ModelState& state, const TrainConfig& cfg)
    : state_(state), net_(state), cfg_(cfg) {
  cfg.validate();
}

std::vector<Trainer::MeetingData> Trainer::prepare(
    const std::vector<Meeting>& corpus) const {
  check_corpus(corpus);
  auto codebook = sim::FrameCodebook::build(corpus.front().config);
  std::vector<MeetingData> data;
  data.reserve(corpus.size());
  for (const auto& m : corpus) {
    MeetingData md;
    md.meeting = &m;
    md.windows = sim::emit_window_embeddings(m);
    for (int s = 0; s < static_cast<int>(m.segments.size()); ++s)
      md.frames.push_back(sim::segment_frame_features(m, s, codebook));
    md.targets = build_dnc_targets(m);
    data.push_back(std::move(md));
  }
  return data;
}

Trainer::ExampleView Trainer::make_view(const MeetingData& md,
                                        std::uint64_t example_seed,
                                        bool augment) const {
  ExampleView view;
  view.base = &md;
  const int n = static_cast<int>(md.meeting->segments.size());
  view.segment_map.resize(n);
  std::iota(view.segment_map.begin(), view.segment_map.end(), 0);
  if (augment && cfg_.segment_permutation && n > 1) {
    auto rng = make_rng(example_seed, 0x5e95ULL);
    std::shuffle(view.segment_map.begin(), view.segment_map.end(), rng);
    Meeting permuted = sim::apply_segment_permutation(*md.meeting, view.segment_map);
    view.windows_store = sim::emit_window_embeddings(permuted);
    view.targets_store = build_dnc_targets(permuted);
    view.windows = &view.windows_store;
    view.targets = &view.targets_store;
  } else {
    view.windows = &md.windows;
    view.targets = &md.targets;
  }
  return view;
}

Var Trainer::encode_view_windows(Tape& tape, const ExampleView& view,
                                 std::uint64_t example_seed, bool augment) {
  if (augment && cfg_.cda) {
    auto rotated = aug::apply_cda(*view.windows, cfg_.cda_lo, cfg_.cda_hi, example_seed);
    return net_.encode_windows(tape, rotated.windows);
  }
  return net_.encode_windows(tape, view.windows->windows);
}

PhaseReport Trainer::pretrain_asr(const std::vector<Meeting>& corpus) {
  auto data = prepare(corpus);
  const int n = static_cast<int>(data.size());
  const int n_held = n >= 2 ? std::max(1, n / 10) : 0;
  const int n_train = n - n_held;

  std::vector<std::pair<int, int>> examples;
  for (int mi = 0; mi < n_train; ++mi)
    for (int si = 0; si < static_cast<int>(data[mi].frames.size()); ++si)
      examples.emplace_back(mi, si);
  if (examples.empty()) throw std::invalid_argument("pretrain_asr: no segments");

  for (auto& p : state_.parameters()) p.trainable = false;
  state_.set_trainable_by_prefix({"wav_enc.", "asr_dec."}, true);

  Adam adam;
  const long long steps_per_epoch =
      (static_cast<long long>(examples.size()) + cfg_.batch_size - 1) / cfg_.batch_size;
  const long long total_steps = steps_per_epoch * cfg_.pretrain_asr_epochs;

  auto eval_heldout = [&]() {
    double sum = 0.0;
    int count = 0;
    for (int mi = n_held > 0 ? n_train : 0; mi < n; ++mi)
      for (int si = 0; si < static_cast<int>(data[mi].frames.size()); ++si) {
        Tape tape(false);
        Var e_w = net_.encode_frames(tape, data[mi].frames[si]);
        auto fwd = net_.asr_decoder_forward(tape, e_w,
                                            data[mi].targets.per_segment[si].tokens);
        Var ce = tape.mean_cross_entropy(fwd.logits,
                                         data[mi].targets.per_segment[si].tokens);
        sum += tape.val(ce)(0, 0);
        ++count;
      }
    return sum / std::max(1, count);
  };

  PhaseReport report;
  report.phase = "pretrain_asr";
  Snapshot best = Snapshot::capture(state_);
  double best_held = std::numeric_limits<double>::infinity();
  for (int epoch = 0; epoch < cfg_.pretrain_asr_epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    auto rng = make_rng(cfg_.seed, fnv1a64("pretrain_asr.shuffle") ^ epoch);
    std::shuffle(examples.begin(), examples.end(), rng);

    double loss_sum = 0.0;
    int loss_count = 0;
    for (std::size_t at = 0; at < examples.size(); at += cfg_.batch_size) {
      state_.zero_grads();
      int batch_n = 0;
      for (std::size_t k = at; k < std::min(examples.size(), at + cfg_.batch_size); ++k) {
        auto [mi, si] = examples[k];
        Tape tape;
        Var e_w = net_.encode_frames(tape, data[mi].frames[si]);
        const auto& tokens = data[mi].targets.per_segment[si].tokens;
        auto fwd = net_.asr_decoder_forward(tape, e_w, tokens);
        Var ce = tape.mean_cross_entropy(fwd.logits, tokens);
        Var loss = ce;
        if (cfg_.wav_recon_weight > 0.0) {
          Var recon = tape.add_rowvec(
              tape.matmul(e_w, tape.param(state_.at("wav_enc.recon.w"))),
              tape.param(state_.at("wav_enc.recon.b")));
          Var mse = tape.mean_squared_error(recon, data[mi].frames[si]);
          loss = tape.add(ce, tape.scale(mse, cfg_.wav_recon_weight));
        }
        tape.backward(loss);
        loss_sum += finite_or_throw(tape.val(ce)(0, 0), "pretrain_asr");
        ++loss_count;
        ++batch_n;
      }
      for (auto& p : state_.parameters())
        if (p.trainable && p.grad.size() > 0) p.grad /= batch_n;
      adam.step(state_.parameters(),
                lr_schedule(adam.steps_taken(), total_steps, cfg_.lr, cfg_.warmup_frac));
    }

    EpochStats es;
    es.epoch = epoch;
    es.asr_ce = loss_sum / std::max(1, loss_count);
    es.joint = es.asr_ce;
    es.heldout = eval_heldout();
    es.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (es.heldout < best_held) {
      best_held = es.heldout;
      best = Snapshot::capture(state_);
    }
    report.epochs.push_back(es);
  }
  best.restore(state_);
  report.best_heldout = best_held;
  return report;
}

PhaseReport Trainer::pretrain_dnc(const std::vector<Meeting>& corpus) {
  check_corpus(corpus);
  for (const auto& m : corpus)
    for (const auto& seg : m.segments)
      for (const auto& t : seg.turns)
        if (t.speaker != seg.turns.front().speaker)
          throw std::invalid_argument(
              "pretrain_dnc: corpus contains a multi-speaker segment");
  auto data = prepare(corpus);
  const int n = static_cast<int>(data.size());
  const int n_held = n >= 2 ? std::max(1, n / 10) : 0;
  const int n_train = n - n_held;
  if (n_train < 1) throw std::invalid_argument("pretrain_dnc: no training meetings");

  for (auto& p : state_.parameters()) p.trainable = false;
  state_.set_trainable_by_prefix({"spk_enc.", "dnc_dec."}, true);

  Adam adam;
  const long long steps_per_epoch =
      (static_cast<long long>(n_train) + cfg_.batch_size - 1) / cfg_.batch_size;
  const long long total_steps = steps_per_epoch * cfg_.pretrain_dnc_epochs;
  const auto& caps = cfg_.length_schedule;
  const int epochs_per_stage = std::max(
      1, (cfg_.pretrain_dnc_epochs + static_cast<int>(caps.size()) - 1) /
             static_cast<int>(caps.size()));

  // DNC-only loss on a (sub-)meeting; the link is absent during pre-training.
  auto dnc_loss = [&](Tape& tape, const sim::EmbeddingSequence& windows,
                      const DncTargets& targets, std::uint64_t ex_seed,
                      bool augment) -> Var {
    Var e_s;
    if (augment && cfg_.cda) {
      auto rotated = aug::apply_cda(windows, cfg_.cda_lo, cfg_.cda_hi, ex_seed);
      e_s = net_.encode_windows(tape, rotated.windows);
    } else {
      e_s = net_.encode_windows(tape, windows.windows);
    }
    model::AttnMaskSet masks;
    masks.mask_s = model::build_mask_s(windows.segment_spans, targets.position_to_segment,
                                       static_cast<int>(windows.windows.rows()));
    auto fwd = net_.dnc_decoder_forward(tape, e_s, LinkInputs{}, masks, targets.indices);
    return tape.mean_cross_entropy(fwd.logits, targets.indices);
  };

  auto eval_heldout = [&]() {
    double sum = 0.0;
    int count = 0;
    for (int mi = n_held > 0 ? n_train : 0; mi < n; ++mi) {
      Tape tape(false);
      Var ce = dnc_loss(tape, data[mi].windows, data[mi].targets, 0, false);
      sum += tape.val(ce)(0, 0);
      ++count;
    }
    return sum / std::max(1, count);
  };

  PhaseReport report;
  report.phase = "pretrain_dnc";
  Snapshot best = Snapshot::capture(state_);
  double best_held = std::numeric_limits<double>::infinity();
  std::vector<int> order(n_train);
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg_.pretrain_dnc_epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    const int cap = caps[std::min(epoch / epochs_per_stage,
                                  static_cast<int>(caps.size()) - 1)];
    auto rng = make_rng(cfg_.seed, fnv1a64("pretrain_dnc.shuffle") ^ epoch);
    std::shuffle(order.begin(), order.end(), rng);

    double loss_sum = 0.0;
    int loss_count = 0;
    int max_used = 0;
    for (std::size_t at = 0; at < order.size(); at += cfg_.batch_size) {
      state_.zero_grads();
      int batch_n = 0;
      for (std::size_t k = at; k < std::min(order.size(), at + cfg_.batch_size); ++k) {
        int mi = order[k];
        std::uint64_t ex_seed =
            split_seed(cfg_.seed, fnv1a64("pretrain_dnc.ex") ^ (epoch * 100003ULL + k));
        Tape tape;
        Var ce;
        // segment permutation, then the curriculum slice
        ExampleView view = make_view(data[mi], ex_seed, true);
        int used = view.num_segments();
        if (used > cap) {
          auto crng = make_rng(ex_seed, 1);
          int start = std::uniform_int_distribution<int>(0, used - cap)(crng);
          Meeting permuted =
              sim::apply_segment_permutation(*data[mi].meeting, view.segment_map);
          Meeting sub = sim::sub_meeting(permuted, start, cap);
          auto windows = sim::emit_window_embeddings(sub);
          auto targets = build_dnc_targets(sub);
          ce = dnc_loss(tape, windows, targets, ex_seed, true);
          used = cap;
        } else {
          ce = dnc_loss(tape, *view.windows, *view.targets, ex_seed, true);
        }
        tape.backward(ce);
        loss_sum += finite_or_throw(tape.val(ce)(0, 0), "pretrain_dnc");
        ++loss_count;
        ++batch_n;
        max_used = std::max(max_used, used);
      }
      for (auto& p : state_.parameters())
        if (p.trainable && p.grad.size() > 0) p.grad /= batch_n;
      adam.step(state_.parameters(),
                lr_schedule(adam.steps_taken(), total_steps, cfg_.lr, cfg_.warmup_frac));
    }

    EpochStats es;
    es.epoch = epoch;
    es.dnc_ce = loss_sum / std::max(1, loss_count);
    es.joint = es.dnc_ce;
    es.heldout = eval_heldout();
    es.max_segments = max_used;
    es.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (es.heldout < best_held) {
      best_held = es.heldout;
      best = Snapshot::capture(state_);
    }
    report.epochs.push_back(es);
  }
  best.restore(state_);
  report.best_heldout = best_held;
  return report;
}

namespace {

// Positions of segments [0, ptr] and the count of context positions
// (segments strictly before ptr).
struct Stage1Slice {
  std::vector<int> indices;
  std::vector<int> pos_to_seg;
  int context_positions = 0;
};

Stage1Slice stage1_slice_impl(const DncTargets& t, int ptr) {
  Stage1Slice s;
  for (std::size_t i = 0; i < t.indices.size(); ++i) {
    if (t.position_to_segment[i] > ptr) break;
    s.indices.push_back(t.indices[i]);
    s.pos_to_seg.push_back(t.position_to_segment[i]);
    if (t.position_to_segment[i] < ptr) ++s.context_positions;
  }
  return s;
}

}  // namespace

PhaseReport Trainer::finetune_stage1(const std::vector<Meeting>& corpus) {
  auto data = prepare(corpus);
  const int n = static_cast<int>(data.size());
  const int n_held = n >= 2 ? std::max(1, n / 10) : 0;
  const int n_train = n - n_held;

  for (auto& p : state_.parameters()) p.trainable = false;
  state_.set_trainable_by_prefix({"spk_enc.", "dnc_dec.", "link_pad"}, true);
  if (!cfg_.freeze_asr) state_.set_trainable_by_prefix({"wav_enc.", "asr_dec."}, true);

  Adam adam;
  const long long steps_per_epoch =
      (static_cast<long long>(n_train) + cfg_.batch_size - 1) / cfg_.batch_size;
  const long long total_steps = steps_per_epoch * cfg_.stage1_epochs;

  // Joint forward at one (meeting view, current segment) pointer.
  auto joint_forward = [&](Tape& tape, const ExampleView& view, int ptr,
                           std::uint64_t ex_seed, bool augment, double* dnc_val,
                           double* asr_val) -> Var {
    Var e_s = encode_view_windows(tape, view, ex_seed, augment);
    const auto& st = view.targets->per_segment[ptr];
    Var e_w = net_.encode_frames(tape, view.frames_of(ptr));
    auto asrf = net_.asr_decoder_forward(tape, e_w, st.tokens);
    Var asr_ce = tape.mean_cross_entropy(asrf.logits, st.tokens);

    Stage1Slice slice = stage1_slice_impl(*view.targets, ptr);
    model::AttnMaskSet masks;
    masks.mask_s = model::build_mask_s(view.windows->segment_spans, slice.pos_to_seg,
                                       static_cast<int>(view.windows->windows.rows()));
    LinkInputs link;
    if (cfg_.link) {
      link.mode = LinkMode::stage1;
      link.w_ca = asrf.w_ca;
      masks.mask_l = model::build_mask_l(st.turn_token_spans, LinkMode::stage1,
                                         slice.context_positions,
                                         static_cast<int>(st.tokens.size()));
      masks.has_pad_slot = true;
    }
    auto dncf = net_.dnc_decoder_forward(tape, e_s, link, masks, slice.indices);
    Var dnc_ce = tape.mean_cross_entropy(dncf.logits, slice.indices);
    if (dnc_val) *dnc_val = tape.val(dnc_ce)(0, 0);
    if (asr_val) *asr_val = tape.val(asr_ce)(0, 0);
    return tape.add(dnc_ce, asr_ce);
  };

  auto eval_heldout = [&]() {
    double sum = 0.0;
    int count = 0;
    for (int mi = n_held > 0 ? n_train : 0; mi < n; ++mi) {
      ExampleView view = make_view(data[mi], 0, false);
      for (int ptr = 0; ptr < view.num_segments(); ++ptr) {
        Tape tape(false);
        double dnc = 0;
        joint_forward(tape, view, ptr, 0, false, &dnc, nullptr);
        sum += dnc;  // model selection tracks the DNC side
        ++count;
      }
    }
    return sum / std::max(1, count);
  };

  PhaseReport report;
  report.phase = "finetune_stage1";
  Snapshot best = Snapshot::capture(state_);
  double best_held = std::numeric_limits<double>::infinity();
  std::vector<int> order(n_train);
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg_.stage1_epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    auto rng = make_rng(cfg_.seed, fnv1a64("stage1.shuffle") ^ epoch);
    std::shuffle(order.begin(), order.end(), rng);

    double dnc_sum = 0.0, asr_sum = 0.0, joint_sum = 0.0;
    int count = 0;
    for (std::size_t at = 0; at < order.size(); at += cfg_.batch_size) {
      state_.zero_grads();
      int batch_n = 0;
      for (std::size_t k = at; k < std::min(order.size(), at + cfg_.batch_size); ++k) {
        int mi = order[k];
        std::uint64_t ex_seed =
            split_seed(cfg_.seed, fnv1a64("stage1.ex") ^ (epoch * 100003ULL + k));
        ExampleView view = make_view(data[mi], ex_seed, true);
        auto prng = make_rng(ex_seed, 2);
        int ptr =
            std::uniform_int_distribution<int>(0, view.num_segments() - 1)(prng);
        Tape tape;
        double dnc = 0, asr = 0;
        Var loss = joint_forward(tape, view, ptr, ex_seed, true, &dnc, &asr);
        tape.backward(loss);
        joint_sum += finite_or_throw(tape.val(loss)(0, 0), "finetune_stage1");
        dnc_sum += dnc;
        asr_sum += asr;
        ++count;
        ++batch_n;
      }
      for (auto& p : state_.parameters())
        if (p.trainable && p.grad.size() > 0) p.grad /= batch_n;
      adam.step(state_.parameters(),
                lr_schedule(adam.steps_taken(), total_steps, cfg_.lr, cfg_.warmup_frac));
    }

    EpochStats es;
    es.epoch = epoch;
    es.dnc_ce = dnc_sum / std::max(1, count);
    es.asr_ce = asr_sum / std::max(1, count);
    es.joint = joint_sum / std::max(1, count);
    es.heldout = eval_heldout();
    es.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (es.heldout < best_held) {
      best_held = es.heldout;
      best = Snapshot::capture(state_);
    }
    report.epochs.push_back(es);
  }
  best.restore(state_);
  report.best_heldout = best_held;
  return report;
}

PhaseReport Trainer::finetune_stage2(const std::vector<Meeting>& corpus) {
  auto data = prepare(corpus);
  const int n = static_cast<int>(data.size());
  const int n_held = n >= 2 ? std::max(1, n / 10) : 0;
  const int n_train = n - n_held;

  for (auto& p : state_.parameters()) p.trainable = false;
  state_.set_trainable_by_prefix({"dnc_dec.", "link_pad"}, true);

  // Precompute the oracle-transcript W_CA features once per original segment
  // (the ASR side is frozen in this stage); views reassemble them per order.
  std::vector<std::vector<std::vector<Mat>>> wca(n);  // [meeting][segment][block]
  if (cfg_.link) {
    for (int mi = 0; mi < n; ++mi) {
      wca[mi].resize(data[mi].frames.size());
      for (std::size_t si = 0; si < data[mi].frames.size(); ++si) {
        Tape tape(false);
        Var e_w = net_.encode_frames(tape, data[mi].frames[si]);
        auto fwd = net_.asr_decoder_forward(tape, e_w,
                                            data[mi].targets.per_segment[si].tokens);
        for (int b = 0; b < net_.config().num_blocks; ++b)
          wca[mi][si].push_back(tape.val(fwd.w_ca[b]));
      }
      int rows = 0;
      for (const auto& seg : wca[mi]) rows += static_cast<int>(seg[0].rows());
      if (rows != data[mi].targets.total_tokens)
        throw std::logic_error("stage2: W_CA row count does not match token count");
    }
  }

  auto dnc_loss = [&](Tape& tape, int mi, const ExampleView& view,
                      std::uint64_t ex_seed, bool augment) -> Var {
    Var e_s = encode_view_windows(tape, view, ex_seed, augment);
    model::AttnMaskSet masks;
    masks.mask_s = model::build_mask_s(view.windows->segment_spans,
                                       view.targets->position_to_segment,
                                       static_cast<int>(view.windows->windows.rows()));
    LinkInputs link;
    if (cfg_.link) {
      link.mode = LinkMode::stage2;
      for (int b = 0; b < net_.config().num_blocks; ++b) {
        Mat joined(view.targets->total_tokens, net_.config().hidden);
        int at = 0;
        for (int vs = 0; vs < view.num_segments(); ++vs) {
          const Mat& rows = wca[mi][view.segment_map[vs]][b];
          joined.middleRows(at, rows.rows()) = rows;
          at += static_cast<int>(rows.rows());
        }
        link.w_ca.push_back(tape.constant(std::move(joined)));
      }
      masks.mask_l =
          model::build_mask_l(view.targets->global_token_spans, LinkMode::stage2, 0,
                              view.targets->total_tokens);
    }
    auto fwd =
        net_.dnc_decoder_forward(tape, e_s, link, masks, view.targets->indices);
    return tape.mean_cross_entropy(fwd.logits, view.targets->indices);
  };

  Adam adam;
  const long long steps_per_epoch =
      (static_cast<long long>(n_train) + cfg_.batch_size - 1) / cfg_.batch_size;
  const long long total_steps = steps_per_epoch * cfg_.stage2_epochs;

  auto eval_heldout = [&]() {
    double sum = 0.0;
    int count = 0;
    for (int mi = n_held > 0 ? n_train : 0; mi < n; ++mi) {
      Tape tape(false);
      ExampleView view = make_view(data[mi], 0, false);
      Var ce = dnc_loss(tape, mi, view, 0, false);
      sum += tape.val(ce)(0, 0);
      ++count;
    }
    return sum / std::max(1, count);
  };

  PhaseReport report;
  report.phase = "finetune_stage2";
  Snapshot best = Snapshot::capture(state_);
  double best_held = std::numeric_limits<double>::infinity();
  std::vector<int> order(n_train);
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg_.stage2_epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    auto rng = make_rng(cfg_.seed, fnv1a64("stage2.shuffle") ^ epoch);
    std::shuffle(order.begin(), order.end(), rng);

    double loss_sum = 0.0;
    int count = 0;
    for (std::size_t at = 0; at < order.size(); at += cfg_.batch_size) {
      state_.zero_grads();
      int batch_n = 0;
      for (std::size_t k = at; k < std::min(order.size(), at + cfg_.batch_size); ++k) {
        std::uint64_t ex_seed =
            split_seed(cfg_.seed, fnv1a64("stage2.ex") ^ (epoch * 100003ULL + k));
        Tape tape;
        ExampleView view = make_view(data[order[k]], ex_seed, true);
        Var ce = dnc_loss(tape, order[k], view, ex_seed, true);
        tape.backward(ce);
        loss_sum += finite_or_throw(tape.val(ce)(0, 0), "finetune_stage2");
        ++count;
        ++batch_n;
      }
      for (auto& p : state_.parameters())
        if (p.trainable && p.grad.size() > 0) p.grad /= batch_n;
      adam.step(state_.parameters(),
                lr_schedule(adam.steps_taken(), total_steps, cfg_.lr, cfg_.warmup_frac));
    }

    EpochStats es;
    es.epoch = epoch;
    es.dnc_ce = loss_sum / std::max(1, count);
    es.joint = es.dnc_ce;
    es.heldout = eval_heldout();
    es.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (es.heldout < best_held) {
      best_held = es.heldout;
      best = Snapshot::capture(state_);
    }
    report.epochs.push_back(es);
  }
  best.restore(state_);
  report.best_heldout = best_held;
  return report;
}

}  // namespace dncasr::train
