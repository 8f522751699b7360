#include "dncasr/sim/generator.hpp"

#include "dncasr/common.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace dncasr::sim {

namespace {

// rng stream tags, one per derived artifact
enum Stream : std::uint64_t {
  kProfiles = 1,
  kStructure = 2,
  kWindows = 3,
  kFrames = 4,
  kCodebook = 5,
  kPermute = 6,
};

constexpr int kMaxGenAttempts = 24;

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

}  // namespace

void SimConfig::validate() const {
  if (num_speakers < 1) throw std::invalid_argument("num_speakers must be >= 1");
  if (num_segments < 1) throw std::invalid_argument("num_segments must be >= 1");
  if (utterances_min < 1 || utterances_max < utterances_min)
    throw std::invalid_argument("utterances_per_segment range is empty");
  if (tokens_min < 1 || tokens_max < tokens_min)
    throw std::invalid_argument("tokens_per_utterance range is empty");
  if (max_pairwise_overlap < 0.0 || max_pairwise_overlap >= 1.0)
    throw std::invalid_argument("max_pairwise_overlap must be in [0, 1)");
  if (target_meeting_overlap < 0.0 || target_meeting_overlap >= 1.0)
    throw std::invalid_argument("target_meeting_overlap must be in [0, 1)");
  if (vocab_size < 1) throw std::invalid_argument("vocab_size must be >= 1");
  if (embed_dim < 2) throw std::invalid_argument("embed_dim must be >= 2");
  if (frame_dim < 1) throw std::invalid_argument("frame_dim must be >= 1");
  if (frames_per_token < 1) throw std::invalid_argument("frames_per_token must be >= 1");
  if (window_len <= 0.0 || window_stride <= 0.0 || window_stride > window_len)
    throw std::invalid_argument("window_stride must be in (0, window_len]");
  if (noise_sigma < 0.0) throw std::invalid_argument("noise_sigma must be >= 0");
  if (num_speakers == 1 && utterances_min > 1)
    throw InfeasibleError("1 speaker cannot produce segments with >= 2 turns");
}

std::string SimConfig::canonical() const {
  std::ostringstream os;
  os << "num_speakers=" << num_speakers << "\nnum_segments=" << num_segments
     << "\nutterances_min=" << utterances_min << "\nutterances_max=" << utterances_max
     << "\nmax_pairwise_overlap=" << format_double(max_pairwise_overlap)
     << "\ntarget_meeting_overlap=" << format_double(target_meeting_overlap)
     << "\nvocab_size=" << vocab_size << "\ntokens_min=" << tokens_min
     << "\ntokens_max=" << tokens_max << "\nembed_dim=" << embed_dim
     << "\nframe_dim=" << frame_dim << "\nframes_per_token=" << frames_per_token
     << "\nwindow_len=" << format_double(window_len)
     << "\nwindow_stride=" << format_double(window_stride)
     << "\nnoise_sigma=" << format_double(noise_sigma) << "\nseed=" << seed << "\n";
  return os.str();
}

std::string SimConfig::digest() const { return hex_digest(canonical()); }

int Meeting::total_turns() const {
  int n = 0;
  for (const auto& s : segments) n += static_cast<int>(s.turns.size());
  return n;
}

double Meeting::overlap_ratio() const {
  double overlap = 0.0, span = 0.0;
  for (const auto& seg : segments) {
    span += seg.span();
    for (std::size_t i = 1; i < seg.turns.size(); ++i) {
      overlap += std::max(0.0, std::min(seg.turns[i - 1].end, seg.turns[i].end) -
                                   seg.turns[i].start);
    }
  }
  return span > 0.0 ? overlap / span : 0.0;
}

void Meeting::validate() const {
  for (const auto& seg : segments) {
    if (seg.turns.empty()) throw std::runtime_error("segment without turns");
    for (std::size_t i = 0; i < seg.turns.size(); ++i) {
      const Turn& t = seg.turns[i];
      if (t.start >= t.end) throw std::runtime_error("turn with non-positive duration");
      if (t.tokens.empty()) throw std::runtime_error("turn without tokens");
      if (t.speaker < 0 || t.speaker >= static_cast<int>(speakers.size()))
        throw std::runtime_error("turn speaker not in meeting speaker list");
      if (i > 0) {
        const Turn& p = seg.turns[i - 1];
        if (t.start < p.start) throw std::runtime_error("turns not ordered by start");
        if (t.speaker == p.speaker)
          throw std::runtime_error("adjacent turns share a speaker");
        double ov = std::max(0.0, std::min(p.end, t.end) - t.start);
        double cap = config.max_pairwise_overlap * std::min(p.duration(), t.duration());
        if (ov > cap + 1e-9) throw std::runtime_error("pairwise overlap above cap");
      }
    }
  }
  for (std::size_t i = 1; i < segments.size(); ++i) {
    if (segments[i].start < segments[i - 1].end - 1e-12)
      throw std::runtime_error("segments overlap or are unordered");
  }
}

namespace {

struct TurnPlan {
  int speaker;
  std::vector<int> tokens;
  double gap_before;  // for i>0: gap (>=0) or, when <0, the amount of overlap
};

struct SegmentPlan {
  std::vector<TurnPlan> turns;
  double gap_before;  // silence before segment
};

Meeting realize(const SimConfig& cfg, const std::vector<SpeakerProfile>& speakers,
                const std::vector<SegmentPlan>& plans) {
  Meeting m;
  m.config = cfg;
  m.speakers = speakers;
  double clock = 0.0;
  for (const auto& plan : plans) {
    clock += plan.gap_before;
    Segment seg;
    double t = clock;
    double seg_end = clock;
    for (std::size_t i = 0; i < plan.turns.size(); ++i) {
      const auto& tp = plan.turns[i];
      if (i > 0) t += tp.gap_before;  // negative means overlap
      Turn turn;
      turn.speaker = tp.speaker;
      turn.tokens = tp.tokens;
      turn.start = t;
      turn.end = t + static_cast<double>(tp.tokens.size());
      t = turn.end;
      seg_end = std::max(seg_end, turn.end);
      seg.turns.push_back(std::move(turn));
    }
    seg.start = clock;
    seg.end = seg_end;
    clock = seg_end;
    m.segments.push_back(std::move(seg));
  }
  return m;
}

}  // namespace

Meeting gen_meeting(const SimConfig& config) { return gen_meeting(config, 0); }

Meeting gen_meeting(const SimConfig& config, std::uint64_t meeting_index) {
  config.validate();

  auto prof_rng = make_rng(config.seed, mix_seed(meeting_index) ^ kProfiles);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<SpeakerProfile> speakers(config.num_speakers);
  for (int s = 0; s < config.num_speakers; ++s) {
    speakers[s].global_id = s;
    VectorXd v(config.embed_dim);
    for (int d = 0; d < config.embed_dim; ++d) v[d] = normal(prof_rng);
    speakers[s].latent = v / v.norm();
  }

  Meeting best;
  double best_err = std::numeric_limits<double>::infinity();
  for (int attempt = 0; attempt < kMaxGenAttempts; ++attempt) {
    auto rng = make_rng(config.seed,
                        mix_seed(meeting_index * 131 + attempt) ^ kStructure);

    std::vector<SegmentPlan> plans(config.num_segments);
    double total_speech = 0.0;
    for (auto& plan : plans) {
      plan.gap_before = uniform(rng, 0.5, 1.5);
      int n_turns = uniform_int(rng, config.utterances_min, config.utterances_max);
      if (config.num_speakers == 1) n_turns = 1;
      int prev_spk = -1;
      for (int i = 0; i < n_turns; ++i) {
        TurnPlan tp;
        do {
          tp.speaker = uniform_int(rng, 0, config.num_speakers - 1);
        } while (tp.speaker == prev_spk);
        prev_spk = tp.speaker;
        int n_tok = uniform_int(rng, config.tokens_min, config.tokens_max);
        tp.tokens.resize(n_tok);
        for (int& tok : tp.tokens) tok = uniform_int(rng, 0, config.vocab_size - 1);
        tp.gap_before = (i > 0 && std::bernoulli_distribution(0.5)(rng))
                            ? uniform(rng, 0.0, 0.4)
                            : 0.0;
        plan.turns.push_back(std::move(tp));
        total_speech += static_cast<double>(n_tok);
      }
    }

    // Baseline span with zero overlap; then distribute overlap across adjacent
    // pairs until the meeting-level ratio lands near the target. Each unit of
    // overlap shrinks the containing segment's span by the same amount.
    double base_span = total_speech;
    for (const auto& plan : plans)
      for (std::size_t i = 1; i < plan.turns.size(); ++i)
        base_span += plan.turns[i].gap_before;

    double want = config.target_meeting_overlap * base_span /
                  (1.0 + config.target_meeting_overlap);
    struct PairRef { int seg, turn; double cap; };
    std::vector<PairRef> pairs;
    for (int s = 0; s < static_cast<int>(plans.size()); ++s)
      for (int i = 1; i < static_cast<int>(plans[s].turns.size()); ++i) {
        double da = static_cast<double>(plans[s].turns[i - 1].tokens.size());
        double db = static_cast<double>(plans[s].turns[i].tokens.size());
        pairs.push_back({s, i, 0.98 * config.max_pairwise_overlap * std::min(da, db)});
      }
    std::shuffle(pairs.begin(), pairs.end(), rng);
    double assigned = 0.0;
    for (const auto& p : pairs) {
      if (assigned >= want) break;
      double amount = std::min(p.cap * uniform(rng, 0.4, 1.0), want - assigned);
      plans[p.seg].turns[p.turn].gap_before = -amount;
      assigned += amount;
    }

    Meeting m = realize(config, speakers, plans);
    std::ostringstream id;
    id << "m" << std::setw(6) << std::setfill('0') << meeting_index;
    m.id = id.str();
    double err = std::abs(m.overlap_ratio() - config.target_meeting_overlap);
    if (err < best_err) {
      best_err = err;
      best = std::move(m);
    }
    if (best_err <= 0.02) break;
  }
  best.validate();
  return best;
}

EmbeddingSequence emit_window_embeddings(const Meeting& meeting) {
  const SimConfig& cfg = meeting.config;
  auto rng = make_rng(cfg.seed, fnv1a64(meeting.id) ^ kWindows);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<VectorXd> rows;
  std::vector<std::pair<int, int>> spans;
  std::vector<int> pe_indices;
  for (const auto& seg : meeting.segments) {
    int begin = static_cast<int>(rows.size());
    int nw = seg.span() <= cfg.window_len
                 ? 1
                 : static_cast<int>(
                       std::floor((seg.span() - cfg.window_len) / cfg.window_stride +
                                  1e-9)) + 1;
    std::vector<VectorXd> mixtures(nw);
    std::vector<bool> active(nw, false);
    for (int w = 0; w < nw; ++w) {
      double w0 = seg.start + w * cfg.window_stride;
      double w1 = w0 + cfg.window_len;
      VectorXd mix = VectorXd::Zero(cfg.embed_dim);
      double total_occ = 0.0;
      for (const auto& turn : seg.turns) {
        double occ = std::max(0.0, std::min(turn.end, w1) - std::max(turn.start, w0));
        if (occ > 1e-12) {
          mix += occ * meeting.speakers[turn.speaker].latent;
          total_occ += occ;
        }
      }
      if (total_occ > 1e-12 && mix.norm() > 1e-12) {
        mixtures[w] = mix.normalized();
        active[w] = true;
      }
    }
    // silence-only windows copy the nearest active window's mixture
    for (int w = 0; w < nw; ++w) {
      if (active[w]) continue;
      int src = -1;
      for (int d = 1; d < nw && src < 0; ++d) {
        if (w - d >= 0 && active[w - d]) src = w - d;
        else if (w + d < nw && active[w + d]) src = w + d;
      }
      if (src < 0) throw std::runtime_error("segment with no active window");
      mixtures[w] = mixtures[src];
    }
    for (int w = 0; w < nw; ++w) {
      VectorXd row = mixtures[w];
      if (cfg.noise_sigma > 0.0)
        for (int d = 0; d < cfg.embed_dim; ++d) row[d] += cfg.noise_sigma * normal(rng);
      rows.push_back(std::move(row));
      pe_indices.push_back(static_cast<int>(
          std::lround((seg.start + w * cfg.window_stride) / cfg.window_stride)));
    }
    spans.emplace_back(begin, static_cast<int>(rows.size()));
  }

  EmbeddingSequence es;
  es.windows.resize(static_cast<int>(rows.size()), cfg.embed_dim);
  for (int i = 0; i < static_cast<int>(rows.size()); ++i) es.windows.row(i) = rows[i];
  es.segment_spans = std::move(spans);
  es.window_pe_indices = std::move(pe_indices);
  return es;
}

FrameCodebook FrameCodebook::build(const SimConfig& config) {
  auto rng = make_rng(config.seed, kCodebook);
  std::normal_distribution<double> normal(0.0, 1.0);
  FrameCodebook cb;
  cb.token_rows.resize(config.vocab_size, config.frame_dim);
  for (int t = 0; t < config.vocab_size; ++t) {
    VectorXd v(config.frame_dim);
    for (int d = 0; d < config.frame_dim; ++d) v[d] = normal(rng);
    cb.token_rows.row(t) = v.normalized();
  }
  cb.speaker_proj.resize(config.embed_dim, config.frame_dim);
  for (int i = 0; i < config.embed_dim; ++i)
    for (int j = 0; j < config.frame_dim; ++j)
      cb.speaker_proj(i, j) = normal(rng) / std::sqrt(static_cast<double>(config.embed_dim));
  return cb;
}

MatrixXd emit_frame_features(const Segment& segment, const FrameCodebook& codebook,
                             const std::vector<SpeakerProfile>& profiles,
                             const SimConfig& config, double speaker_alpha,
                             double noise_sigma, std::uint64_t noise_seed) {
  if (codebook.token_rows.rows() != config.vocab_size)
    throw std::invalid_argument("codebook does not cover the vocabulary");
  const int fpu = config.frames_per_token;  // 1 token == 1 time unit
  int n_frames = static_cast<int>(std::ceil(segment.span() * fpu - 1e-9));
  n_frames = std::max(n_frames, 1);
  MatrixXd frames = MatrixXd::Zero(n_frames, config.frame_dim);

  for (const auto& turn : segment.turns) {
    if (turn.speaker < 0 || turn.speaker >= static_cast<int>(profiles.size()))
      throw std::invalid_argument("turn speaker without profile");
    Eigen::RowVectorXd color =
        profiles[turn.speaker].latent.transpose() * codebook.speaker_proj;
    for (std::size_t k = 0; k < turn.tokens.size(); ++k) {
      int tok = turn.tokens[k];
      if (tok < 0 || tok >= config.vocab_size)
        throw std::invalid_argument("unknown token id in turn");
      int base = static_cast<int>(
          std::lround((turn.start + static_cast<double>(k) - segment.start) * fpu));
      for (int j = 0; j < fpu; ++j) {
        int f = std::clamp(base + j, 0, n_frames - 1);
        frames.row(f) += codebook.token_rows.row(tok) + speaker_alpha * color;
      }
    }
  }
  if (noise_sigma > 0.0) {
    auto rng = make_rng(noise_seed, kFrames);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int i = 0; i < frames.rows(); ++i)
      for (int j = 0; j < frames.cols(); ++j) frames(i, j) += noise_sigma * normal(rng);
  }
  return frames;
}

MatrixXd segment_frame_features(const Meeting& meeting, int segment_idx,
                                const FrameCodebook& codebook) {
  if (segment_idx < 0 || segment_idx >= static_cast<int>(meeting.segments.size()))
    throw std::invalid_argument("segment index out of range");
  constexpr double kSpeakerAlpha = 1.0;
  std::uint64_t noise_seed =
      split_seed(meeting.config.seed, fnv1a64(meeting.id) ^ (0xf4a3ULL + segment_idx));
  return emit_frame_features(meeting.segments[segment_idx], codebook, meeting.speakers,
                             meeting.config, kSpeakerAlpha, meeting.config.noise_sigma,
                             noise_seed);
}

int segment_frame_offset(const Meeting& meeting, int segment_idx) {
  if (segment_idx < 0 || segment_idx >= static_cast<int>(meeting.segments.size()))
    throw std::invalid_argument("segment index out of range");
  return static_cast<int>(std::lround(meeting.segments[segment_idx].start *
                                      meeting.config.frames_per_token));
}

std::map<int, int> first_appearance_order(const Meeting& meeting) {
  std::map<int, int> order;
  int next = 0;
  for (const auto& seg : meeting.segments)
    for (const auto& turn : seg.turns)
      if (!order.count(turn.speaker)) order[turn.speaker] = next++;
  return order;
}

SerializedTranscript serialize_targets(const Segment& segment,
                                       const std::map<int, int>& first_appearance,
                                       const SimConfig& config) {
  if (segment.turns.empty()) throw std::invalid_argument("segment without turns");
  SpecialTokens sp(config.vocab_size);
  SerializedTranscript st;
  for (std::size_t i = 0; i < segment.turns.size(); ++i) {
    const Turn& turn = segment.turns[i];
    auto it = first_appearance.find(turn.speaker);
    if (it == first_appearance.end())
      throw std::invalid_argument("turn speaker missing from first-appearance order");
    int begin = static_cast<int>(st.tokens.size());
    st.tokens.insert(st.tokens.end(), turn.tokens.begin(), turn.tokens.end());
    // <sc>/<eos> attach to the speaker turn on the left
    st.tokens.push_back(i + 1 < segment.turns.size() ? sp.sc : sp.eos);
    st.turn_token_spans.emplace_back(begin, static_cast<int>(st.tokens.size()));
    st.speaker_indices.push_back(it->second);
  }
  return st;
}

FssResult first_speaker_segmentation(const Segment& segment) {
  FssResult result;
  if (segment.turns.empty()) return result;

  struct Piece { int speaker; double start, end; };
  std::vector<Piece> pieces;
  int cur_spk = segment.turns[0].speaker;
  double cur_start = segment.start;
  double cur_end = segment.turns[0].end;
  for (std::size_t i = 1; i < segment.turns.size(); ++i) {
    const Turn& t = segment.turns[i];
    if (t.end <= cur_end) {  // swallowed by the earlier speaker's region
      result.dropped_turns.push_back(t);
      continue;
    }
    if (t.speaker == cur_spk) {
      cur_end = t.end;
      continue;
    }
    // overlap goes to the earlier speaker; split at the end of the overlap
    // region (or at the later turn's start when there is no overlap)
    double split = std::max(cur_end, t.start);
    pieces.push_back({cur_spk, cur_start, split});
    cur_spk = t.speaker;
    cur_start = split;
    cur_end = t.end;
  }
  pieces.push_back({cur_spk, cur_start, std::max(cur_end, segment.end)});

  for (const auto& p : pieces) {
    Segment out;
    out.start = p.start;
    out.end = p.end;
    Turn merged;
    merged.speaker = p.speaker;
    merged.start = p.start;
    merged.end = p.end;
    for (const auto& t : segment.turns)
      if (t.speaker == p.speaker && t.start < p.end && t.end > p.start)
        merged.tokens.insert(merged.tokens.end(), t.tokens.begin(), t.tokens.end());
    out.turns.push_back(std::move(merged));
    result.segments.push_back(std::move(out));
  }
  return result;
}

Meeting apply_segment_permutation(const Meeting& meeting, const std::vector<int>& perm) {
  if (perm.size() != meeting.segments.size())
    throw std::invalid_argument("permutation size mismatch");
  // original inter-segment gaps, reused positionally in the new order
  std::vector<double> gaps;
  double first_start = meeting.segments.empty() ? 0.0 : meeting.segments[0].start;
  for (std::size_t i = 1; i < meeting.segments.size(); ++i)
    gaps.push_back(meeting.segments[i].start - meeting.segments[i - 1].end);

  Meeting out;
  out.id = meeting.id;
  out.config = meeting.config;
  out.speakers = meeting.speakers;
  double clock = first_start;
  for (std::size_t i = 0; i < perm.size(); ++i) {
    if (i > 0) clock += gaps[i - 1];
    Segment seg = meeting.segments[perm[i]];
    double shift = clock - seg.start;
    seg.start += shift;
    seg.end += shift;
    for (auto& t : seg.turns) {
      t.start += shift;
      t.end += shift;
    }
    clock = seg.end;
    out.segments.push_back(std::move(seg));
  }
  return out;
}

Meeting permute_segments(const Meeting& meeting, std::uint64_t seed) {
  std::vector<int> perm(meeting.segments.size());
  std::iota(perm.begin(), perm.end(), 0);
  auto rng = make_rng(seed, kPermute);
  std::shuffle(perm.begin(), perm.end(), rng);
  return apply_segment_permutation(meeting, perm);
}

Meeting sub_meeting(const Meeting& meeting, int first_segment, int count) {
  if (first_segment < 0 || count < 1 ||
      first_segment + count > static_cast<int>(meeting.segments.size()))
    throw std::invalid_argument("sub_meeting range out of bounds");
  Meeting out;
  out.id = meeting.id + "#" + std::to_string(first_segment) + "+" + std::to_string(count);
  out.config = meeting.config;
  out.speakers = meeting.speakers;
  out.segments.assign(meeting.segments.begin() + first_segment,
                      meeting.segments.begin() + first_segment + count);
  return out;
}

}  // namespace dncasr::sim
