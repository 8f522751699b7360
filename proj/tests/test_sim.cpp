#include "dncasr/common.hpp"
#include "dncasr/sim/corpus_io.hpp"
#include "dncasr/sim/generator.hpp"

#include <doctest.h>

#include <cmath>
#include <set>

using namespace dncasr;
using namespace dncasr::sim;

namespace {

Meeting hand_meeting(std::vector<Segment> segments, int num_speakers,
                     SimConfig cfg = {}) {
  Meeting m;
  m.id = "hand";
  cfg.num_speakers = num_speakers;
  m.config = cfg;
  for (int s = 0; s < num_speakers; ++s) {
    SpeakerProfile p;
    p.global_id = s;
    p.latent = VectorXd::Zero(cfg.embed_dim);
    p.latent[s % cfg.embed_dim] = 1.0;
    m.speakers.push_back(std::move(p));
  }
  m.segments = std::move(segments);
  return m;
}

Turn turn(int spk, std::vector<int> tokens, double start, double end) {
  Turn t;
  t.speaker = spk;
  t.tokens = std::move(tokens);
  t.start = start;
  t.end = end;
  return t;
}

}  // namespace

TEST_CASE("gen_meeting is deterministic for a fixed config and seed") {
  SimConfig cfg;
  cfg.seed = 123;
  Meeting a = gen_meeting(cfg, 4);
  Meeting b = gen_meeting(cfg, 4);
  CHECK(meeting_to_json_line(a) == meeting_to_json_line(b));
}

TEST_CASE("gen_meeting degenerate single speaker config") {
  SimConfig cfg;
  cfg.num_speakers = 1;
  cfg.utterances_min = cfg.utterances_max = 1;
  cfg.seed = 9;
  Meeting m = gen_meeting(cfg);
  for (const auto& seg : m.segments) {
    REQUIRE(seg.turns.size() == 1);
    CHECK(seg.turns[0].speaker == 0);
  }
  CHECK(m.overlap_ratio() == doctest::Approx(0.0));
}

TEST_CASE("gen_meeting rejects infeasible configs") {
  SimConfig cfg;
  cfg.num_speakers = 1;
  cfg.utterances_min = cfg.utterances_max = 2;
  CHECK_THROWS_AS(gen_meeting(cfg), InfeasibleError);
}

TEST_CASE("mean overlap ratio over 100 meetings lands near the target") {
  SimConfig cfg;
  cfg.seed = 31;
  double sum = 0.0;
  for (int i = 0; i < 100; ++i) {
    Meeting m = gen_meeting(cfg, i);
    m.validate();
    sum += m.overlap_ratio();
  }
  double mean = sum / 100.0;
  CHECK(mean > 0.03);
  CHECK(mean < 0.07);
}

TEST_CASE("generated meetings satisfy the structural invariants") {
  SimConfig cfg;
  cfg.seed = 77;
  for (int i = 0; i < 20; ++i) {
    Meeting m = gen_meeting(cfg, i);
    m.validate();  // adjacent-speaker, overlap cap, ordering
    auto order = first_appearance_order(m);
    // surjective prefix-closed index sequence
    int max_seen = -1;
    for (const auto& seg : m.segments) {
      auto st = serialize_targets(seg, order, cfg);
      CHECK(std::count(st.tokens.begin(), st.tokens.end(),
                       SpecialTokens(cfg.vocab_size).sc) ==
            static_cast<long>(seg.turns.size()) - 1);
      for (int idx : st.speaker_indices) {
        CHECK(idx <= max_seen + 1);
        max_seen = std::max(max_seen, idx);
      }
    }
  }
}

TEST_CASE("window embeddings: single speaker rows equal the latent") {
  SimConfig cfg;
  cfg.noise_sigma = 0.0;
  Segment seg;
  seg.start = 0.0;
  seg.end = 4.0;
  seg.turns = {turn(0, {1, 2, 3, 4}, 0.0, 4.0)};
  Meeting m = hand_meeting({seg}, 1, cfg);
  auto es = emit_window_embeddings(m);
  REQUIRE(es.segment_spans.size() == 1);
  for (int w = 0; w < es.windows.rows(); ++w)
    CHECK((es.windows.row(w).transpose() - m.speakers[0].latent).norm() ==
          doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("window embeddings: equal two-speaker occupancy is the normalized sum") {
  SimConfig cfg;
  cfg.noise_sigma = 0.0;
  cfg.window_len = 2.0;
  cfg.window_stride = 2.0;
  Segment seg;
  seg.start = 0.0;
  seg.end = 2.0;
  // same interval twice so both speakers occupy the window equally
  seg.turns = {turn(0, {1, 2}, 0.0, 2.0), turn(1, {3, 4}, 0.0, 2.0)};
  Meeting m = hand_meeting({seg}, 2, cfg);
  auto es = emit_window_embeddings(m);
  VectorXd expect = (m.speakers[0].latent + m.speakers[1].latent).normalized();
  CHECK((es.windows.row(0).transpose() - expect).norm() ==
        doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("window count follows the tiling formula") {
  SimConfig cfg;
  cfg.noise_sigma = 0.0;
  Segment seg;
  seg.start = 0.0;
  seg.end = 3.5;
  seg.turns = {turn(0, {1, 2, 3}, 0.0, 3.5)};
  Meeting m = hand_meeting({seg}, 1, cfg);
  auto es = emit_window_embeddings(m);
  CHECK(es.windows.rows() == 5);  // floor((3.5-1.5)/0.5)+1
  CHECK(es.segment_spans[0] == std::pair<int, int>{0, 5});
}

TEST_CASE("silence-only windows copy the nearest active mixture") {
  SimConfig cfg;
  cfg.noise_sigma = 0.0;
  cfg.window_len = 0.5;
  cfg.window_stride = 0.5;
  Segment seg;
  seg.start = 0.0;
  seg.end = 4.0;
  // speech only in [0,1]; windows beyond are silence
  seg.turns = {turn(0, {1}, 0.0, 1.0)};
  Meeting m = hand_meeting({seg}, 1, cfg);
  auto es = emit_window_embeddings(m);
  for (int w = 0; w < es.windows.rows(); ++w)
    CHECK((es.windows.row(w).transpose() - m.speakers[0].latent).norm() ==
          doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("frame features: single token repeats the codebook row") {
  SimConfig cfg;
  cfg.frames_per_token = 2;
  auto cb = FrameCodebook::build(cfg);
  Segment seg;
  seg.start = 0.0;
  seg.end = 1.0;
  seg.turns = {turn(0, {5}, 0.0, 1.0)};
  Meeting m = hand_meeting({seg}, 1, cfg);
  auto frames = emit_frame_features(seg, cb, m.speakers, cfg, /*alpha=*/0.0,
                                    /*noise=*/0.0, 0);
  REQUIRE(frames.rows() == 2);
  CHECK((frames.row(0) - cb.token_rows.row(5)).norm() == doctest::Approx(0.0));
  CHECK((frames.row(1) - cb.token_rows.row(5)).norm() == doctest::Approx(0.0));
}

TEST_CASE("frame features: fully overlapped identical turns double the frames") {
  SimConfig cfg;
  cfg.frames_per_token = 2;
  auto cb = FrameCodebook::build(cfg);
  Segment one;
  one.start = 0.0;
  one.end = 2.0;
  one.turns = {turn(0, {3, 7}, 0.0, 2.0)};
  Segment two = one;
  two.turns.push_back(turn(0, {3, 7}, 0.0, 2.0));
  Meeting m = hand_meeting({one}, 1, cfg);
  auto f1 = emit_frame_features(one, cb, m.speakers, cfg, 0.0, 0.0, 0);
  auto f2 = emit_frame_features(two, cb, m.speakers, cfg, 0.0, 0.0, 0);
  CHECK((f2 - 2.0 * f1).norm() == doctest::Approx(0.0));
}

TEST_CASE("frame features reject unknown tokens") {
  SimConfig cfg;
  auto cb = FrameCodebook::build(cfg);
  Segment seg;
  seg.start = 0.0;
  seg.end = 1.0;
  seg.turns = {turn(0, {cfg.vocab_size + 3}, 0.0, 1.0)};
  Meeting m = hand_meeting({seg}, 1, cfg);
  CHECK_THROWS_AS(emit_frame_features(seg, cb, m.speakers, cfg, 0.0, 0.0, 0),
                  std::invalid_argument);
}

TEST_CASE("noise-free frames are linearly decodable back to tokens") {
  SimConfig cfg;
  cfg.seed = 5;
  cfg.max_pairwise_overlap = 0.0;  // keep frames single-token
  cfg.target_meeting_overlap = 0.0;
  cfg.noise_sigma = 0.0;
  Meeting m = gen_meeting(cfg, 0);
  auto cb = FrameCodebook::build(cfg);
  // nearest-centroid readout (a linear classifier over codebook rows)
  int total = 0, correct = 0;
  for (const auto& seg : m.segments) {
    auto frames = emit_frame_features(seg, cb, m.speakers, cfg, 0.0, 0.0, 0);
    for (const auto& t : seg.turns)
      for (std::size_t k = 0; k < t.tokens.size(); ++k) {
        int frame_idx = static_cast<int>(
            std::lround((t.start + k - seg.start) * cfg.frames_per_token));
        Eigen::VectorXd scores =
            cb.token_rows * frames.row(frame_idx).transpose() -
            0.5 * cb.token_rows.rowwise().squaredNorm();
        int argmax = 0;
        scores.maxCoeff(&argmax);
        ++total;
        if (argmax == t.tokens[k]) ++correct;
      }
  }
  CHECK(total > 0);
  CHECK(correct == total);
}

TEST_CASE("serialize_targets produces the serialized layout") {
  SimConfig cfg;
  SpecialTokens sp(cfg.vocab_size);
  Segment seg;
  seg.start = 0;
  seg.end = 5;
  seg.turns = {turn(7, {1}, 0, 1), turn(3, {2, 3}, 1, 5)};
  std::map<int, int> order{{7, 0}, {3, 1}};
  auto st = serialize_targets(seg, order, cfg);
  CHECK(st.tokens == std::vector<int>{1, sp.sc, 2, 3, sp.eos});
  REQUIRE(st.turn_token_spans.size() == 2);
  CHECK(st.turn_token_spans[0] == std::pair<int, int>{0, 2});
  CHECK(st.turn_token_spans[1] == std::pair<int, int>{2, 5});
  CHECK(st.speaker_indices == std::vector<int>{0, 1});
}

TEST_CASE("serialize_targets single turn has no <sc>") {
  SimConfig cfg;
  SpecialTokens sp(cfg.vocab_size);
  Segment seg;
  seg.start = 0;
  seg.end = 2;
  seg.turns = {turn(0, {4, 5}, 0, 2)};
  auto st = serialize_targets(seg, {{0, 0}}, cfg);
  CHECK(st.tokens == std::vector<int>{4, 5, sp.eos});
  CHECK(std::count(st.tokens.begin(), st.tokens.end(), sp.sc) == 0);
}

TEST_CASE("serialize_targets uses global first appearance for indices") {
  SimConfig cfg;
  Segment seg;
  seg.start = 0;
  seg.end = 3;
  // speakers C, A, C where A appeared first globally
  seg.turns = {turn(2, {1}, 0, 1), turn(1, {2}, 1, 2), turn(2, {3}, 2, 3)};
  std::map<int, int> order{{1, 0}, {2, 1}};
  auto st = serialize_targets(seg, order, cfg);
  CHECK(st.speaker_indices == std::vector<int>{1, 0, 1});
}

TEST_CASE("fss: single speaker no overlap is the identity") {
  Segment seg;
  seg.start = 0;
  seg.end = 4;
  seg.turns = {turn(0, {1, 2}, 0, 4)};
  auto fss = first_speaker_segmentation(seg);
  REQUIRE(fss.segments.size() == 1);
  CHECK(fss.segments[0].start == 0);
  CHECK(fss.segments[0].end == 4);
  CHECK(fss.segments[0].turns[0].speaker == 0);
  CHECK(fss.dropped_turns.empty());
}

TEST_CASE("fss: overlap goes to the earlier speaker, split at overlap end") {
  Segment seg;
  seg.start = 0;
  seg.end = 6;
  seg.turns = {turn(0, {1, 2, 3, 4}, 0, 4), turn(1, {5, 6, 7, 8}, 2, 6)};
  auto fss = first_speaker_segmentation(seg);
  REQUIRE(fss.segments.size() == 2);
  CHECK(fss.segments[0].turns[0].speaker == 0);
  CHECK(fss.segments[0].start == doctest::Approx(0.0));
  CHECK(fss.segments[0].end == doctest::Approx(4.0));
  CHECK(fss.segments[1].turns[0].speaker == 1);
  CHECK(fss.segments[1].start == doctest::Approx(4.0));
  CHECK(fss.segments[1].end == doctest::Approx(6.0));
}

TEST_CASE("fss: a fully swallowed turn is dropped and recorded") {
  Segment seg;
  seg.start = 0;
  seg.end = 6;
  seg.turns = {turn(0, {1, 2, 3, 4, 5, 6}, 0, 6), turn(1, {7, 8}, 2, 4)};
  auto fss = first_speaker_segmentation(seg);
  REQUIRE(fss.segments.size() == 1);
  CHECK(fss.segments[0].turns[0].speaker == 0);
  CHECK(fss.segments[0].start == doctest::Approx(0.0));
  CHECK(fss.segments[0].end == doctest::Approx(6.0));
  REQUIRE(fss.dropped_turns.size() == 1);
  CHECK(fss.dropped_turns[0].speaker == 1);
}

TEST_CASE("fss outputs are single-speaker and tile the input span") {
  SimConfig cfg;
  cfg.seed = 21;
  for (int i = 0; i < 10; ++i) {
    Meeting m = gen_meeting(cfg, i);
    for (const auto& seg : m.segments) {
      auto fss = first_speaker_segmentation(seg);
      REQUIRE(!fss.segments.empty());
      CHECK(fss.segments.front().start == doctest::Approx(seg.start));
      CHECK(fss.segments.back().end >= seg.end - 1e-9);
      for (std::size_t k = 0; k < fss.segments.size(); ++k) {
        std::set<int> speakers;
        for (const auto& t : fss.segments[k].turns) speakers.insert(t.speaker);
        CHECK(speakers.size() == 1);
        if (k > 0)
          CHECK(fss.segments[k].start == doctest::Approx(fss.segments[k - 1].end));
      }
    }
  }
}

TEST_CASE("permute_segments: identity keeps indices, reversal swaps them") {
  SimConfig cfg;
  cfg.num_segments = 2;
  cfg.seed = 3;
  Meeting m;
  // two single-turn segments: speaker 0 then speaker 1
  Segment s1, s2;
  s1.start = 0;
  s1.end = 2;
  s1.turns = {turn(0, {1, 2}, 0, 2)};
  s2.start = 3;
  s2.end = 5;
  s2.turns = {turn(1, {3, 4}, 3, 5)};
  m = hand_meeting({s1, s2}, 2, cfg);

  Meeting same = apply_segment_permutation(m, {0, 1});
  auto order_same = first_appearance_order(same);
  CHECK(order_same.at(0) == 0);
  CHECK(order_same.at(1) == 1);

  Meeting rev = apply_segment_permutation(m, {1, 0});
  auto order_rev = first_appearance_order(rev);
  CHECK(order_rev.at(1) == 0);
  CHECK(order_rev.at(0) == 1);
  rev.validate();

  Meeting p1 = permute_segments(m, 99);
  Meeting p2 = permute_segments(m, 99);
  CHECK(meeting_to_json_line(p1) == meeting_to_json_line(p2));
}

TEST_CASE("corpus json round-trips byte-exactly") {
  SimConfig cfg;
  cfg.seed = 11;
  std::vector<Meeting> meetings;
  for (int i = 0; i < 3; ++i) meetings.push_back(gen_meeting(cfg, i));
  std::string once;
  for (const auto& m : meetings) once += meeting_to_json_line(m) + "\n";
  std::string twice;
  for (const auto& m : meetings)
    twice += meeting_to_json_line(meeting_from_json_line(meeting_to_json_line(m))) + "\n";
  CHECK(once == twice);
}
