#include "dncasr/sim/corpus_io.hpp"

#include "dncasr/common.hpp"
#include "dncasr/sim/generator.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>

namespace dncasr::sim {

using ordered_json = nlohmann::ordered_json;

std::string meeting_to_json_line(const Meeting& meeting) {
  ordered_json j;
  j["meeting_id"] = meeting.id;
  j["config_digest"] = meeting.config.digest();
  j["config"] = meeting.config.canonical();
  ordered_json speakers = ordered_json::array();
  for (const auto& s : meeting.speakers) {
    ordered_json js;
    js["id"] = s.global_id;
    ordered_json latent = ordered_json::array();
    for (int d = 0; d < s.latent.size(); ++d) latent.push_back(s.latent[d]);
    js["latent"] = std::move(latent);
    speakers.push_back(std::move(js));
  }
  j["speakers"] = std::move(speakers);
  ordered_json segments = ordered_json::array();
  for (const auto& seg : meeting.segments) {
    ordered_json jseg;
    jseg["start"] = seg.start;
    jseg["end"] = seg.end;
    ordered_json turns = ordered_json::array();
    for (const auto& t : seg.turns) {
      ordered_json jt;
      jt["speaker"] = t.speaker;
      jt["tokens"] = t.tokens;
      jt["start"] = t.start;
      jt["end"] = t.end;
      turns.push_back(std::move(jt));
    }
    jseg["turns"] = std::move(turns);
    segments.push_back(std::move(jseg));
  }
  j["segments"] = std::move(segments);
  return j.dump();
}

namespace {

SimConfig config_from_canonical(const std::string& text) {
  SimConfig cfg;
  for (const auto& raw : split(text, '\n')) {
    std::string line = trim(raw);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw std::runtime_error("bad config line: " + line);
    std::string key = line.substr(0, eq), val = line.substr(eq + 1);
    if (key == "num_speakers") cfg.num_speakers = std::stoi(val);
    else if (key == "num_segments") cfg.num_segments = std::stoi(val);
    else if (key == "utterances_min") cfg.utterances_min = std::stoi(val);
    else if (key == "utterances_max") cfg.utterances_max = std::stoi(val);
    else if (key == "max_pairwise_overlap") cfg.max_pairwise_overlap = std::stod(val);
    else if (key == "target_meeting_overlap") cfg.target_meeting_overlap = std::stod(val);
    else if (key == "vocab_size") cfg.vocab_size = std::stoi(val);
    else if (key == "tokens_min") cfg.tokens_min = std::stoi(val);
    else if (key == "tokens_max") cfg.tokens_max = std::stoi(val);
    else if (key == "embed_dim") cfg.embed_dim = std::stoi(val);
    else if (key == "frame_dim") cfg.frame_dim = std::stoi(val);
    else if (key == "frames_per_token") cfg.frames_per_token = std::stoi(val);
    else if (key == "window_len") cfg.window_len = std::stod(val);
    else if (key == "window_stride") cfg.window_stride = std::stod(val);
    else if (key == "noise_sigma") cfg.noise_sigma = std::stod(val);
    else if (key == "seed") cfg.seed = std::stoull(val);
    else throw std::runtime_error("unknown config key: " + key);
  }
  return cfg;
}

}  // namespace

Meeting meeting_from_json_line(const std::string& line) {
  ordered_json j = ordered_json::parse(line);
  Meeting m;
  m.id = j.at("meeting_id").get<std::string>();
  m.config = config_from_canonical(j.at("config").get<std::string>());
  if (j.at("config_digest").get<std::string>() != m.config.digest())
    throw std::runtime_error("config digest mismatch for meeting " + m.id);
  for (const auto& js : j.at("speakers")) {
    SpeakerProfile s;
    s.global_id = js.at("id").get<int>();
    const auto& latent = js.at("latent");
    s.latent.resize(static_cast<int>(latent.size()));
    for (int d = 0; d < s.latent.size(); ++d) s.latent[d] = latent[d].get<double>();
    m.speakers.push_back(std::move(s));
  }
  for (const auto& jseg : j.at("segments")) {
    Segment seg;
    seg.start = jseg.at("start").get<double>();
    seg.end = jseg.at("end").get<double>();
    for (const auto& jt : jseg.at("turns")) {
      Turn t;
      t.speaker = jt.at("speaker").get<int>();
      t.tokens = jt.at("tokens").get<std::vector<int>>();
      t.start = jt.at("start").get<double>();
      t.end = jt.at("end").get<double>();
      seg.turns.push_back(std::move(t));
    }
    m.segments.push_back(std::move(seg));
  }
  return m;
}

void write_corpus(const std::string& path, const std::vector<Meeting>& meetings) {
  std::ostringstream out;
  for (const auto& m : meetings) out << meeting_to_json_line(m) << "\n";
  write_text_file(path, out.str());
}

std::vector<Meeting> read_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corpus: " + path);
  std::vector<Meeting> meetings;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    meetings.push_back(meeting_from_json_line(line));
  }
  return meetings;
}

std::string reference_lines(const std::vector<Meeting>& meetings) {
  std::ostringstream out;
  for (const auto& m : meetings) {
    for (std::size_t s = 0; s < m.segments.size(); ++s) {
      const Segment& seg = m.segments[s];
      for (std::size_t t = 0; t < seg.turns.size(); ++t) {
        const Turn& turn = seg.turns[t];
        out << m.id << "\t" << s << "\t" << t << "\tspk" << turn.speaker << "\t"
            << format_double(turn.start) << "\t" << format_double(turn.end) << "\t";
        for (std::size_t k = 0; k < turn.tokens.size(); ++k)
          out << (k ? " " : "") << turn.tokens[k];
        out << "\n";
      }
    }
  }
  return out.str();
}

std::string oracle_hypothesis_lines(const std::vector<Meeting>& meetings) {
  std::ostringstream out;
  for (const auto& m : meetings) {
    auto order = first_appearance_order(m);
    for (std::size_t s = 0; s < m.segments.size(); ++s) {
      const Segment& seg = m.segments[s];
      for (std::size_t t = 0; t < seg.turns.size(); ++t) {
        const Turn& turn = seg.turns[t];
        out << m.id << "\t" << s << "\t" << t << "\tspk" << order.at(turn.speaker)
            << "\t";
        for (std::size_t k = 0; k < turn.tokens.size(); ++k)
          out << (k ? " " : "") << turn.tokens[k];
        out << "\n";
      }
    }
  }
  return out.str();
}

}  // namespace dncasr::sim
