// Corpus persistence: one meeting per line as a structured JSON record, plus
// the tab-separated reference/hypothesis transcript formats used for scoring.
#pragma once

#include "dncasr/sim/types.hpp"

#include <string>
#include <vector>

namespace dncasr::sim {

std::string meeting_to_json_line(const Meeting& meeting);
Meeting meeting_from_json_line(const std::string& line);

void write_corpus(const std::string& path, const std::vector<Meeting>& meetings);
std::vector<Meeting> read_corpus(const std::string& path);

// Reference transcript: meeting_id \t segment \t turn \t spk<ID> \t start \t end \t tokens.
std::string reference_lines(const std::vector<Meeting>& meetings);

// Oracle hypothesis in the inference output format (speaker indices by first
// appearance): meeting_id \t segment \t turn \t spk<k> \t tokens.
std::string oracle_hypothesis_lines(const std::vector<Meeting>& meetings);

}  // namespace dncasr::sim
