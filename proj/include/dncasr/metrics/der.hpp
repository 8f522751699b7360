// Diarization error rate with a scoring collar around reference boundaries;
// overlap regions are scored, and hypothesis speakers are mapped to reference
// speakers by maximising matched speech time.
#pragma once

#include <string>
#include <vector>

namespace dncasr::metrics {

struct TimedTurn {
  std::string speaker;
  double start = 0.0;
  double end = 0.0;
};

struct DerResult {
  double der = 0.0;
  double missed = 0.0;      // time
  double false_alarm = 0.0;
  double confusion = 0.0;
  double scored_ref_time = 0.0;
};

DerResult der(const std::vector<TimedTurn>& ref, const std::vector<TimedTurn>& hyp,
              double collar = 0.25);

}  // namespace dncasr::metrics
