// Adam with linear learning-rate warm-up (constant afterwards).
#pragma once

#include "dncasr/model/tape.hpp"

#include <vector>

namespace dncasr::train {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  // One update over all trainable parameters using their accumulated grads.
  void step(std::vector<model::Parameter>& params, double lr);
  long long steps_taken() const { return t_; }

 private:
  AdamConfig cfg_;
  long long t_ = 0;
};

// Linear 0 -> lr over the first warmup_frac*total_steps, then constant lr.
double lr_schedule(long long step, long long total_steps, double lr, double warmup_frac);

}  // namespace dncasr::train
