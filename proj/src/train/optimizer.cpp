#include "dncasr/train/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace dncasr::train {

void Adam::step(std::vector<model::Parameter>& params, double lr) {
  ++t_;
  double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (auto& p : params) {
    if (!p.trainable) continue;
    if (p.grad.size() == 0) p.zero_grad();
    if (p.adam_m.size() == 0) {
      p.adam_m.setZero(p.value.rows(), p.value.cols());
      p.adam_v.setZero(p.value.rows(), p.value.cols());
    }
    p.adam_m = cfg_.beta1 * p.adam_m + (1.0 - cfg_.beta1) * p.grad;
    p.adam_v.array() =
        cfg_.beta2 * p.adam_v.array() + (1.0 - cfg_.beta2) * p.grad.array().square();
    p.value.array() -=
        lr * (p.adam_m.array() / bc1) / ((p.adam_v.array() / bc2).sqrt() + cfg_.eps);
  }
}

double lr_schedule(long long step, long long total_steps, double lr, double warmup_frac) {
  if (step < 0 || step > total_steps)
    throw std::invalid_argument("lr_schedule: step outside [0, total_steps]");
  long long warmup = static_cast<long long>(std::llround(warmup_frac * total_steps));
  if (warmup <= 0) return lr;
  if (step >= warmup) return lr;
  return lr * static_cast<double>(step) / static_cast<double>(warmup);
}

}  // namespace dncasr::train
