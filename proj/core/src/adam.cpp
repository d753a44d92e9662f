#include "vilsum/adam.hpp"

#include <cmath>

#include "vilsum/errors.hpp"
#include "vilsum/tape.hpp"

namespace vilsum {

float AdamOptimizer::current_lr() const {
  return warmup_lr(step_ == 0 ? 1 : step_, cfg_.base_lr, cfg_.warmup_steps);
}

void AdamOptimizer::step(ParamStore& params) {
  bool any = false;
  for (const auto& [name, p] : params.items()) {
    if (p.has_grad()) {
      any = true;
      break;
    }
  }
  if (!any) throw ContractError("adam_step: no parameter carries a gradient");

  step_ += 1;
  const float lr = warmup_lr(step_, cfg_.base_lr, cfg_.warmup_steps);
  const double bc1 = 1.0 - std::pow(static_cast<double>(cfg_.beta1), static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(static_cast<double>(cfg_.beta2), static_cast<double>(step_));

  for (auto& [name, p] : params.items()) {
    if (!p.has_grad()) continue;
    Moments& mo = moments_[name];
    if (mo.m.empty()) {
      mo.m.assign(p.size(), 0.0f);
      mo.v.assign(p.size(), 0.0f);
    }
    const std::vector<float>& g = p.grad();
    auto data = p.data();
    for (size_t i = 0; i < data.size(); ++i) {
      const float gi = g[i];
      mo.m[i] = cfg_.beta1 * mo.m[i] + (1.0f - cfg_.beta1) * gi;
      mo.v[i] = cfg_.beta2 * mo.v[i] + (1.0f - cfg_.beta2) * gi * gi;
      const float mhat = static_cast<float>(mo.m[i] / bc1);
      const float vhat = static_cast<float>(mo.v[i] / bc2);
      data[i] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * data[i]);
    }
  }
}

void AdamOptimizer::restore(long step, std::map<std::string, Moments> moments) {
  step_ = step;
  moments_ = std::move(moments);
}

}  // namespace vilsum
