#pragma once

#include <map>
#include <string>
#include <vector>

#include "vilsum/param_store.hpp"

namespace vilsum {

struct AdamConfig {
  float base_lr = 3e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.99f;
  float eps = 1e-8f;
  float weight_decay = 1e-4f;
  long warmup_steps = 1000;
};

/// Adam with bias correction, decoupled weight decay, and linear lr warmup.
/// Each step updates exactly the parameters that carry a gradient buffer;
/// parameters a loss never touched keep their values, moments, everything.
class AdamOptimizer {
 public:
  struct Moments {
    std::vector<float> m;
    std::vector<float> v;
  };

  explicit AdamOptimizer(AdamConfig cfg) : cfg_(cfg) {}

  /// One update over params with populated grads. Throws ContractError if
  /// no parameter has a gradient (backward was not run).
  void step(ParamStore& params);

  long step_count() const { return step_; }
  float current_lr() const;
  const AdamConfig& config() const { return cfg_; }

  // Checkpoint access.
  const std::map<std::string, Moments>& moments() const { return moments_; }
  void restore(long step, std::map<std::string, Moments> moments);

 private:
  AdamConfig cfg_;
  long step_ = 0;
  std::map<std::string, Moments> moments_;
};

}  // namespace vilsum
