#pragma once

#include <vector>

#include "dact/autodiff.hpp"

namespace dact {

struct AdamConfig {
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

// One optimizer instance per network; lr is mutable so per-epoch decay is a
// plain multiplication at the call site.
class Adam {
 public:
  Adam(std::vector<Param*> params, float lr, AdamConfig cfg = {});

  // Applies one update from the accumulated gradients and zeroes them.
  // Throws if any gradient entry is non-finite.
  void step();

  float lr() const { return lr_; }
  void set_lr(float lr) { lr_ = lr; }
  const std::vector<Param*>& params() const { return params_; }

 private:
  std::vector<Param*> params_;
  float lr_;
  AdamConfig cfg_;
};

// Rescales one parameter's gradient to L2 norm <= c (no-op if already within).
// Returns the pre-clip norm.
double clip_param_grad_norm(Param& p, double c);

// Convenience: clip every parameter independently to the same bound.
void clip_all_grads(const std::vector<Param*>& params, double c);

}  // namespace dact
