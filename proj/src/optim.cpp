#include "dact/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace dact {

Adam::Adam(std::vector<Param*> params, float lr, AdamConfig cfg)
    : params_(std::move(params)), lr_(lr), cfg_(cfg) {}

void Adam::step() {
  for (Param* p : params_) {
    for (float g : p->grad.data)
      if (!std::isfinite(g))
        throw std::runtime_error("adam: non-finite gradient in " + p->name);
  }
  for (Param* p : params_) {
    p->adam_step += 1;
    double bc1 = 1.0 - std::pow(static_cast<double>(cfg_.beta1), static_cast<double>(p->adam_step));
    double bc2 = 1.0 - std::pow(static_cast<double>(cfg_.beta2), static_cast<double>(p->adam_step));
    float* v = p->value.data.data();
    float* g = p->grad.data.data();
    float* m = p->adam_m.data.data();
    float* s = p->adam_v.data.data();
    int64_t n = p->numel();
    for (int64_t i = 0; i < n; ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0f - cfg_.beta1) * g[i];
      s[i] = cfg_.beta2 * s[i] + (1.0f - cfg_.beta2) * g[i] * g[i];
      float mhat = static_cast<float>(m[i] / bc1);
      float vhat = static_cast<float>(s[i] / bc2);
      v[i] -= lr_ * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
    p->zero_grad();
  }
}

double clip_param_grad_norm(Param& p, double c) {
  double sq = 0.0;
  for (float g : p.grad.data) {
    if (!std::isfinite(g)) throw std::runtime_error("clip: non-finite gradient in " + p.name);
    sq += static_cast<double>(g) * g;
  }
  double norm = std::sqrt(sq);
  if (norm > c && norm > 0.0) {
    float scale = static_cast<float>(c / norm);
    for (float& g : p.grad.data) g *= scale;
  }
  return norm;
}

void clip_all_grads(const std::vector<Param*>& params, double c) {
  for (Param* p : params) clip_param_grad_norm(*p, c);
}

}  // namespace dact
