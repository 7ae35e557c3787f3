#include "nfm/optim.hpp"

#include <cmath>
#include <numbers>

#include "nfm/error.hpp"

namespace nfm::ad {

Adam::Adam(ParameterStore& store, AdamConfig config) : params_(store.all()), config_(config) {
  for (const Parameter* p : params_) {
    m_.emplace_back(p->value.size(), 0.0);
    v_.emplace_back(p->value.size(), 0.0);
  }
}

void Adam::step() {
  for (const Parameter* p : params_)
    for (double g : p->grad)
      if (!std::isfinite(g)) throw Error("diverged: non-finite gradient in '" + p->name + "'");

  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t pi = 0; pi < params_.size(); ++pi) {
    Parameter& p = *params_[pi];
    auto& m = m_[pi];
    auto& v = v_[pi];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i] + config_.weight_decay * p.value[i];
      m[i] = b1 * m[i] + (1.0 - b1) * g;
      v[i] = b2 * v[i] + (1.0 - b2) * g * g;
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      p.value[i] -= config_.lr * m_hat / (std::sqrt(v_hat) + config_.eps);
    }
  }
}

double cosine_lr(std::size_t t, std::size_t total, double lr_max, double lr_min) {
  if (total == 0) return lr_max;
  const double frac = static_cast<double>(std::min(t, total)) / static_cast<double>(total);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * frac));
}

}  // namespace nfm::ad
