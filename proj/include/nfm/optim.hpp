#pragma once

#include <cstddef>
#include <vector>

#include "nfm/autodiff.hpp"

namespace nfm::ad {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// Adam with bias correction. Moments start at zero; step() consumes the
/// gradients currently accumulated in the store.
class Adam {
 public:
  Adam(ParameterStore& store, AdamConfig config);

  /// Throws "diverged" if any gradient is non-finite; parameters are left
  /// untouched in that case.
  void step();

  void set_lr(double lr) { config_.lr = lr; }
  double lr() const { return config_.lr; }
  std::size_t steps() const { return t_; }
  const AdamConfig& config() const { return config_; }

 private:
  std::vector<Parameter*> params_;
  std::vector<std::vector<double>> m_, v_;
  AdamConfig config_;
  std::size_t t_ = 0;
};

/// lr_min + (lr_max - lr_min)(1 + cos(pi t / T)) / 2; lr_max when T == 0.
double cosine_lr(std::size_t t, std::size_t total, double lr_max, double lr_min);

}  // namespace nfm::ad
