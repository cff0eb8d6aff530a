#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "nightcap/tensor.hpp"

namespace nightcap {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with bias correction. Parameters without a gradient are treated as
/// having a zero gradient for the step.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig config);

  void step();
  std::size_t steps() const { return steps_; }
  const AdamConfig& config() const { return config_; }

 private:
  std::vector<Tensor> params_;
  AdamConfig config_;
  std::vector<std::vector<double>> first_moment_;
  std::vector<std::vector<double>> second_moment_;
  std::size_t steps_ = 0;
};

double global_grad_norm(std::span<const Tensor> params);

/// Rescales all gradients so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
double clip_grad_norm(std::span<Tensor> params, double max_norm);

}  // namespace nightcap
