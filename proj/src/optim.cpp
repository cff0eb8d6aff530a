#include "nightcap/optim.hpp"

#include <cmath>

#include "nightcap/error.hpp"

namespace nightcap {

Adam::Adam(std::vector<Tensor> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
  if (config_.learning_rate < 0) throw ParameterError("Adam: learning rate must be >= 0");
  for (const auto& p : params_) {
    first_moment_.emplace_back(p.size(), 0.0);
    second_moment_.emplace_back(p.size(), 0.0);
  }
}

void Adam::step() {
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double correction1 = 1.0 - std::pow(config_.beta1, t);
  const double correction2 = 1.0 - std::pow(config_.beta2, t);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k];
    if (!p.has_grad()) continue;
    auto value = p.mutable_data();
    auto grad = p.grad();
    auto& m = first_moment_[k];
    auto& v = second_moment_[k];
    for (std::size_t i = 0; i < value.size(); ++i) {
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * grad[i];
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * grad[i] * grad[i];
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      value[i] -= config_.learning_rate * m_hat / (std::sqrt(v_hat) + config_.epsilon);
    }
  }
}

double global_grad_norm(std::span<const Tensor> params) {
  double total = 0.0;
  for (const auto& p : params) {
    for (double g : p.grad()) total += g * g;
  }
  return std::sqrt(total);
}

double clip_grad_norm(std::span<Tensor> params, double max_norm) {
  if (!(max_norm > 0)) throw ParameterError("clip_grad_norm: max_norm must be positive");
  const double norm = global_grad_norm(params);
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto& p : params) {
      if (!p.has_grad()) continue;
      for (auto& g : p.mutable_grad()) g *= scale;
    }
  }
  return norm;
}

}  // namespace nightcap
