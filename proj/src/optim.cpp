#include "jointdiff/optim.hpp"

#include <cmath>

namespace jointdiff {

Adam::Adam(std::vector<Tensor> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
  if (!(config_.lr > 0.0f)) throw ContractViolation("learning rate must be positive");
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.emplace_back(p.size(), 0.0f);
    v_.emplace_back(p.size(), 0.0f);
  }
}

void Adam::step() {
  for (const auto& p : params_)
    if (!p.has_grad())
      throw ContractViolation("optimizer step: parameter '" + p.name() + "' has no gradient");

  ++step_;
  const double c1 = 1.0 - std::pow(static_cast<double>(config_.beta1), static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(static_cast<double>(config_.beta2), static_cast<double>(step_));
  const float step_size = static_cast<float>(config_.lr / c1);
  const float inv_c2 = static_cast<float>(1.0 / c2);
  const float b1 = config_.beta1, b2 = config_.beta2;

  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k];
    auto w = p.data();
    auto g = p.grad();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (1.0f - b1) * g[i];
      v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
      w[i] -= step_size * m[i] / (std::sqrt(v[i] * inv_c2) + config_.eps);
    }
    p.zero_grad();
  }
}

}  // namespace jointdiff
