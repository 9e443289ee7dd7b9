#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "jointdiff/tensor.hpp"

namespace jointdiff {

struct AdamConfig {
  float lr = 2e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

/// Adaptive-moment optimizer with bias correction.
///
/// Holds one first/second moment buffer per parameter.  step() requires every
/// parameter to carry a gradient, applies the update and zeroes the gradients.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig config = {});

  void step();

  std::int64_t steps_taken() const { return step_; }
  const AdamConfig& config() const { return config_; }
  std::span<const float> first_moment(std::size_t i) const { return m_.at(i); }
  std::span<const float> second_moment(std::size_t i) const { return v_.at(i); }
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  AdamConfig config_;
  std::vector<std::vector<float>> m_;
  std::vector<std::vector<float>> v_;
  std::int64_t step_ = 0;
};

}  // namespace jointdiff
