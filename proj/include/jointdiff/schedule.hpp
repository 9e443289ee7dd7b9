#pragma once

#include <span>
#include <vector>

#include "jointdiff/tensor.hpp"

namespace jointdiff {

struct ScheduleParams {
  int steps = 200;
  double beta_start = 1e-4;
  double beta_end = 0.02;

  bool operator==(const ScheduleParams&) const = default;
};

/// Precomputed linear variance schedule.  Timesteps are 1-based; t = 0 denotes
/// the clean image (alpha_bar(0) = 1).
class NoiseSchedule {
 public:
  static NoiseSchedule linear(int steps, double beta_start, double beta_end);
  static NoiseSchedule from_params(const ScheduleParams& p) {
    return linear(p.steps, p.beta_start, p.beta_end);
  }

  int steps() const { return static_cast<int>(beta_.size()); }
  const ScheduleParams& params() const { return params_; }

  double beta(int t) const { return beta_[index(t)]; }
  double alpha(int t) const { return alpha_[index(t)]; }
  double alpha_bar(int t) const;
  /// beta_t (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t) for t >= 2, beta_1 at t = 1.
  double posterior_variance(int t) const { return posterior_var_[index(t)]; }

 private:
  NoiseSchedule() = default;
  std::size_t index(int t) const;

  ScheduleParams params_;
  std::vector<double> beta_;
  std::vector<double> alpha_;
  std::vector<double> alpha_bar_;
  std::vector<double> posterior_var_;
};

/// sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps, elementwise; t in [0, T].
Tensor forward_noise(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sched);

/// Per-example timesteps: row b of x0 [B,...] is noised to timesteps[b].
Tensor forward_noise(const Tensor& x0, std::span<const int> timesteps, const Tensor& eps,
                     const NoiseSchedule& sched);

struct PosteriorParams {
  Tensor mean;
  double variance;
};

/// Mean of the backward step under the noise-prediction parameterization,
/// (x_t - beta_t / sqrt(1 - alpha_bar_t) eps_hat) / sqrt(alpha_t), and the fixed
/// posterior variance.
PosteriorParams posterior_params(const Tensor& x_t, const Tensor& eps_hat, int t,
                                 const NoiseSchedule& sched);

/// round(fraction * T) clamped to [0, T].
int fraction_to_timestep(double fraction, int steps);

}  // namespace jointdiff
