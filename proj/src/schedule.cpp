#include "jointdiff/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace jointdiff {

NoiseSchedule NoiseSchedule::linear(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw ContractViolation("schedule: T must be >= 1, got " + std::to_string(steps));
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
    throw ContractViolation("schedule: need 0 < beta_start <= beta_end < 1, got (" +
                            std::to_string(beta_start) + ", " + std::to_string(beta_end) + ")");
  NoiseSchedule s;
  s.params_ = ScheduleParams{steps, beta_start, beta_end};
  s.beta_.resize(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / (steps - 1);
    s.beta_[static_cast<std::size_t>(i)] = beta_start + (beta_end - beta_start) * frac;
  }
  s.alpha_.resize(s.beta_.size());
  s.alpha_bar_.resize(s.beta_.size());
  s.posterior_var_.resize(s.beta_.size());
  double prod = 1.0;
  for (std::size_t i = 0; i < s.beta_.size(); ++i) {
    s.alpha_[i] = 1.0 - s.beta_[i];
    const double prev = prod;
    prod *= s.alpha_[i];
    s.alpha_bar_[i] = prod;
    s.posterior_var_[i] = i == 0 ? s.beta_[0] : s.beta_[i] * (1.0 - prev) / (1.0 - prod);
  }
  return s;
}

std::size_t NoiseSchedule::index(int t) const {
  if (t < 1 || t > steps())
    throw ContractViolation("timestep " + std::to_string(t) + " outside [1, " +
                            std::to_string(steps()) + "]");
  return static_cast<std::size_t>(t - 1);
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t == 0) return 1.0;
  return alpha_bar_[index(t)];
}

namespace {
void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape())
    throw ContractViolation(std::string(what) + ": shape mismatch " + shape_str(a.shape()) +
                            " vs " + shape_str(b.shape()));
}
}  // namespace

Tensor forward_noise(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sched) {
  check_same_shape(x0, eps, "forward_noise");
  if (t < 0 || t > sched.steps())
    throw ContractViolation("forward_noise: timestep " + std::to_string(t) + " outside [0, " +
                            std::to_string(sched.steps()) + "]");
  const double ab = sched.alpha_bar(t);
  const float a = static_cast<float>(std::sqrt(ab));
  const float s = static_cast<float>(std::sqrt(1.0 - ab));
  Tensor out(x0.shape());
  auto xv = x0.data();
  auto ev = eps.data();
  auto ov = out.data();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = a * xv[i] + s * ev[i];
  return out;
}

Tensor forward_noise(const Tensor& x0, std::span<const int> timesteps, const Tensor& eps,
                     const NoiseSchedule& sched) {
  check_same_shape(x0, eps, "forward_noise");
  const int bsz = x0.dim(0);
  if (static_cast<int>(timesteps.size()) != bsz)
    throw ContractViolation("forward_noise: " + std::to_string(timesteps.size()) +
                            " timesteps for batch of " + std::to_string(bsz));
  const std::size_t per = x0.size() / static_cast<std::size_t>(bsz);
  Tensor out(x0.shape());
  auto xv = x0.data();
  auto ev = eps.data();
  auto ov = out.data();
  for (int b = 0; b < bsz; ++b) {
    const int t = timesteps[b];
    if (t < 0 || t > sched.steps())
      throw ContractViolation("forward_noise: timestep " + std::to_string(t) + " outside [0, " +
                              std::to_string(sched.steps()) + "]");
    const double ab = sched.alpha_bar(t);
    const float a = static_cast<float>(std::sqrt(ab));
    const float s = static_cast<float>(std::sqrt(1.0 - ab));
    for (std::size_t i = b * per; i < (b + 1) * per; ++i) ov[i] = a * xv[i] + s * ev[i];
  }
  return out;
}

PosteriorParams posterior_params(const Tensor& x_t, const Tensor& eps_hat, int t,
                                 const NoiseSchedule& sched) {
  check_same_shape(x_t, eps_hat, "posterior_params");
  const double beta = sched.beta(t);
  const double coef = beta / std::sqrt(1.0 - sched.alpha_bar(t));
  const double inv_sqrt_alpha = 1.0 / std::sqrt(sched.alpha(t));
  Tensor mu(x_t.shape());
  auto xv = x_t.data();
  auto ev = eps_hat.data();
  auto mv = mu.data();
  for (std::size_t i = 0; i < mv.size(); ++i)
    mv[i] = static_cast<float>((xv[i] - coef * ev[i]) * inv_sqrt_alpha);
  return PosteriorParams{std::move(mu), sched.posterior_variance(t)};
}

int fraction_to_timestep(double fraction, int steps) {
  if (!(fraction >= 0.0 && fraction <= 1.0))
    throw ContractViolation("noise fraction must lie in [0, 1], got " + std::to_string(fraction));
  if (steps < 1) throw ContractViolation("fraction_to_timestep: T must be >= 1");
  const long t = std::lround(fraction * steps);
  return static_cast<int>(std::clamp<long>(t, 0, steps));
}

}  // namespace jointdiff
