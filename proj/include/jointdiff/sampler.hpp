#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "jointdiff/model.hpp"
#include "jointdiff/schedule.hpp"

namespace jointdiff {

enum class SamplerMode { unconditional, guided, optimized };

std::string_view mode_name(SamplerMode m);
SamplerMode parse_mode(std::string_view s);

struct SamplerConfig {
  SamplerMode mode = SamplerMode::unconditional;
  std::optional<int> target_class;
  /// Representation step size (optimized mode).
  float alpha = 0.0f;
  /// Input-gradient scale (guided mode).
  float scale = 0.0f;
  std::uint64_t seed = 0;
  int n = 8;
  /// Gradient steps on the pyramid per timestep (optimized mode).
  int opt_steps = 1;

  void validate() const;
};

/// Per-timestep, per-sample classifier confidence in the target class, before
/// and after the representation update (equal when no update is applied).
struct TraceRow {
  int t = 0;
  int sample = 0;
  int target = 0;
  double confidence = 0.0;
  double confidence_after = 0.0;
  int decision = 0;
  int decision_after = 0;
};

struct SampleResult {
  Tensor images;
  std::vector<TraceRow> trace;
};

/// One independent random stream per sample index, so a sample's draws do not
/// depend on how many other samples are generated alongside it.
std::mt19937_64 sample_stream(std::uint64_t seed, int index);

SampleResult sample(const JointModel& model, const NoiseSchedule& sched,
                    const SamplerConfig& config, bool trace = false);

Tensor sample_unconditional(const JointModel& model, const NoiseSchedule& sched, int n,
                            std::uint64_t seed);
/// Classifier guidance: the backward mean is shifted by scale * var * grad_x log p(y | x_t).
Tensor sample_classifier_guided(const JointModel& model, const NoiseSchedule& sched, int n, int y,
                                float scale, std::uint64_t seed);
/// Each step takes `opt_steps` ascent steps Z <- Z + alpha grad_Z log g(y | Z) on
/// every pyramid level before decoding the noise prediction.
Tensor sample_conditional_optimized(const JointModel& model, const NoiseSchedule& sched, int n,
                                    int y, float alpha, std::uint64_t seed, int opt_steps = 1);

struct CounterfactualResult {
  Tensor original;
  Tensor edited;
  Tensor difference;  // edited - original
  int start_timestep = 0;
  std::vector<TraceRow> trace;
};

/// Noises each x0 row to round(noise_frac * T) and denoises it with
/// representation-optimized sampling toward targets[row].
CounterfactualResult counterfactual(const JointModel& model, const NoiseSchedule& sched,
                                    const Tensor& x0, std::span<const int> targets,
                                    double noise_frac, float alpha, std::uint64_t seed,
                                    int opt_steps = 1, bool trace = false);

}  // namespace jointdiff
