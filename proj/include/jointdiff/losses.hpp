#pragma once

#include <functional>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "jointdiff/model.hpp"
#include "jointdiff/schedule.hpp"
#include "jointdiff/tensor.hpp"

namespace jointdiff {

/// Produces a noise tensor of the requested shape.
using NoiseSource = std::function<Tensor(const Shape&)>;

/// Standard normal draws from `rng` (which must outlive the returned source).
NoiseSource gaussian_noise(std::mt19937_64& rng);
Tensor gaussian_tensor(const Shape& shape, std::mt19937_64& rng);

/// One Monte-Carlo draw of the simplified diffusion objective's inputs.
struct DiffusionDraw {
  std::vector<int> timesteps;  // uniform on {1..T}, one per example
  Tensor eps;
  Tensor x_t;
};

DiffusionDraw draw_diffusion_inputs(const Tensor& x0, const NoiseSchedule& sched,
                                    std::mt19937_64& rng);

/// sum over pixels of (eps_hat - eps)^2, averaged over the batch.
Tensor noise_prediction_loss(const Tensor& eps_hat, const Tensor& eps);

using NoisePredictor = std::function<Tensor(const Tensor& x_t, std::span<const int> timesteps)>;

Tensor diffusion_loss(const Tensor& x0, const NoiseSchedule& sched, const NoisePredictor& predict,
                      std::mt19937_64& rng);
Tensor diffusion_loss(const JointModel& model, const Tensor& x0, const NoiseSchedule& sched,
                      std::mt19937_64& rng);

/// Batch mean of -logp[b, y_b]; labels must lie in [0, K).
Tensor cross_entropy(const Tensor& log_probs, std::span<const int> labels);

/// Cross-entropy of the shared head on representations of x0 noised to each t
/// in t_set (0 < t < T), one fresh noise draw per t.
std::map<int, Tensor> noisy_class_loss(const JointModel& model, const Tensor& x0,
                                       std::span<const int> labels, std::span<const int> t_set,
                                       const NoiseSchedule& sched, const NoiseSource& noise);

struct JointLossConfig {
  float class_weight = 1.0f;
  bool noisy_classifier = false;
};

struct JointLossBreakdown {
  double diffusion_term = 0.0;
  double class_term = 0.0;
  std::map<int, double> noisy_class_terms;
  double total = 0.0;

  double noisy_sum() const;
};

struct JointLoss {
  Tensor total;
  JointLossBreakdown breakdown;
};

/// Simplified diffusion term plus, when labels are given, the clean-image
/// cross-entropy and (optionally) one noisy-classifier term at a uniformly
/// drawn t in (0, T).  Without labels the total is the diffusion term alone.
JointLoss joint_loss(const JointModel& model, const Tensor& x0,
                     std::optional<std::span<const int>> labels, const NoiseSchedule& sched,
                     const JointLossConfig& config, std::mt19937_64& rng);

/// Adds the weighted clean-image cross-entropy (and the optional noisy term) on
/// (x0, labels) to `acc`.  Used for label batches that differ from the
/// diffusion batch, as in buffered semi-supervised training.
void add_classification_terms(JointLoss& acc, const JointModel& model, const Tensor& x0,
                              std::span<const int> labels, const NoiseSchedule& sched,
                              const JointLossConfig& config, std::mt19937_64& rng);

/// Cross-entropy of the head on clean (t = 0) representations; no diffusion term.
Tensor classification_loss(const JointModel& model, const Tensor& x0, std::span<const int> labels);

}  // namespace jointdiff
