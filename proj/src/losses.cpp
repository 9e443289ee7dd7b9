#include "jointdiff/losses.hpp"

#include <string>

#include "jointdiff/ops.hpp"

namespace jointdiff {

Tensor gaussian_tensor(const Shape& shape, std::mt19937_64& rng) {
  Tensor t(shape);
  std::normal_distribution<float> dist(0.0f, 1.0f);
  for (float& v : t.data()) v = dist(rng);
  return t;
}

NoiseSource gaussian_noise(std::mt19937_64& rng) {
  return [&rng](const Shape& s) { return gaussian_tensor(s, rng); };
}

DiffusionDraw draw_diffusion_inputs(const Tensor& x0, const NoiseSchedule& sched,
                                    std::mt19937_64& rng) {
  DiffusionDraw d;
  const int bsz = x0.dim(0);
  std::uniform_int_distribution<int> pick(1, sched.steps());
  d.timesteps.resize(static_cast<std::size_t>(bsz));
  for (auto& t : d.timesteps) t = pick(rng);
  d.eps = gaussian_tensor(x0.shape(), rng);
  d.x_t = forward_noise(x0, d.timesteps, d.eps, sched);
  return d;
}

Tensor noise_prediction_loss(const Tensor& eps_hat, const Tensor& eps) {
  if (eps_hat.shape() != eps.shape())
    throw ContractViolation("noise_prediction_loss: shape mismatch " + shape_str(eps_hat.shape()) +
                            " vs " + shape_str(eps.shape()));
  Tensor d = ops::sub(eps_hat, eps);
  return ops::scale(ops::sum(ops::mul(d, d)), 1.0f / static_cast<float>(eps.dim(0)));
}

Tensor diffusion_loss(const Tensor& x0, const NoiseSchedule& sched, const NoisePredictor& predict,
                      std::mt19937_64& rng) {
  if (!x0.defined() || x0.dim(0) < 1) throw ContractViolation("diffusion_loss: empty batch");
  DiffusionDraw d = draw_diffusion_inputs(x0, sched, rng);
  return noise_prediction_loss(predict(d.x_t, d.timesteps), d.eps);
}

Tensor diffusion_loss(const JointModel& model, const Tensor& x0, const NoiseSchedule& sched,
                      std::mt19937_64& rng) {
  return diffusion_loss(
      x0, sched,
      [&model](const Tensor& x_t, std::span<const int> ts) {
        return model.decode(model.encode(x_t, ts));
      },
      rng);
}

Tensor cross_entropy(const Tensor& log_probs, std::span<const int> labels) {
  return ops::nll(log_probs, labels);
}

std::map<int, Tensor> noisy_class_loss(const JointModel& model, const Tensor& x0,
                                       std::span<const int> labels, std::span<const int> t_set,
                                       const NoiseSchedule& sched, const NoiseSource& noise) {
  for (int t : t_set)
    if (t <= 0 || t >= sched.steps())
      throw ContractViolation("noisy_class_loss: timestep " + std::to_string(t) +
                              " outside (0, " + std::to_string(sched.steps()) + ")");
  std::map<int, Tensor> out;
  for (int t : t_set) {
    Tensor x_t = forward_noise(x0, t, noise(x0.shape()), sched);
    out[t] = cross_entropy(model.classify(model.encode(x_t, t)), labels);
  }
  return out;
}

double JointLossBreakdown::noisy_sum() const {
  double s = 0.0;
  for (const auto& [t, v] : noisy_class_terms) s += v;
  return s;
}

Tensor classification_loss(const JointModel& model, const Tensor& x0, std::span<const int> labels) {
  return cross_entropy(model.classify(model.encode(x0, 0)), labels);
}

void add_classification_terms(JointLoss& acc, const JointModel& model, const Tensor& x0,
                              std::span<const int> labels, const NoiseSchedule& sched,
                              const JointLossConfig& config, std::mt19937_64& rng) {
  for (int y : labels)
    if (y < 0 || y >= model.num_classes())
      throw ContractViolation("joint_loss: label " + std::to_string(y) + " outside [0, " +
                              std::to_string(model.num_classes()) + ")");
  Tensor cls = ops::scale(classification_loss(model, x0, labels), config.class_weight);
  acc.breakdown.class_term += cls.item();
  acc.total = acc.total.defined() ? ops::add(acc.total, cls) : cls;
  if (config.noisy_classifier && sched.steps() > 1) {
    std::uniform_int_distribution<int> pick(1, sched.steps() - 1);
    const int t = pick(rng);
    const int ts[1] = {t};
    auto terms = noisy_class_loss(model, x0, labels, ts, sched, gaussian_noise(rng));
    for (auto& [tt, term] : terms) {
      Tensor weighted = ops::scale(term, config.class_weight);
      acc.breakdown.noisy_class_terms[tt] += weighted.item();
      acc.total = ops::add(acc.total, weighted);
    }
  }
  acc.breakdown.total = acc.total.item();
}

JointLoss joint_loss(const JointModel& model, const Tensor& x0,
                     std::optional<std::span<const int>> labels, const NoiseSchedule& sched,
                     const JointLossConfig& config, std::mt19937_64& rng) {
  JointLoss out;
  Tensor diff = diffusion_loss(model, x0, sched, rng);
  out.breakdown.diffusion_term = diff.item();
  out.total = diff;
  out.breakdown.total = diff.item();
  if (labels) add_classification_terms(out, model, x0, *labels, sched, config, rng);
  return out;
}

}  // namespace jointdiff
