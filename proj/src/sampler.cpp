#include "jointdiff/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include "jointdiff/autodiff.hpp"
#include "jointdiff/losses.hpp"
#include "jointdiff/ops.hpp"

namespace jointdiff {

std::string_view mode_name(SamplerMode m) {
  switch (m) {
    case SamplerMode::unconditional: return "unconditional";
    case SamplerMode::guided: return "guided";
    case SamplerMode::optimized: return "optimized";
  }
  return "?";
}

SamplerMode parse_mode(std::string_view s) {
  if (s == "unconditional") return SamplerMode::unconditional;
  if (s == "guided") return SamplerMode::guided;
  if (s == "optimized") return SamplerMode::optimized;
  throw ContractViolation("unknown sampler mode '" + std::string(s) +
                          "' (expected unconditional, guided or optimized)");
}

void SamplerConfig::validate() const {
  if (n < 1) throw ContractViolation("sampler: n must be >= 1");
  if (!(alpha >= 0.0f) || !std::isfinite(alpha)) throw ContractViolation("sampler: alpha must be >= 0");
  if (!(scale >= 0.0f) || !std::isfinite(scale)) throw ContractViolation("sampler: scale must be >= 0");
  if (opt_steps < 1) throw ContractViolation("sampler: opt_steps must be >= 1");
  if (mode != SamplerMode::unconditional && !target_class)
    throw ContractViolation("sampler: mode " + std::string(mode_name(mode)) + " needs a target class");
}

std::mt19937_64 sample_stream(std::uint64_t seed, int index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), 0x5a17u};
  return std::mt19937_64(seq);
}

namespace {

// Turns parameter tracking off for the lifetime of the guard so gradient
// queries during sampling never touch the model's gradient buffers.
class FrozenParams {
 public:
  explicit FrozenParams(const JointModel& model) : params_(model.parameters()) {
    flags_.reserve(params_.size());
    for (auto& p : params_) {
      flags_.push_back(p.requires_grad());
      p.set_requires_grad(false);
    }
  }
  ~FrozenParams() {
    for (std::size_t i = 0; i < params_.size(); ++i) params_[i].set_requires_grad(flags_[i]);
  }
  FrozenParams(const FrozenParams&) = delete;
  FrozenParams& operator=(const FrozenParams&) = delete;

 private:
  std::vector<Tensor> params_;
  std::vector<bool> flags_;
};

// A per-index engine with its own normal distribution (the distribution caches
// a spare draw, so sharing one across engines would couple the streams).
struct Stream {
  std::mt19937_64 engine;
  std::normal_distribution<float> normal{0.0f, 1.0f};
  float next() { return normal(engine); }
};

std::vector<Stream> make_streams(std::uint64_t seed, int n) {
  std::vector<Stream> s;
  s.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) s.push_back(Stream{sample_stream(seed, i)});
  return s;
}

void fill_noise(Tensor& x, std::vector<Stream>& streams) {
  const std::size_t per = x.size() / streams.size();
  auto v = x.data();
  for (std::size_t row = 0; row < streams.size(); ++row)
    for (std::size_t i = 0; i < per; ++i) v[row * per + i] = streams[row].next();
}

struct Guidance {
  SamplerMode mode = SamplerMode::unconditional;
  std::vector<int> targets;
  float alpha = 0.0f;
  float scale = 0.0f;
  int opt_steps = 1;

  bool optimizes() const { return mode == SamplerMode::optimized && alpha != 0.0f; }
  bool guides() const { return mode == SamplerMode::guided && scale != 0.0f; }
};

void check_targets(const JointModel& model, std::span<const int> targets) {
  for (int y : targets)
    if (y < 0 || y >= model.num_classes())
      throw ContractViolation("sampler: target class " + std::to_string(y) + " outside [0, " +
                              std::to_string(model.num_classes()) + ")");
}

// Sum over rows of log p(targets[b] | pooled(levels)), recorded on the active tape.
Tensor target_log_prob(const JointModel& model, std::span<const Tensor> levels,
                       std::span<const int> targets) {
  const Tensor logp = model.head().log_probs(pool(levels));
  return ops::scale(ops::nll(logp, targets), -static_cast<float>(targets.size()));
}

void record_confidence(const Tensor& logp, std::span<const int> targets, int t, bool after,
                       std::vector<TraceRow>& rows, std::size_t first_row) {
  const int k = logp.dim(1);
  const auto decisions = argmax_rows(logp);
  for (std::size_t b = 0; b < targets.size(); ++b) {
    const double conf = std::exp(static_cast<double>(logp[b * k + targets[b]]));
    if (!after) {
      TraceRow r;
      r.t = t;
      r.sample = static_cast<int>(b);
      r.target = targets[b];
      r.confidence = r.confidence_after = conf;
      r.decision = r.decision_after = decisions[b];
      rows.push_back(r);
    } else {
      rows[first_row + b].confidence_after = conf;
      rows[first_row + b].decision_after = decisions[b];
    }
  }
}

// One representation-optimized noise prediction at timestep t.
Tensor optimized_eps(const JointModel& model, const Tensor& x, int t, const Guidance& g,
                     std::vector<TraceRow>* trace) {
  FeaturePyramid pyr = [&] {
    NoGradScope ng;
    return model.encode(x, t);
  }();
  const std::size_t first_row = trace ? trace->size() : 0;
  if (trace) {
    NoGradScope ng;
    record_confidence(model.classify(pyr), g.targets, t, false, *trace, first_row);
  }
  if (g.optimizes()) {
    std::vector<Tensor> levels = pyr.levels();
    for (int step = 0; step < g.opt_steps; ++step) {
      std::vector<Tensor> leaves;
      leaves.reserve(levels.size());
      for (const auto& l : levels) {
        Tensor leaf = l.detach();
        leaf.set_requires_grad(true);
        leaves.push_back(leaf);
      }
      Tape tape;
      Tensor objective;
      {
        TapeScope scope(tape);
        objective = target_log_prob(model, leaves, g.targets);
      }
      tape.backward(objective);
      for (auto& leaf : leaves) {
        auto v = leaf.data();
        auto gr = leaf.grad();
        for (std::size_t i = 0; i < v.size(); ++i) v[i] += g.alpha * gr[i];
        leaf.clear_grad();
        leaf.set_requires_grad(false);
      }
      levels = std::move(leaves);
    }
    pyr = pyr.with_levels(std::move(levels));
    if (trace) {
      NoGradScope ng;
      record_confidence(model.classify(pyr), g.targets, t, true, *trace, first_row);
    }
  }
  NoGradScope ng;
  return model.decode(pyr);
}

// grad_x sum_b log p(targets[b] | x_t) through encode, pool and the head.
Tensor input_gradient(const JointModel& model, const Tensor& x, int t, std::span<const int> targets) {
  Tensor leaf = x.detach();
  leaf.set_requires_grad(true);
  Tape tape;
  Tensor objective;
  {
    TapeScope scope(tape);
    const FeaturePyramid pyr = model.encode(leaf, t);
    objective = target_log_prob(model, pyr.levels(), targets);
  }
  tape.backward(objective);
  Tensor g(leaf.shape(), std::vector<float>(leaf.grad().begin(), leaf.grad().end()));
  return g;
}

// Backward chain from x (at t_start) down to t = 1; per-row noise comes from streams[row].
Tensor run_chain(const JointModel& model, const NoiseSchedule& sched, Tensor x, int t_start,
                 std::vector<Stream>& streams, const Guidance& g,
                 std::vector<TraceRow>* trace) {
  const int b = x.dim(0);
  const std::size_t per = x.size() / static_cast<std::size_t>(b);
  const bool conditional = g.mode != SamplerMode::unconditional;
  std::unique_ptr<FrozenParams> frozen;
  if (g.optimizes() || g.guides()) frozen = std::make_unique<FrozenParams>(model);

  for (int t = t_start; t >= 1; --t) {
    Tensor eps_hat;
    if (g.mode == SamplerMode::optimized) {
      eps_hat = optimized_eps(model, x, t, g, trace);
    } else {
      NoGradScope ng;
      const FeaturePyramid pyr = model.encode(x, t);
      if (trace && conditional) record_confidence(model.classify(pyr), g.targets, t, false, *trace, trace->size());
      eps_hat = model.decode(pyr);
    }
    PosteriorParams post = posterior_params(x, eps_hat, t, sched);
    if (g.guides()) {
      const Tensor grad = input_gradient(model, x, t, g.targets);
      const float shift = g.scale * static_cast<float>(post.variance);
      auto m = post.mean.data();
      auto gr = grad.data();
      for (std::size_t i = 0; i < m.size(); ++i) m[i] += shift * gr[i];
    }
    Tensor next = post.mean.clone();
    if (t > 1) {
      const float sigma = static_cast<float>(std::sqrt(post.variance));
      auto v = next.data();
      for (int row = 0; row < b; ++row)
        for (std::size_t i = 0; i < per; ++i) v[row * per + i] += sigma * streams[row].next();
    }
    x = next;
  }
  auto v = x.data();
  for (auto& e : v) e = std::clamp(e, -1.0f, 1.0f);
  return x;
}

Shape image_shape(const JointModel& model, int n) {
  const auto& c = model.spec().unet;
  return Shape{n, c.input_channels, c.image_side, c.image_side};
}

}  // namespace

SampleResult sample(const JointModel& model, const NoiseSchedule& sched, const SamplerConfig& config,
                    bool trace) {
  config.validate();
  if (sched.steps() != model.spec().schedule.steps)
    throw ContractViolation("sampler: schedule has " + std::to_string(sched.steps()) +
                            " steps but the model was trained with " +
                            std::to_string(model.spec().schedule.steps));
  Guidance g;
  g.mode = config.mode;
  g.alpha = config.alpha;
  g.scale = config.scale;
  g.opt_steps = config.opt_steps;
  if (config.target_class) {
    g.targets.assign(static_cast<std::size_t>(config.n), *config.target_class);
    check_targets(model, g.targets);
  }

  auto streams = make_streams(config.seed, config.n);
  Tensor x(image_shape(model, config.n));
  fill_noise(x, streams);

  SampleResult out;
  out.images = run_chain(model, sched, x, sched.steps(), streams, g, trace ? &out.trace : nullptr);
  return out;
}

Tensor sample_unconditional(const JointModel& model, const NoiseSchedule& sched, int n,
                            std::uint64_t seed) {
  SamplerConfig c;
  c.n = n;
  c.seed = seed;
  return sample(model, sched, c).images;
}

Tensor sample_classifier_guided(const JointModel& model, const NoiseSchedule& sched, int n, int y,
                                float scale, std::uint64_t seed) {
  SamplerConfig c;
  c.mode = SamplerMode::guided;
  c.n = n;
  c.seed = seed;
  c.target_class = y;
  c.scale = scale;
  return sample(model, sched, c).images;
}

Tensor sample_conditional_optimized(const JointModel& model, const NoiseSchedule& sched, int n,
                                    int y, float alpha, std::uint64_t seed, int opt_steps) {
  SamplerConfig c;
  c.mode = SamplerMode::optimized;
  c.n = n;
  c.seed = seed;
  c.target_class = y;
  c.alpha = alpha;
  c.opt_steps = opt_steps;
  return sample(model, sched, c).images;
}

CounterfactualResult counterfactual(const JointModel& model, const NoiseSchedule& sched,
                                    const Tensor& x0, std::span<const int> targets,
                                    double noise_frac, float alpha, std::uint64_t seed,
                                    int opt_steps, bool trace) {
  if (!(noise_frac >= 0.0 && noise_frac <= 1.0))
    throw ContractViolation("counterfactual: noise_frac must lie in [0, 1], got " +
                            std::to_string(noise_frac));
  if (!(alpha >= 0.0f)) throw ContractViolation("counterfactual: alpha must be >= 0");
  if (opt_steps < 1) throw ContractViolation("counterfactual: opt_steps must be >= 1");
  if (x0.rank() != 4 || x0.shape() != image_shape(model, x0.dim(0)))
    throw ContractViolation("counterfactual: input shape " + shape_str(x0.shape()) +
                            " does not match the model's image shape");
  const int n = x0.dim(0);
  if (static_cast<int>(targets.size()) != n)
    throw ContractViolation("counterfactual: " + std::to_string(targets.size()) + " targets for " +
                            std::to_string(n) + " inputs");
  check_targets(model, targets);

  CounterfactualResult r;
  r.original = x0.detach();
  r.start_timestep = fraction_to_timestep(noise_frac, sched.steps());
  if (r.start_timestep == 0) {
    r.edited = x0.detach();
    r.difference = Tensor(x0.shape());
    return r;
  }

  auto streams = make_streams(seed, n);
  Tensor eps(x0.shape());
  fill_noise(eps, streams);
  const Tensor x_t = forward_noise(x0, r.start_timestep, eps, sched);

  Guidance g;
  g.mode = SamplerMode::optimized;
  g.targets.assign(targets.begin(), targets.end());
  g.alpha = alpha;
  g.opt_steps = opt_steps;
  r.edited = run_chain(model, sched, x_t, r.start_timestep, streams, g, trace ? &r.trace : nullptr);
  r.difference = Tensor(x0.shape());
  auto d = r.difference.data();
  auto e = r.edited.data();
  auto o = r.original.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = e[i] - o[i];
  return r;
}

}  // namespace jointdiff
