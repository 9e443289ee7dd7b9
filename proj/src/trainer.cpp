#include "jointdiff/trainer.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "jointdiff/autodiff.hpp"
#include "jointdiff/eval_probes.hpp"
#include "jointdiff/losses.hpp"
#include "jointdiff/optim.hpp"

namespace jointdiff {

void TrainConfig::validate() const {
  if (total_steps < 0) throw ContractViolation("train: total_steps must be >= 0");
  if (batch_size < 1) throw ContractViolation("train: batch_size must be >= 1");
  if (!(learning_rate > 0.0f)) throw ContractViolation("train: learning rate must be > 0");
  if (!(class_weight >= 0.0f)) throw ContractViolation("train: class_weight must be >= 0");
  if (!(labeled_fraction > 0.0 && labeled_fraction <= 1.0))
    throw ContractViolation("train: labeled_fraction must lie in (0, 1]");
  if (buffer_capacity < 0) throw ContractViolation("train: buffer_capacity must be >= 0");
  if (checkpoint_interval < 1) throw ContractViolation("train: checkpoint_interval must be >= 1");
  if (log_interval < 1) throw ContractViolation("train: log_interval must be >= 1");
}

LabelBuffer::LabelBuffer(int capacity) : capacity_(capacity) {
  if (capacity < 1) throw ContractViolation("label buffer: capacity must be >= 1");
}

bool LabelBuffer::push(int index, int label) {
  if (full()) throw ContractViolation("label buffer: push into a full buffer");
  queue_.push_back({index, label});
  ++pushes_;
  return full();
}

std::vector<LabelBuffer::Entry> LabelBuffer::drain() {
  std::vector<Entry> out(queue_.begin(), queue_.end());
  consumed_ += static_cast<std::int64_t>(out.size());
  queue_.clear();
  return out;
}

std::vector<bool> balanced_label_mask(const Dataset& data, double fraction, std::uint64_t seed) {
  if (!data.labeled()) throw ContractViolation("label mask: dataset has no labels");
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw ContractViolation("label mask: fraction must lie in (0, 1]");
  const int n = data.size();
  const auto keep = static_cast<int>(std::floor(fraction * n));
  std::vector<std::vector<int>> per_class(static_cast<std::size_t>(data.num_classes));
  for (int i = 0; i < n; ++i) per_class.at(static_cast<std::size_t>(data.labels[i])).push_back(i);
  std::mt19937_64 rng(seed);
  for (auto& c : per_class) std::shuffle(c.begin(), c.end(), rng);

  std::vector<bool> mask(static_cast<std::size_t>(n), false);
  std::vector<std::size_t> next(per_class.size(), 0);
  int kept = 0;
  while (kept < keep) {
    for (std::size_t c = 0; c < per_class.size() && kept < keep; ++c) {
      if (next[c] >= per_class[c].size()) continue;
      mask[static_cast<std::size_t>(per_class[c][next[c]++])] = true;
      ++kept;
    }
  }
  return mask;
}

namespace {

std::mt19937_64 derived_rng(std::uint64_t seed, std::uint32_t purpose) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), purpose};
  return std::mt19937_64(seq);
}

enum Purpose : std::uint32_t { kDataOrder = 1, kLoss = 2, kMask = 3, kRouting = 4 };

// Epoch-wise shuffled pass over a fixed index pool.
class BatchSampler {
 public:
  BatchSampler(std::vector<int> pool, std::uint64_t seed)
      : order_(std::move(pool)), rng_(derived_rng(seed, kDataOrder)) {
    pos_ = order_.size();
  }

  std::vector<int> next(int size) {
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(size));
    while (static_cast<int>(out.size()) < size) {
      if (pos_ == order_.size()) {
        std::shuffle(order_.begin(), order_.end(), rng_);
        pos_ = 0;
      }
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  std::vector<int> order_;
  std::mt19937_64 rng_;
  std::size_t pos_;
};

std::vector<int> all_indices(int n) {
  std::vector<int> v(static_cast<std::size_t>(n));
  std::iota(v.begin(), v.end(), 0);
  return v;
}

void require_nonempty(const Dataset& data, std::string_view who) {
  if (data.size() == 0) throw ContractViolation(std::string(who) + ": empty dataset");
  data.validate();
}

void require_labels(const Dataset& data, const JointModel& model, std::string_view who) {
  if (!data.labeled()) throw ContractViolation(std::string(who) + ": dataset has no labels");
  if (data.num_classes > model.num_classes())
    throw ContractViolation(std::string(who) + ": dataset has " + std::to_string(data.num_classes) +
                            " classes but the head predicts " + std::to_string(model.num_classes()));
}

void require_image_shape(const Dataset& data, const ModelSpec& spec, std::string_view who) {
  if (data.channels != spec.unet.input_channels || data.height != spec.unet.image_side ||
      data.width != spec.unet.image_side)
    throw ContractViolation(std::string(who) + ": images are " + std::to_string(data.channels) + "x" +
                            std::to_string(data.height) + "x" + std::to_string(data.width) +
                            " but the model expects " + std::to_string(spec.unet.input_channels) + "x" +
                            std::to_string(spec.unet.image_side) + "x" +
                            std::to_string(spec.unet.image_side));
}

bool all_zero(std::span<const float> g) {
  return std::all_of(g.begin(), g.end(), [](float v) { return v == 0.0f; });
}

bool any_nonzero(const std::vector<Tensor>& ts) {
  for (const auto& t : ts)
    if (t.has_grad() && !all_zero(t.grad())) return true;
  return false;
}

bool none_nonzero(const std::vector<Tensor>& ts) {
  for (const auto& t : ts)
    if (t.has_grad() && !all_zero(t.grad())) return false;
  return true;
}

// The class term must not reach the decoder and the diffusion term must not
// reach the head; both must reach the encoder.
void check_gradient_routing(JointModel& model, const Dataset& data, const NoiseSchedule& sched,
                            std::uint64_t seed, int step) {
  const int n = std::min(data.size(), 4);
  const auto idx = all_indices(n);
  const Tensor x = data.batch(idx);
  const auto labels = data.labels_of(idx);
  auto params = model.parameters();
  const auto enc = model.parameters(ParamGroup::encoder);
  const auto dec = model.parameters(ParamGroup::decoder);
  const auto head = model.parameters(ParamGroup::head);
  model.zero_grad();
  {
    Tape tape;
    Tensor loss;
    {
      TapeScope scope(tape);
      loss = classification_loss(model, x, labels);
    }
    tape.backward(loss, params);
  }
  if (!none_nonzero(dec))
    throw std::logic_error("gradient routing violated at step " + std::to_string(step) +
                           ": class term reached the decoder");
  if (!any_nonzero(enc))
    throw std::logic_error("gradient routing violated at step " + std::to_string(step) +
                           ": class term did not reach the encoder");
  model.zero_grad();
  {
    auto rng = derived_rng(seed + static_cast<std::uint64_t>(step), kRouting);
    Tape tape;
    Tensor loss;
    {
      TapeScope scope(tape);
      loss = diffusion_loss(model, x, sched, rng);
    }
    tape.backward(loss, params);
  }
  if (!none_nonzero(head))
    throw std::logic_error("gradient routing violated at step " + std::to_string(step) +
                           ": diffusion term reached the head");
  if (!any_nonzero(enc))
    throw std::logic_error("gradient routing violated at step " + std::to_string(step) +
                           ": diffusion term did not reach the encoder");
  model.zero_grad();
}

class MetricsWriter {
 public:
  explicit MetricsWriter(const std::optional<std::filesystem::path>& path) {
    if (!path) return;
    if (path->has_parent_path()) std::filesystem::create_directories(path->parent_path());
    out_.open(*path, std::ios::trunc);
    if (!out_) throw std::runtime_error("cannot open " + path->string() + " for writing");
    out_ << "step,diffusion_term,class_term,noisy_terms_sum,total,holdout_accuracy\n";
  }

  void write(const LogRow& r) {
    if (!out_.is_open()) return;
    char buf[256];
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%.9g,", r.step, r.diffusion_term, r.class_term,
                  r.noisy_terms_sum, r.total);
    out_ << buf;
    if (r.holdout_accuracy) {
      std::snprintf(buf, sizeof buf, "%.6f", *r.holdout_accuracy);
      out_ << buf;
    }
    out_ << '\n';
    out_.flush();
  }

 private:
  std::ofstream out_;
};

std::string step_name(int step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step_%06d.ckpt", step);
  return buf;
}

struct LoopSpec {
  JointModel* model = nullptr;
  std::vector<Tensor> params;
  TrainConfig config;
  TrainingMeta meta;
  // Builds the objective of one step on the active tape.
  std::function<JointLoss(int step)> objective;
  // Optional per-log-step invariant check.
  std::function<void(int step)> check;
};

TrainResult run_loop(LoopSpec spec, const TrainOutputs& outputs, TrainStats stats) {
  JointModel& model = *spec.model;
  const TrainConfig& cfg = spec.config;
  Adam opt(spec.params, AdamConfig{cfg.learning_rate});
  MetricsWriter metrics(outputs.metrics_csv);
  if (outputs.checkpoint_dir) std::filesystem::create_directories(*outputs.checkpoint_dir);

  TrainResult result;
  double best_acc = -1.0;
  LogRow last;
  for (int step = 0; step < cfg.total_steps; ++step) {
    const bool log_step = step % cfg.log_interval == 0 || step + 1 == cfg.total_steps;
    if (log_step && cfg.check_routing && spec.check) {
      spec.check(step);
      ++stats.routing_checks;
    }
    Tape tape;
    JointLoss loss;
    {
      TapeScope scope(tape);
      loss = spec.objective(step);
    }
    tape.backward(loss.total, spec.params);
    opt.step();
    stats.steps = step + 1;

    last.step = step;
    last.diffusion_term = loss.breakdown.diffusion_term;
    last.class_term = loss.breakdown.class_term;
    last.noisy_terms_sum = loss.breakdown.noisy_sum();
    last.total = loss.breakdown.total;
    last.holdout_accuracy.reset();
    if (log_step) {
      if (outputs.holdout) {
        const double acc = accuracy(model, *outputs.holdout);
        last.holdout_accuracy = acc;
        if (acc > best_acc) {
          best_acc = acc;
          TrainingMeta m = spec.meta;
          m.step = static_cast<std::uint64_t>(step + 1);
          m.metrics["holdout_accuracy"] = acc;
          result.best = model.to_checkpoint(m);
        }
      }
      stats.log.push_back(last);
      metrics.write(last);
      if (outputs.progress) {
        char buf[200];
        std::snprintf(buf, sizeof buf, "step %d/%d  diffusion %.4f  class %.4f  total %.4f", step + 1,
                      cfg.total_steps, last.diffusion_term, last.class_term, last.total);
        std::string line = buf;
        if (last.holdout_accuracy) {
          std::snprintf(buf, sizeof buf, "  holdout acc %.4f", *last.holdout_accuracy);
          line += buf;
        }
        outputs.progress(line);
      }
    }
    if (outputs.checkpoint_dir && (step + 1) % cfg.checkpoint_interval == 0) {
      TrainingMeta m = spec.meta;
      m.step = static_cast<std::uint64_t>(step + 1);
      save_checkpoint(model.to_checkpoint(m), *outputs.checkpoint_dir / step_name(step + 1));
    }
  }

  TrainingMeta m = spec.meta;
  m.step += static_cast<std::uint64_t>(cfg.total_steps);
  if (!stats.log.empty()) {
    m.metrics["diffusion_term"] = last.diffusion_term;
    m.metrics["class_term"] = last.class_term;
    m.metrics["total"] = last.total;
  }
  if (outputs.holdout && cfg.total_steps > 0) m.metrics["holdout_accuracy"] = *stats.log.back().holdout_accuracy;
  result.final = model.to_checkpoint(m);
  if (outputs.checkpoint_dir) {
    save_checkpoint(result.final, *outputs.checkpoint_dir / "final.ckpt");
    if (result.best) save_checkpoint(*result.best, *outputs.checkpoint_dir / "best.ckpt");
  }
  result.stats = std::move(stats);
  return result;
}

TrainingMeta fresh_meta(const TrainConfig& cfg) {
  TrainingMeta m;
  m.seed = cfg.seed;
  return m;
}

}  // namespace

TrainResult train_joint(const Dataset& data, const ModelSpec& spec, const TrainConfig& config,
                        const TrainOutputs& outputs) {
  config.validate();
  require_nonempty(data, "train_joint");
  require_image_shape(data, spec, "train_joint");
  JointModel model(spec, config.seed);
  require_labels(data, model, "train_joint");
  const NoiseSchedule sched = NoiseSchedule::from_params(spec.schedule);

  BatchSampler sampler(all_indices(data.size()), config.seed);
  auto rng = derived_rng(config.seed, kLoss);
  TrainStats stats;
  const JointLossConfig lc{config.class_weight, config.noisy_classifier};

  LoopSpec loop;
  loop.model = &model;
  loop.params = model.parameters();
  loop.config = config;
  loop.meta = fresh_meta(config);
  loop.objective = [&](int) {
    const auto idx = sampler.next(config.batch_size);
    const auto labels = data.labels_of(idx);
    ++stats.diffusion_evaluations;
    ++stats.class_loss_steps;
    return joint_loss(model, data.batch(idx), std::span<const int>(labels), sched, lc, rng);
  };
  loop.check = [&](int step) { check_gradient_routing(model, data, sched, config.seed, step); };
  TrainResult r = run_loop(std::move(loop), outputs, {});
  r.stats.diffusion_evaluations = stats.diffusion_evaluations;
  r.stats.class_loss_steps = stats.class_loss_steps;
  return r;
}

TrainResult train_semi_supervised(const Dataset& data, const ModelSpec& spec, const TrainConfig& config,
                                  const TrainOutputs& outputs) {
  config.validate();
  require_nonempty(data, "train_semi_supervised");
  require_image_shape(data, spec, "train_semi_supervised");
  JointModel model(spec, config.seed);
  require_labels(data, model, "train_semi_supervised");
  const auto mask = balanced_label_mask(data, config.labeled_fraction, config.seed);
  if (std::none_of(mask.begin(), mask.end(), [](bool b) { return b; }))
    throw ContractViolation("train_semi_supervised: labeled_fraction " +
                            std::to_string(config.labeled_fraction) + " keeps zero labels out of " +
                            std::to_string(data.size()));
  const NoiseSchedule sched = NoiseSchedule::from_params(spec.schedule);

  BatchSampler sampler(all_indices(data.size()), config.seed);
  auto rng = derived_rng(config.seed, kLoss);
  LabelBuffer buffer(config.effective_buffer_capacity());
  TrainStats stats;
  const JointLossConfig lc{config.class_weight, config.noisy_classifier};

  LoopSpec loop;
  loop.model = &model;
  loop.params = model.parameters();
  loop.config = config;
  loop.meta = fresh_meta(config);
  loop.objective = [&](int) {
    const auto idx = sampler.next(config.batch_size);
    JointLoss acc;
    acc.total = diffusion_loss(model, data.batch(idx), sched, rng);
    acc.breakdown.diffusion_term = acc.total.item();
    acc.breakdown.total = acc.breakdown.diffusion_term;
    ++stats.diffusion_evaluations;
    bool fired = false;
    for (int i : idx) {
      if (!mask[static_cast<std::size_t>(i)]) continue;
      if (buffer.push(i, data.labels[static_cast<std::size_t>(i)])) {
        const auto entries = buffer.drain();
        std::vector<int> bi, by;
        for (const auto& e : entries) {
          bi.push_back(e.index);
          by.push_back(e.label);
        }
        add_classification_terms(acc, model, data.batch(bi), by, sched, lc, rng);
        fired = true;
      }
    }
    if (fired) ++stats.class_loss_steps;
    return acc;
  };
  loop.check = [&](int step) { check_gradient_routing(model, data, sched, config.seed, step); };
  TrainResult r = run_loop(std::move(loop), outputs, {});
  r.stats.diffusion_evaluations = stats.diffusion_evaluations;
  r.stats.class_loss_steps = stats.class_loss_steps;
  r.stats.buffer_pushes = buffer.pushes();
  r.stats.buffer_consumed = buffer.consumed();
  r.stats.buffer_residue = buffer.size();
  if (r.stats.buffer_consumed != r.stats.buffer_pushes - r.stats.buffer_residue)
    throw std::logic_error("label buffer lost or duplicated examples");
  return r;
}

TrainResult adapt_domain(const Checkpoint& source, const Dataset& target, const TrainConfig& config,
                         const TrainOutputs& outputs) {
  config.validate();
  require_nonempty(target, "adapt_domain");
  JointModel model = JointModel::from_checkpoint(source);
  require_image_shape(target, model.spec(), "adapt_domain");
  if (config.total_steps == 0) {
    TrainResult r;
    r.final = source;
    return r;
  }
  const NoiseSchedule sched = NoiseSchedule::from_params(model.spec().schedule);

  std::vector<std::vector<float>> head_before;
  for (const auto& t : model.parameters(ParamGroup::head))
    head_before.emplace_back(t.data().begin(), t.data().end());
  model.set_trainable(ParamGroup::head, false);
  const ParamGroup trained[] = {ParamGroup::encoder, ParamGroup::decoder};

  BatchSampler sampler(all_indices(target.size()), config.seed);
  auto rng = derived_rng(config.seed, kLoss);
  std::int64_t diffusion_evaluations = 0;

  LoopSpec loop;
  loop.model = &model;
  loop.params = model.parameters(trained);
  loop.config = config;
  loop.meta = source.meta;
  loop.meta.seed = config.seed;
  loop.objective = [&](int) {
    const auto idx = sampler.next(config.batch_size);
    JointLoss acc;
    acc.total = diffusion_loss(model, target.batch(idx), sched, rng);
    acc.breakdown.diffusion_term = acc.breakdown.total = acc.total.item();
    ++diffusion_evaluations;
    return acc;
  };
  TrainResult r = run_loop(std::move(loop), outputs, {});
  model.set_trainable(ParamGroup::head, true);

  const auto head_after = model.parameters(ParamGroup::head);
  for (std::size_t i = 0; i < head_after.size(); ++i) {
    auto v = head_after[i].data();
    if (!std::equal(v.begin(), v.end(), head_before[i].begin(), head_before[i].end()))
      throw std::logic_error("adapt_domain: head tensor " + head_after[i].name() + " changed");
  }
  r.stats.diffusion_evaluations = diffusion_evaluations;
  return r;
}

TrainResult train_standalone_classifier(const Dataset& data, const ModelSpec& spec,
                                        const TrainConfig& config, const TrainOutputs& outputs) {
  config.validate();
  require_nonempty(data, "train_standalone_classifier");
  require_image_shape(data, spec, "train_standalone_classifier");
  JointModel model(spec, config.seed);
  require_labels(data, model, "train_standalone_classifier");

  BatchSampler sampler(all_indices(data.size()), config.seed);
  const ParamGroup trained[] = {ParamGroup::encoder, ParamGroup::head};
  TrainStats stats;

  LoopSpec loop;
  loop.model = &model;
  loop.params = model.parameters(trained);
  loop.config = config;
  loop.meta = fresh_meta(config);
  loop.objective = [&](int) {
    const auto idx = sampler.next(config.batch_size);
    const auto labels = data.labels_of(idx);
    JointLoss acc;
    acc.total = classification_loss(model, data.batch(idx), labels);
    acc.breakdown.class_term = acc.breakdown.total = acc.total.item();
    ++stats.class_loss_steps;
    return acc;
  };
  TrainResult r = run_loop(std::move(loop), outputs, {});
  r.stats.class_loss_steps = stats.class_loss_steps;
  r.stats.diffusion_evaluations = 0;
  return r;
}

}  // namespace jointdiff
