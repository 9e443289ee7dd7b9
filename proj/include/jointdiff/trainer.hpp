#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "jointdiff/checkpoint.hpp"
#include "jointdiff/dataset.hpp"
#include "jointdiff/model.hpp"

namespace jointdiff {

struct TrainConfig {
  int total_steps = 2000;
  int batch_size = 64;
  float learning_rate = 2e-4f;
  bool noisy_classifier = false;
  float class_weight = 1.0f;
  double labeled_fraction = 1.0;
  /// 0 means "same as batch_size".
  int buffer_capacity = 0;
  std::uint64_t seed = 0;
  int checkpoint_interval = 500;
  int log_interval = 100;
  /// Run the gradient-routing assertions at every logged step.
  bool check_routing = true;

  void validate() const;
  int effective_buffer_capacity() const { return buffer_capacity > 0 ? buffer_capacity : batch_size; }
};

/// Fixed-capacity FIFO of labeled example indices.  Filled one example at a
/// time; drained in full exactly when a classifier loss is computed from it.
class LabelBuffer {
 public:
  struct Entry {
    int index;
    int label;
  };

  explicit LabelBuffer(int capacity);

  /// Appends one example; returns true when the buffer is now full.
  bool push(int index, int label);
  /// Removes and returns every entry in arrival order.
  std::vector<Entry> drain();

  int capacity() const { return capacity_; }
  int size() const { return static_cast<int>(queue_.size()); }
  bool full() const { return size() == capacity_; }
  std::int64_t pushes() const { return pushes_; }
  std::int64_t consumed() const { return consumed_; }

 private:
  int capacity_;
  std::deque<Entry> queue_;
  std::int64_t pushes_ = 0;
  std::int64_t consumed_ = 0;
};

/// Deterministic class-balanced mask keeping exactly floor(fraction * N) labels:
/// classes take turns contributing their next example in a seeded per-class order.
std::vector<bool> balanced_label_mask(const Dataset& data, double fraction, std::uint64_t seed);

/// Optional side outputs of a run.
struct TrainOutputs {
  /// step_XXXXXX.ckpt every checkpoint_interval, final.ckpt, best.ckpt.
  std::optional<std::filesystem::path> checkpoint_dir;
  /// One row per logged step.
  std::optional<std::filesystem::path> metrics_csv;
  /// Labeled data for accuracy-on-holdout logging and best-checkpoint selection.
  const Dataset* holdout = nullptr;
  /// Receives human-readable progress lines.
  std::function<void(const std::string&)> progress;
};

struct LogRow {
  int step = 0;
  double diffusion_term = 0.0;
  double class_term = 0.0;
  double noisy_terms_sum = 0.0;
  double total = 0.0;
  std::optional<double> holdout_accuracy;
};

struct TrainStats {
  int steps = 0;
  std::int64_t diffusion_evaluations = 0;
  std::int64_t class_loss_steps = 0;
  std::int64_t buffer_pushes = 0;
  std::int64_t buffer_consumed = 0;
  std::int64_t buffer_residue = 0;
  std::int64_t routing_checks = 0;
  std::vector<LogRow> log;
};

struct TrainResult {
  Checkpoint final;
  std::optional<Checkpoint> best;
  TrainStats stats;
};

/// Joint diffusion + classification training from a fresh model seeded by config.seed.
TrainResult train_joint(const Dataset& data, const ModelSpec& spec, const TrainConfig& config,
                        const TrainOutputs& outputs = {});

/// Diffusion loss on every batch; labeled examples (balanced mask of
/// config.labeled_fraction) pass through a LabelBuffer and add one classifier
/// loss whenever it fills.
TrainResult train_semi_supervised(const Dataset& data, const ModelSpec& spec,
                                  const TrainConfig& config, const TrainOutputs& outputs = {});

/// Continues a source checkpoint on unlabeled target images with the diffusion
/// loss only; the head is frozen and verified unchanged.
TrainResult adapt_domain(const Checkpoint& source, const Dataset& target, const TrainConfig& config,
                         const TrainOutputs& outputs = {});

/// Encoder + head trained by cross-entropy alone (the decoder is never evaluated).
TrainResult train_standalone_classifier(const Dataset& data, const ModelSpec& spec,
                                        const TrainConfig& config, const TrainOutputs& outputs = {});

}  // namespace jointdiff
