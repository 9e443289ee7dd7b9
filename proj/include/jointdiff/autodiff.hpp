#pragma once

#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "jointdiff/tensor.hpp"

namespace jointdiff {

/// Raised when backward() is replayed on a tape that was already consumed.
class StaleTapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Ordered record of differentiable operations.
///
/// Operations are recorded only while a tape is active (see TapeScope) and at
/// least one input requires a gradient.  backward() replays the adjoints in
/// exact reverse order of recording and may be called once per forward pass.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::string op, std::function<void()> adjoint);

  /// Seeds d(loss)/d(loss) = 1 and replays every recorded adjoint.
  void backward(Tensor loss);

  /// As backward(loss), then gives every tensor in `params` a gradient buffer
  /// (zero for parameters the loss does not reach).
  void backward(Tensor loss, std::span<Tensor> params);

  /// Drops all records so the tape can be reused for a fresh forward pass.
  void reset();

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  bool consumed() const { return consumed_; }

  /// Operation names in recording order.
  std::vector<std::string> recorded_ops() const;
  /// Operation names in the order the last backward() visited them.
  const std::vector<std::string>& replay_log() const { return replay_log_; }

 private:
  struct Entry {
    std::string op;
    std::function<void()> adjoint;
  };
  std::vector<Entry> entries_;
  std::vector<std::string> replay_log_;
  bool consumed_ = false;
};

/// Makes `tape` the recording target for operations on this thread until destruction.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

/// Suspends recording on this thread (inference inside a recording region).
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

/// True when an op over `inputs` must be recorded.
bool needs_grad(std::initializer_list<const Tensor*> inputs);

}  // namespace jointdiff
