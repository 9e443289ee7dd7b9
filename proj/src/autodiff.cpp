#include "jointdiff/autodiff.hpp"

namespace jointdiff {

namespace {
thread_local Tape* g_active = nullptr;
}

Tape* active_tape() { return g_active; }

bool needs_grad(std::initializer_list<const Tensor*> inputs) {
  if (!g_active) return false;
  for (const Tensor* t : inputs)
    if (t && t->defined() && t->requires_grad()) return true;
  return false;
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active) { g_active = &tape; }
TapeScope::~TapeScope() { g_active = previous_; }

NoGradScope::NoGradScope() : previous_(g_active) { g_active = nullptr; }
NoGradScope::~NoGradScope() { g_active = previous_; }

void Tape::record(std::string op, std::function<void()> adjoint) {
  if (consumed_)
    throw StaleTapeError("cannot record '" + op + "' on a consumed tape; call reset() first");
  entries_.push_back(Entry{std::move(op), std::move(adjoint)});
}

void Tape::backward(Tensor loss) {
  if (consumed_)
    throw StaleTapeError("backward called twice on the same tape without a new forward pass");
  if (!loss.defined() || loss.size() != 1)
    throw ContractViolation("backward requires a single-element loss");
  if (entries_.empty()) throw ContractViolation("backward called on an empty tape");

  auto g = loss.ensure_grad();
  g[0] = 1.0f;
  replay_log_.clear();
  replay_log_.reserve(entries_.size());
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    it->adjoint();
    replay_log_.push_back(it->op);
  }
  consumed_ = true;
  // Closures hold intermediate tensors alive; release them now.
  for (auto& e : entries_) e.adjoint = nullptr;
}

void Tape::backward(Tensor loss, std::span<Tensor> params) {
  backward(std::move(loss));
  for (auto& p : params)
    if (p.requires_grad()) p.ensure_grad();
}

void Tape::reset() {
  entries_.clear();
  replay_log_.clear();
  consumed_ = false;
}

std::vector<std::string> Tape::recorded_ops() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.op);
  return out;
}

}  // namespace jointdiff
