#include "jointdiff/classifier_head.hpp"

#include <string>

#include "jointdiff/ops.hpp"

namespace jointdiff {

ClassifierHead::ClassifierHead(nn::ParamRegistry reg, int input_width, const HeadConfig& config)
    : config_(config), input_width_(input_width) {
  if (config.num_classes < 2) throw ContractViolation("classifier head needs at least 2 classes");
  if (config.hidden < 1) throw ContractViolation("classifier head hidden width must be >= 1");
  fc1_ = nn::Linear(reg.scoped("fc1"), input_width, config.hidden);
  fc2_ = nn::Linear(reg.scoped("fc2"), config.hidden, config.num_classes);
}

Tensor ClassifierHead::logits(const Tensor& pooled) const {
  if (!pooled.defined() || pooled.rank() != 2 || pooled.dim(1) != input_width_)
    throw ContractViolation("classifier head expects [B, " + std::to_string(input_width_) +
                            "] input, got " +
                            (pooled.defined() ? shape_str(pooled.shape()) : std::string("<undefined>")));
  return fc2_(ops::leaky_relu(fc1_(pooled), kHeadLeakySlope));
}

Tensor ClassifierHead::log_probs(const Tensor& pooled) const {
  return ops::log_softmax(logits(pooled));
}

std::vector<int> argmax_rows(const Tensor& scores) {
  if (scores.rank() != 2) throw ContractViolation("argmax_rows expects a rank-2 tensor");
  const int rows = scores.dim(0), k = scores.dim(1);
  std::vector<int> out(static_cast<std::size_t>(rows));
  auto v = scores.data();
  for (int r = 0; r < rows; ++r) {
    int best = 0;
    for (int j = 1; j < k; ++j)
      if (v[static_cast<std::size_t>(r) * k + j] > v[static_cast<std::size_t>(r) * k + best]) best = j;
    out[static_cast<std::size_t>(r)] = best;
  }
  return out;
}

}  // namespace jointdiff
