#pragma once

#include <vector>

#include "jointdiff/nn.hpp"
#include "jointdiff/tensor.hpp"

namespace jointdiff {

struct HeadConfig {
  int num_classes = 3;
  int hidden = 256;

  bool operator==(const HeadConfig&) const = default;
};

inline constexpr float kHeadLeakySlope = 0.01f;

/// Two affine layers with a LeakyReLU between them, on the pooled representation.
class ClassifierHead {
 public:
  ClassifierHead() = default;
  ClassifierHead(nn::ParamRegistry reg, int input_width, const HeadConfig& config);

  int input_width() const { return input_width_; }
  int num_classes() const { return config_.num_classes; }

  /// pooled [B, input_width] -> unnormalized scores [B, K].
  Tensor logits(const Tensor& pooled) const;
  /// pooled [B, input_width] -> log-probabilities [B, K].
  Tensor log_probs(const Tensor& pooled) const;

  const nn::Linear& first() const { return fc1_; }
  const nn::Linear& last() const { return fc2_; }

 private:
  HeadConfig config_;
  int input_width_ = 0;
  nn::Linear fc1_, fc2_;
};

/// Row-wise argmax; ties resolve to the lowest index.
std::vector<int> argmax_rows(const Tensor& scores);

}  // namespace jointdiff
