#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "jointdiff/checkpoint.hpp"
#include "jointdiff/classifier_head.hpp"
#include "jointdiff/schedule.hpp"
#include "jointdiff/unet.hpp"

namespace jointdiff {

/// Named parameter groups of the joint model: encoder (nu), decoder (psi), head (omega).
enum class ParamGroup { encoder, decoder, head };

const char* group_name(ParamGroup g);

struct ModelSpec {
  UNetConfig unet;
  HeadConfig head;
  ScheduleParams schedule;

  bool operator==(const ModelSpec&) const = default;
};

/// UNet encoder/decoder plus a classifier head on the pooled encoder features.
///
/// Not copyable: parameters are shared handles.  Duplicate through a
/// checkpoint (from_checkpoint(m.to_checkpoint())).
class JointModel {
 public:
  JointModel(const ModelSpec& spec, std::uint64_t seed);
  JointModel(JointModel&&) = default;
  JointModel& operator=(JointModel&&) = default;
  JointModel(const JointModel&) = delete;
  JointModel& operator=(const JointModel&) = delete;

  static JointModel from_checkpoint(const Checkpoint& ckpt);

  const ModelSpec& spec() const { return spec_; }
  const UNet& unet() const { return unet_; }
  const ClassifierHead& head() const { return head_; }
  int num_classes() const { return spec_.head.num_classes; }

  FeaturePyramid encode(const Tensor& x_t, std::span<const int> timesteps) const {
    return unet_.encode(x_t, timesteps);
  }
  FeaturePyramid encode(const Tensor& x_t, int t) const { return unet_.encode(x_t, t); }
  Tensor decode(const FeaturePyramid& pyramid) const { return unet_.decode(pyramid); }
  /// Log-probabilities of the head on the pyramid's pooled vector.
  Tensor classify(const FeaturePyramid& pyramid) const { return head_.log_probs(pyramid.pooled()); }

  /// Argmax class of clean images (t = 0), evaluated in chunks without recording.
  std::vector<int> predict(const Tensor& images, int chunk = 64) const;

  /// Parameters in registry order: encoder, decoder, head.
  const std::vector<nn::NamedParam>& named_parameters() const { return params_; }
  std::vector<Tensor> parameters() const;
  std::vector<Tensor> parameters(ParamGroup g) const;
  std::vector<Tensor> parameters(std::span<const ParamGroup> groups) const;
  void set_trainable(ParamGroup g, bool trainable);
  void zero_grad();

  Checkpoint to_checkpoint(TrainingMeta meta = {}) const;
  /// Copies tensor values from `ckpt`; every tensor must exist with matching shape.
  void load_parameters(const Checkpoint& ckpt);

 private:
  ModelSpec spec_;
  UNet unet_;
  std::vector<nn::NamedParam> head_params_;
  ClassifierHead head_;
  std::vector<nn::NamedParam> params_;
};

}  // namespace jointdiff
