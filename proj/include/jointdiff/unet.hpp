#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "jointdiff/nn.hpp"
#include "jointdiff/tensor.hpp"

namespace jointdiff {

struct UNetConfig {
  int depth = 3;
  int base_channels = 32;
  std::vector<int> channel_multipliers{1, 2, 4};
  int input_channels = 1;
  int image_side = 16;
  int time_embed_dim = 32;

  void validate() const;
  /// Channel width of each encoder level.
  std::vector<int> level_channels() const;
  /// Length of the pooled representation (sum of level widths).
  int pooled_length() const;
  /// Spatial side of level i (0 = full resolution).
  int level_side(int level) const { return image_side >> level; }

  bool operator==(const UNetConfig&) const = default;
};

/// Desk preset: 16x16 grayscale, widths 32/64/128, pooled length 224.
UNetConfig desk_unet_config();

enum class FullSizeFormat { gray28, rgb32, rgb64 };

/// Width assignments whose pooled length equals 1856 / 3712 / 5248 for the
/// three image formats.  Only the arithmetic is exercised; these are far too
/// large to train here.
UNetConfig full_size_config(FullSizeFormat format);

/// Sinusoidal embedding: first dim/2 entries sin(t w_i), last dim/2 cos(t w_i),
/// w_i = 10000^(-i / (dim/2)).
std::vector<float> timestep_embedding(int t, int dim);
/// Row b holds timestep_embedding(timesteps[b], dim).
Tensor timestep_embedding(std::span<const int> timesteps, int dim);

/// Per-channel spatial mean of each level, concatenated level by level.
Tensor pool(std::span<const Tensor> levels);

/// Encoder output: one feature map per level, the timestep context the decoder
/// needs, and the pooled vector.  Immutable; the pooled vector is always
/// recomputed from the levels it was built with.
class FeaturePyramid {
 public:
  FeaturePyramid(std::vector<Tensor> levels, Tensor time_context);

  const std::vector<Tensor>& levels() const { return levels_; }
  const Tensor& level(std::size_t i) const { return levels_.at(i); }
  std::size_t depth() const { return levels_.size(); }
  const Tensor& pooled() const { return pooled_; }
  const Tensor& time_context() const { return time_context_; }
  int batch() const { return levels_.front().dim(0); }

  /// Same timestep context with replaced levels (shapes must match).
  FeaturePyramid with_levels(std::vector<Tensor> levels) const;

 private:
  std::vector<Tensor> levels_;
  Tensor time_context_;
  Tensor pooled_;
};

/// Shared encoder / decoder.  Encoder parameters (including the timestep MLP)
/// form group "encoder", decoder parameters group "decoder".
class UNet {
 public:
  UNet(const UNetConfig& config, std::uint64_t seed);

  const UNetConfig& config() const { return config_; }

  /// x_t [B,C,S,S]; timesteps has one entry per row.
  FeaturePyramid encode(const Tensor& x_t, std::span<const int> timesteps) const;
  FeaturePyramid encode(const Tensor& x_t, int t) const;
  /// Noise prediction with the shape of the encoded image.
  Tensor decode(const FeaturePyramid& pyramid) const;

  std::vector<nn::NamedParam>& params() { return params_; }
  const std::vector<nn::NamedParam>& params() const { return params_; }

 private:
  struct EncoderLevel {
    std::optional<nn::Conv2d> down;
    std::vector<nn::ResBlock> blocks;
  };
  struct DecoderLevel {
    std::optional<nn::Conv2d> up;
    std::vector<nn::ResBlock> blocks;
  };

  UNetConfig config_;
  std::vector<nn::NamedParam> params_;
  nn::Linear time_fc1_, time_fc2_;
  nn::Conv2d conv_in_;
  std::vector<EncoderLevel> enc_;
  std::vector<DecoderLevel> dec_;  // dec_[i] produces level i's resolution
  nn::GroupNorm out_norm_;
  nn::Conv2d conv_out_;
};

}  // namespace jointdiff
