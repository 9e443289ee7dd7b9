#pragma once

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "jointdiff/tensor.hpp"

namespace jointdiff::nn {

/// Parameters are registered with their group (encoder / decoder / head) and a
/// dotted name; the registry order is the checkpoint order.
struct NamedParam {
  std::string group;
  std::string name;
  Tensor tensor;
};

class ParamRegistry {
 public:
  ParamRegistry(std::vector<NamedParam>& out, std::string group, std::mt19937_64& rng)
      : out_(out), group_(std::move(group)), rng_(rng) {}

  ParamRegistry scoped(const std::string& prefix) const {
    ParamRegistry r(out_, group_, rng_);
    r.prefix_ = prefix_ + prefix + ".";
    return r;
  }

  Tensor uniform(const std::string& name, Shape shape, float bound);
  Tensor constant(const std::string& name, Shape shape, float value);

 private:
  Tensor add(const std::string& name, Tensor t);

  std::vector<NamedParam>& out_;
  std::string group_;
  std::mt19937_64& rng_;
  std::string prefix_;
};

struct Conv2d {
  Tensor weight, bias;
  int stride = 1;

  Conv2d() = default;
  Conv2d(ParamRegistry reg, int in, int out, int kernel, int stride = 1);
  Tensor operator()(const Tensor& x) const;
};

struct Linear {
  Tensor weight, bias;

  Linear() = default;
  Linear(ParamRegistry reg, int in, int out);
  Tensor operator()(const Tensor& x) const;
};

struct GroupNorm {
  Tensor gamma, beta;
  int groups = 1;

  GroupNorm() = default;
  GroupNorm(ParamRegistry reg, int channels, int max_groups = 8);
  Tensor operator()(const Tensor& x) const;
};

/// Largest divisor of `channels` not exceeding `max_groups`.
int group_count(int channels, int max_groups = 8);

/// conv-norm-SiLU twice with the projected timestep embedding added after the
/// first stage; 1x1 projection on the residual path when widths differ.
struct ResBlock {
  Conv2d conv1, conv2;
  GroupNorm norm1, norm2;
  Linear time_proj;
  std::optional<Conv2d> skip;

  ResBlock() = default;
  ResBlock(ParamRegistry reg, int in, int out, int time_dim);
  /// x [B,in,H,W], temb [B,time_dim] -> [B,out,H,W].
  Tensor operator()(const Tensor& x, const Tensor& temb) const;
};

}  // namespace jointdiff::nn
