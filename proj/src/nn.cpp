#include "jointdiff/nn.hpp"

#include <cmath>

#include "jointdiff/ops.hpp"

namespace jointdiff::nn {

Tensor ParamRegistry::add(const std::string& name, Tensor t) {
  const std::string full = group_ + "." + prefix_ + name;
  for (const auto& p : out_)
    if (p.name == full) throw ContractViolation("duplicate parameter name '" + full + "'");
  t.set_name(full);
  t.set_requires_grad(true);
  out_.push_back(NamedParam{group_, full, t});
  return t;
}

Tensor ParamRegistry::uniform(const std::string& name, Shape shape, float bound) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<float> dist(-bound, bound);
  for (float& v : t.data()) v = dist(rng_);
  return add(name, std::move(t));
}

Tensor ParamRegistry::constant(const std::string& name, Shape shape, float value) {
  return add(name, Tensor(std::move(shape), value));
}

Conv2d::Conv2d(ParamRegistry reg, int in, int out, int kernel, int stride_) : stride(stride_) {
  const float bound = 1.0f / std::sqrt(static_cast<float>(in * kernel * kernel));
  weight = reg.uniform("w", Shape{out, in, kernel, kernel}, bound);
  bias = reg.constant("b", Shape{out}, 0.0f);
}

Tensor Conv2d::operator()(const Tensor& x) const { return ops::conv2d(x, weight, bias, stride); }

Linear::Linear(ParamRegistry reg, int in, int out) {
  const float bound = 1.0f / std::sqrt(static_cast<float>(in));
  weight = reg.uniform("w", Shape{out, in}, bound);
  bias = reg.constant("b", Shape{out}, 0.0f);
}

Tensor Linear::operator()(const Tensor& x) const { return ops::dense(x, weight, bias); }

int group_count(int channels, int max_groups) {
  for (int g = std::min(channels, max_groups); g > 1; --g)
    if (channels % g == 0) return g;
  return 1;
}

GroupNorm::GroupNorm(ParamRegistry reg, int channels, int max_groups)
    : groups(group_count(channels, max_groups)) {
  gamma = reg.constant("gamma", Shape{channels}, 1.0f);
  beta = reg.constant("beta", Shape{channels}, 0.0f);
}

Tensor GroupNorm::operator()(const Tensor& x) const {
  return ops::group_norm(x, gamma, beta, groups);
}

ResBlock::ResBlock(ParamRegistry reg, int in, int out, int time_dim)
    : conv1(reg.scoped("conv1"), in, out, 3),
      conv2(reg.scoped("conv2"), out, out, 3),
      norm1(reg.scoped("norm1"), out),
      norm2(reg.scoped("norm2"), out),
      time_proj(reg.scoped("time_proj"), time_dim, out) {
  if (in != out) skip.emplace(reg.scoped("skip"), in, out, 1);
}

Tensor ResBlock::operator()(const Tensor& x, const Tensor& temb) const {
  Tensor h = ops::silu(norm1(conv1(x)));
  h = ops::add(h, time_proj(ops::silu(temb)));
  h = ops::silu(norm2(conv2(h)));
  return ops::add(skip ? (*skip)(x) : x, h);
}

}  // namespace jointdiff::nn
