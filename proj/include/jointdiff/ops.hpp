#pragma once

#include <span>
#include <string_view>

#include "jointdiff/autodiff.hpp"
#include "jointdiff/tensor.hpp"

/// Differentiable primitives.
///
/// Every op validates its shape rule (ContractViolation naming both shapes),
/// checks the output for non-finite values (NumericError naming the op) and,
/// when a tape is active and an input requires a gradient, records its adjoint.
/// Layout is NCHW for images and [batch, features] for vectors.
namespace jointdiff::ops {

/// x [B,Ci,H,W], w [Co,Ci,k,k], b [Co] or undefined -> [B,Co,Ho,Wo].
/// padding < 0 means k/2 ("same" for odd k at stride 1).
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride = 1, int padding = -1);

/// [B,C,H,W] -> [B,C,2H,2W], nearest neighbour.
Tensor upsample_nearest2x(const Tensor& x);

/// x [B,in], w [out,in], b [out] or undefined -> [B,out].
Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b);

/// Same shape, or a [B,C,H,W] + b [B,C] broadcast over the spatial axes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float s);

/// Concatenate along axis 1; all other axes must agree (rank 2 or 4).
Tensor concat_channels(std::span<const Tensor> parts);
Tensor concat_channels(const Tensor& a, const Tensor& b);

Tensor leaky_relu(const Tensor& x, float slope = 0.01f);
Tensor silu(const Tensor& x);

/// x [B,C,H,W] or [B,C]; gamma, beta [C]; C divisible by groups.
Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, int groups,
                  float eps = 1e-5f);

/// [B,C,H,W] -> [B,C], mean over the spatial positions of each channel.
Tensor global_avg_pool(const Tensor& x);

/// Row-wise log-softmax of [B,K].
Tensor log_softmax(const Tensor& x);

/// Sum / mean of all elements -> shape [1].
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// Mean over rows of -logp[b, labels[b]] -> shape [1].
Tensor nll(const Tensor& logp, std::span<const int> labels);

enum class OpKind {
  conv2d,
  upsample_nearest,
  dense,
  add,
  concat_channels,
  leaky_relu,
  silu,
  group_norm,
  global_avg_pool,
  log_softmax,
  elementwise_mul,
  sum,
  mean,
};

struct OpAttrs {
  int stride = 1;
  int padding = -1;
  float slope = 0.01f;
  int groups = 8;
  float eps = 1e-5f;
};

std::string_view op_name(OpKind kind);

/// Uniform entry point over the primitive set.  Input arity per kind:
/// conv2d/dense/group_norm take (x, weight, bias); add/elementwise_mul take two;
/// concat_channels takes two or more; the rest take one.
Tensor forward_op(OpKind kind, std::span<const Tensor> inputs, const OpAttrs& attrs = {});

}  // namespace jointdiff::ops
