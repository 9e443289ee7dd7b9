#pragma once

#include <cstdint>
#include <functional>
#include <span>

#include "jointdiff/tensor.hpp"

namespace jointdiff {

struct GradCheckOptions {
  float eps = 1e-3f;
  /// Coordinates to probe; when the parameters hold fewer, all are probed.
  int max_coords = 64;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  int coords_checked = 0;
};

/// Compares reverse-mode gradients of `loss_fn` against central differences.
///
/// `loss_fn` must be deterministic and return a single-element tensor built from
/// `params`.  Coordinates are drawn round-robin across the parameter list.  The
/// error at each coordinate is |analytic - fd| / max(1, |fd|).
GradCheckReport finite_difference_check(const std::function<Tensor()>& loss_fn,
                                        std::span<Tensor> params, GradCheckOptions opts = {});

}  // namespace jointdiff
