#pragma once

#include <bit>
#include <cstdint>
#include <random>
#include <vector>

#include "jointdiff/model.hpp"
#include "jointdiff/tensor.hpp"

namespace jointdiff::testing {

/// Small enough for finite differences and fast unit tests.
inline ModelSpec tiny_spec(int classes = 3, int side = 8) {
  ModelSpec s;
  s.unet.depth = 3;
  s.unet.base_channels = 4;
  s.unet.channel_multipliers = {1, 2, 2};
  s.unet.input_channels = 1;
  s.unet.image_side = side;
  s.unet.time_embed_dim = 8;
  s.head.num_classes = classes;
  s.head.hidden = 16;
  s.schedule.steps = 20;
  return s;
}

inline Tensor random_tensor(const Shape& shape, std::uint64_t seed, float lo = -1.0f, float hi = 1.0f,
                            bool requires_grad = false) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> d(lo, hi);
  std::vector<float> v(numel(shape));
  for (auto& x : v) x = d(rng);
  return Tensor(shape, std::move(v), requires_grad);
}

inline bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i)
    if (std::bit_cast<std::uint32_t>(x[i]) != std::bit_cast<std::uint32_t>(y[i])) return false;
  return true;
}

}  // namespace jointdiff::testing
