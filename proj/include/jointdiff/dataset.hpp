#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "jointdiff/tensor.hpp"

namespace jointdiff {

/// In-memory image set, N x C x H x W floats in [-1, 1], with optional labels
/// and an optional N x A binary attribute table.
struct Dataset {
  int channels = 1;
  int height = 0;
  int width = 0;
  std::vector<float> images;
  std::vector<int> labels;  // empty when unlabeled
  int num_classes = 0;
  std::vector<std::uint8_t> attributes;  // row-major N x A
  std::vector<std::string> attribute_names;
  std::string split;

  int size() const;
  std::size_t image_size() const { return static_cast<std::size_t>(channels) * height * width; }
  bool labeled() const { return !labels.empty(); }
  int num_attributes() const { return static_cast<int>(attribute_names.size()); }

  std::span<const float> image(int i) const;
  std::uint8_t attribute(int i, int a) const;
  int attribute_index(const std::string& name) const;

  /// Stacks the selected images into a [len, C, H, W] tensor.
  Tensor batch(std::span<const int> indices) const;
  Tensor all_images() const;
  std::vector<int> labels_of(std::span<const int> indices) const;

  Dataset subset(std::span<const int> indices) const;
  Dataset without_labels() const;

  /// Throws ContractViolation when any invariant fails.
  void validate() const;
};

}  // namespace jointdiff
