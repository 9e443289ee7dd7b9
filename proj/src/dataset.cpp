#include "jointdiff/dataset.hpp"

#include <numeric>
#include <string>

namespace jointdiff {

int Dataset::size() const {
  const std::size_t per = image_size();
  return per == 0 ? 0 : static_cast<int>(images.size() / per);
}

std::span<const float> Dataset::image(int i) const {
  if (i < 0 || i >= size()) throw ContractViolation("dataset index " + std::to_string(i) + " out of range");
  return std::span<const float>(images).subspan(static_cast<std::size_t>(i) * image_size(), image_size());
}

std::uint8_t Dataset::attribute(int i, int a) const {
  if (a < 0 || a >= num_attributes()) throw ContractViolation("attribute index out of range");
  return attributes.at(static_cast<std::size_t>(i) * num_attributes() + a);
}

int Dataset::attribute_index(const std::string& name) const {
  for (int a = 0; a < num_attributes(); ++a)
    if (attribute_names[static_cast<std::size_t>(a)] == name) return a;
  throw ContractViolation("dataset has no attribute '" + name + "'");
}

Tensor Dataset::batch(std::span<const int> indices) const {
  if (indices.empty()) throw ContractViolation("dataset batch: no indices");
  const std::size_t per = image_size();
  std::vector<float> out;
  out.reserve(indices.size() * per);
  for (int i : indices) {
    auto img = image(i);
    out.insert(out.end(), img.begin(), img.end());
  }
  return Tensor(Shape{static_cast<int>(indices.size()), channels, height, width}, std::move(out));
}

Tensor Dataset::all_images() const {
  return Tensor(Shape{size(), channels, height, width}, images);
}

std::vector<int> Dataset::labels_of(std::span<const int> indices) const {
  if (!labeled()) throw ContractViolation("dataset is unlabeled");
  std::vector<int> out;
  out.reserve(indices.size());
  for (int i : indices) out.push_back(labels.at(static_cast<std::size_t>(i)));
  return out;
}

Dataset Dataset::subset(std::span<const int> indices) const {
  Dataset d;
  d.channels = channels;
  d.height = height;
  d.width = width;
  d.num_classes = num_classes;
  d.attribute_names = attribute_names;
  d.split = split;
  const int na = num_attributes();
  for (int i : indices) {
    auto img = image(i);
    d.images.insert(d.images.end(), img.begin(), img.end());
    if (labeled()) d.labels.push_back(labels[static_cast<std::size_t>(i)]);
    for (int a = 0; a < na; ++a) d.attributes.push_back(attribute(i, a));
  }
  return d;
}

Dataset Dataset::without_labels() const {
  Dataset d = *this;
  d.labels.clear();
  return d;
}

void Dataset::validate() const {
  if (channels < 1 || height < 1 || width < 1)
    throw ContractViolation("dataset: image dimensions must be positive");
  if (images.size() % image_size() != 0)
    throw ContractViolation("dataset: pixel buffer is not a whole number of images");
  const int n = size();
  for (float v : images)
    if (!(v >= -1.0f && v <= 1.0f)) throw ContractViolation("dataset: pixel value outside [-1, 1]");
  if (labeled()) {
    if (static_cast<int>(labels.size()) != n)
      throw ContractViolation("dataset: " + std::to_string(labels.size()) + " labels for " +
                              std::to_string(n) + " images");
    for (int y : labels)
      if (y < 0 || y >= num_classes)
        throw ContractViolation("dataset: label " + std::to_string(y) + " outside [0, " +
                                std::to_string(num_classes) + ")");
  }
  if (!attribute_names.empty() &&
      attributes.size() != static_cast<std::size_t>(n) * attribute_names.size())
    throw ContractViolation("dataset: attribute table size does not match N x A");
}

}  // namespace jointdiff
