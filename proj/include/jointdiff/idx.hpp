#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "jointdiff/dataset.hpp"

namespace jointdiff {

/// Malformed input file; `offset` is the byte position where parsing failed.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

/// IDX container: bytes 0-1 zero, byte 2 type code (0x08 = unsigned byte),
/// byte 3 dimension count, then big-endian u32 sizes and the payload.
/// Images are N x H x W (one channel) or N x C x H x W; labels are N.
/// Pixels map linearly from [0, 255] to [-1, 1].
Dataset parse_idx(std::span<const std::uint8_t> image_bytes,
                  std::optional<std::span<const std::uint8_t>> label_bytes = std::nullopt,
                  int num_classes = 0);

Dataset load_idx(const std::filesystem::path& images_path,
                 const std::optional<std::filesystem::path>& labels_path = std::nullopt,
                 int num_classes = 0);

/// Quantizes [-1, 1] pixels to bytes and writes an IDX image file (and a label
/// file when the dataset is labeled and `labels_path` is given).
void save_idx(const Dataset& data, const std::filesystem::path& images_path,
              const std::optional<std::filesystem::path>& labels_path = std::nullopt);

std::vector<std::uint8_t> encode_idx_images(const Dataset& data);
std::vector<std::uint8_t> encode_idx_labels(const Dataset& data);

}  // namespace jointdiff
