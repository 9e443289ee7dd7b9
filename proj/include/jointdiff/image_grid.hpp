#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "jointdiff/tensor.hpp"

namespace jointdiff {

/// Value in [-1, 1] to a byte: round((v + 1) * 127.5), clamped to [0, 255].
std::uint8_t to_byte(float v);

/// Tiles images [N, C, H, W] (C = 1 or 3) row-major into a portable pixmap:
/// P5 for one channel, P6 for three, maxval 255.  Tiles are separated by a
/// one-pixel gray (128) line; unused slots in the last row are gray too.
std::vector<std::uint8_t> encode_image_grid(const Tensor& images, int columns);

void write_image_grid(const Tensor& images, int columns, const std::filesystem::path& path);

}  // namespace jointdiff
